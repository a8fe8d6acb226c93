"""Market-impact models and the effective nonlinearity F of the pricing PDE.

Every model is expressed through the gamma in currency ``gamma_c = S^2 u_SS``
of the option sold. The pricing equation is

    u_t + 0.5 * sigma^2 * F(gamma_c) = 0,    F(gamma_c) = gamma_c * mu(gamma_c),

where mu is the amplification of a spot move by the hedger's own re-hedging.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import InvalidMu, NoFiniteRoot, Singular

#: Guard band below the linear pole; also the amplification ceiling 1/DELTA_CAP
#: used by the intensity root-finder and by generic mu curves.
DELTA_CAP = 1e-6
DEFAULT_CAP = 1e3  # epsilon^-1 with epsilon = 1e-3

_BRACKET_GROWTH = 1.5
_BISECT_ITERS = 80


# --------------------------------------------------------------------------- #
# lambda curves (impact as a function of trading intensity)
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ConstantLambda:
    lambda0: float

    def __post_init__(self):
        if not self.lambda0 >= 0.0:
            raise ValueError("lambda0 must be >= 0")

    def __call__(self, intensity):
        return np.full_like(np.asarray(intensity, dtype=float), self.lambda0)

    def to_dict(self):
        return {"form": "constant", "lambda0": self.lambda0}


@dataclass(frozen=True)
class PowerLawLambda:
    """lambda(I) = lambda0 * (|I| / scale) ** exponent."""

    lambda0: float
    exponent: float
    scale: float = 1.0

    def __post_init__(self):
        if not self.lambda0 >= 0.0:
            raise ValueError("lambda0 must be >= 0")
        if not self.exponent > 0.0:
            raise ValueError("exponent must be > 0")
        if not self.scale > 0.0:
            raise ValueError("scale must be > 0")

    def __call__(self, intensity):
        i = np.abs(np.asarray(intensity, dtype=float))
        return self.lambda0 * (i / self.scale) ** self.exponent

    def to_dict(self):
        return {"form": "power_law", "lambda0": self.lambda0,
                "exponent": self.exponent, "scale": self.scale}


@dataclass(frozen=True, eq=False)
class TableLambda:
    """Piecewise-linear lambda over signed intensity, constant beyond the table.

    Abscissae are signed (sign of gamma_c) so that curves tabulated from an
    asymmetric amplification stay single valued.
    """

    intensities: tuple
    lambdas: tuple

    def __post_init__(self):
        i = np.asarray(self.intensities, dtype=float)
        lam = np.asarray(self.lambdas, dtype=float)
        if i.ndim != 1 or i.shape != lam.shape or i.size < 1:
            raise ValueError("table needs matching 1-D intensity and lambda arrays")
        if np.any(np.diff(i) <= 0):
            raise ValueError("table intensities must be strictly increasing")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("table lambdas must be finite and >= 0")
        object.__setattr__(self, "intensities", tuple(float(v) for v in i))
        object.__setattr__(self, "lambdas", tuple(float(v) for v in lam))

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def __call__(self, intensity):
        return np.interp(np.asarray(intensity, dtype=float),
                         self.intensities, self.lambdas)

    def __eq__(self, other):
        return (isinstance(other, TableLambda) and self.intensities == other.intensities
                and self.lambdas == other.lambdas)

    def __hash__(self):
        return hash((self.intensities, self.lambdas))

    def to_dict(self):
        return {"form": "table",
                "points": [[i, lam] for i, lam in zip(self.intensities, self.lambdas)]}


LambdaCurve = Union[ConstantLambda, PowerLawLambda, TableLambda]


# --------------------------------------------------------------------------- #
# impact specifications
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class NoImpact:
    upper_bound = None

    def to_dict(self):
        return {"model": "none"}


@dataclass(frozen=True)
class LinearImpact:
    lam: float

    def __post_init__(self):
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise ValueError("linear impact lambda must be finite and >= 0")

    @property
    def upper_bound(self):
        return 1.0 / self.lam if self.lam > 0 else None

    def to_dict(self):
        return {"model": "linear", "lambda": self.lam}


@dataclass(frozen=True)
class IntensityImpact:
    curve: LambdaCurve
    # no closed-form gamma bound for a general curve
    upper_bound = None

    def to_dict(self):
        return {"model": "intensity", "curve": self.curve.to_dict()}


@dataclass(frozen=True)
class GammaMaxImpact:
    capital_lambda: float

    def __post_init__(self):
        if not self.capital_lambda > 0.0:
            raise ValueError("Gamma-max Lambda must be > 0")

    @property
    def upper_bound(self):
        return self.capital_lambda if math.isfinite(self.capital_lambda) else None

    def to_dict(self):
        return {"model": "gamma_max", "Lambda": self.capital_lambda}


ImpactSpec = Union[NoImpact, LinearImpact, IntensityImpact, GammaMaxImpact]


def mu_linear(gamma_c: float, lam: float) -> float:
    """Amplification 1 / (1 - lam * gamma_c) of the linear impact model."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    d = 1.0 - lam * gamma_c
    if d <= 0.0:
        raise Singular(f"lambda * gamma_c = {lam * gamma_c:g} >= 1")
    return 1.0 / d


# --------------------------------------------------------------------------- #
# intensity-dependent impact: 1/F + lambda(sigma F) = 1/gamma_c
# --------------------------------------------------------------------------- #

def _solve_multiplier(gamma, curve, sigma, mu_max):
    """Vectorised root of the intensity relation, as m = F / gamma.

    Works on r(m) = 1/m + gamma * lambda(sigma * gamma * m) - 1 (the relation
    multiplied through by gamma). Positive gamma: r(1) >= 0, scan m upward from
    1 to mu_max for the first r < 0. Negative gamma: r -> +inf as m -> 0 and
    r(1) <= 0, scan m upward from 1/mu_max for the first r <= 0, i.e. the
    smallest |F|. Returns (m, found).
    """
    gamma = np.asarray(gamma, dtype=float)
    m = np.ones_like(gamma)
    found = np.ones(gamma.shape, dtype=bool)
    nz = gamma != 0.0
    if not np.any(nz):
        return m, found
    g = gamma[nz]
    gcol = g[:, None]

    n_scan = int(math.ceil(math.log(mu_max) / math.log(_BRACKET_GROWTH)))
    up = np.minimum(_BRACKET_GROWTH ** np.arange(n_scan + 1, dtype=float), mu_max)
    down = 1.0 / up[::-1]

    pos = g > 0
    scan = np.where(pos[:, None], up[None, :], down[None, :])
    r = 1.0 / scan + gcol * curve(sigma * gcol * scan) - 1.0
    hit = np.where(pos[:, None], r < 0.0, r <= 0.0)
    first = np.argmax(hit, axis=1)
    ok = hit.any(axis=1) & (first > 0)

    res = np.full(g.shape, np.nan)
    if np.any(ok):
        rows = np.flatnonzero(ok)
        a = scan[rows, first[ok] - 1]
        b = scan[rows, first[ok]]
        ga = g[ok]

        def resid(mult):
            return 1.0 / mult + ga * curve(sigma * ga * mult) - 1.0

        sign_a = np.sign(resid(a))
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (a + b)
            same = np.sign(resid(mid)) == sign_a
            a = np.where(same, mid, a)
            b = np.where(same, b, mid)
        res[ok] = np.where(np.abs(resid(a)) <= np.abs(resid(b)), a, b)
    m[nz] = res
    found[nz] = ok
    return m, found


def solve_F_intensity(gamma_c: float, curve: LambdaCurve, sigma: float,
                      mu_max: float = 1.0 / DELTA_CAP) -> float:
    """Root F of ``1/F + lambda(sigma F) = 1/gamma_c`` on the branch through F(0) = 0.

    Raises NoFiniteRoot when no root exists with F / gamma_c <= mu_max.
    """
    if gamma_c == 0.0:
        return 0.0
    m, found = _solve_multiplier(np.array([gamma_c]), curve, sigma, mu_max)
    if not found[0]:
        raise NoFiniteRoot(f"no finite root for gamma_c={gamma_c:g}")
    return float(gamma_c * m[0])


def intensity_residual(F, gamma_c, curve, sigma):
    """Relative residual |gamma_c| * |1/F + lambda(sigma F) - 1/gamma_c|."""
    F = np.asarray(F, dtype=float)
    gamma_c = np.asarray(gamma_c, dtype=float)
    return np.abs(gamma_c / F + gamma_c * curve(sigma * F) - 1.0)


# --------------------------------------------------------------------------- #
# effective nonlinearity
# --------------------------------------------------------------------------- #

class _Nonlinearity:
    """Shared vector interface used by the solver and the simulator.

    Subclasses implement ``_mu(gamma) -> (mu, capped, floor)`` on arrays where
    ``floor`` marks Theta-clamped nodes (F = -Lambda, mu = Lambda / |gamma|).
    """

    cap: float | None
    upper_bound: float | None = None

    def _mu(self, gamma):  # pragma: no cover - abstract
        raise NotImplementedError

    def capped(self, gamma_c):
        return self._mu(np.atleast_1d(np.asarray(gamma_c, dtype=float)))[1].reshape(
            np.shape(gamma_c))

    def F(self, gamma_c):
        """Effective diffusion; the cap value (or +inf without a cap) where capped."""
        g = np.asarray(gamma_c, dtype=float)
        flat = np.atleast_1d(g)
        mu, capped, _ = self._mu(flat)
        out = flat * mu
        out = np.where(capped, np.inf if self.cap is None else self.cap, out)
        return out.reshape(g.shape) if g.ndim else float(out[0])

    def mu(self, gamma_c):
        """F / gamma_c with mu(0) = 1; +inf where capped and no cap is set."""
        g = np.asarray(gamma_c, dtype=float)
        flat = np.atleast_1d(g)
        mu, capped, _ = self._mu(flat)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.cap is None:
                capped_mu = np.inf
            else:
                capped_mu = self.cap / np.where(flat == 0.0, 1.0, flat)
        out = np.where(capped, capped_mu, mu)
        return out.reshape(g.shape) if g.ndim else float(out[0])

    def row_coefficients(self, gamma_bar):
        """Linearisation used by the lagged-gamma scheme: F ~ coef * gamma + source."""
        if self.cap is None:
            raise ValueError("the finite-difference scheme needs a finite cap")
        g = np.asarray(gamma_bar, dtype=float)
        mu, capped, floor = self._mu(g)
        # saturating at the cap keeps gamma -> coef * gamma non-decreasing
        coef = np.where(capped, self.cap, np.minimum(mu, self.cap))
        source = np.zeros_like(g)
        if np.any(floor):
            coef = np.where(floor, 0.0, coef)
            source = np.where(floor, -self.upper_floor, 0.0)
        return coef, source

    upper_floor = 0.0

    # ----- Newton linearisation -------------------------------------------- #

    def _dF(self, gamma, mu, capped, floor):
        """dF/dgamma off the capped set; central differences by default."""
        h = 1e-6 * np.maximum(np.abs(gamma), 1.0)
        mp, cp, _ = self._mu(gamma + h)
        mm, cm, _ = self._mu(gamma - h)
        with np.errstate(invalid="ignore"):
            d = ((gamma + h) * mp - (gamma - h) * mm) / (2.0 * h)
        return np.where(cp | cm | capped, np.inf, d)

    def _model_F(self, gamma, mu, floor):
        return np.where(floor, -self.upper_floor, gamma * mu)

    @property
    def switch_point(self):
        """Smallest gamma > 0 where dF/dgamma reaches the cap (None if never).

        Past this point the scheme continues F linearly with slope ``cap``.
        """
        if not hasattr(self, "_switch"):
            self._switch = self._find_switch()
        return self._switch

    def _trips(self, g):
        arr = np.array([g], dtype=float)
        mu, capped, floor = self._mu(arr)
        if capped[0]:
            return True
        return bool(self._dF(arr, mu, capped, floor)[0] >= self.cap)

    def _find_switch(self):
        if self.cap is None:
            return None
        lo, hi = 0.0, 1.0
        while not self._trips(hi):
            lo, hi = hi, 2.0 * hi
            if hi > 1e18:
                return None
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if self._trips(mid):
                hi = mid
            else:
                lo = mid
        return lo

    def newton_terms(self, gamma_bar):
        """Newton linearisation F ~ coef * gamma + source about gamma_bar.

        Uses the convex continuation of F past ``switch_point``, where the
        slope is frozen at the cap, so coef never exceeds the cap.
        """
        if self.cap is None:
            raise ValueError("the finite-difference scheme needs a finite cap")
        g = np.asarray(gamma_bar, dtype=float)
        mu, capped, floor = self._mu(g)
        gs = self.switch_point
        if gs is None:
            beyond = capped
            f_s = 0.0
            slope_at = 0.0
        else:
            beyond = capped | (g > gs)
            ms, _, fl = self._mu(np.array([gs]))
            f_s = float(self._model_F(np.array([gs]), ms, fl)[0])
            slope_at = gs
        ok = ~beyond
        gi = np.where(ok, g, 0.0)
        mi = np.where(ok, mu, 1.0)
        dF = self._dF(gi, mi, ~ok, floor)
        with np.errstate(invalid="ignore"):
            coef = np.where(ok, np.minimum(dF, self.cap), self.cap)
            F = self._model_F(gi, mi, floor & ok)
            source = np.where(ok, F - coef * gi, f_s - self.cap * slope_at)
        return coef, source


class EffectiveNonlinearity(_Nonlinearity):
    """F for one of the impact models, with the epsilon^-1 cap of the scheme.

    ``cap=None`` gives the uncapped model (F = +inf past the pole); mu_of then
    raises Singular there.
    """

    def __init__(self, impact: ImpactSpec, sigma: float, cap: float | None = DEFAULT_CAP,
                 floor_flag: bool = True):
        if not sigma >= 0.0:
            raise ValueError("sigma must be >= 0")
        if cap is not None and not cap > 0:
            raise ValueError("cap must be > 0")
        self.impact = impact
        self.sigma = float(sigma)
        self.cap = cap
        self.floor_flag = floor_flag
        self.upper_bound = impact.upper_bound
        if isinstance(impact, GammaMaxImpact):
            self.upper_floor = impact.capital_lambda

    def __repr__(self):
        return f"EffectiveNonlinearity({self.impact!r}, sigma={self.sigma}, cap={self.cap})"

    def _dF(self, gamma, mu, capped, floor):
        imp = self.impact
        if isinstance(imp, NoImpact):
            return np.ones_like(gamma)
        if isinstance(imp, LinearImpact):
            return np.where(capped, np.inf, mu * mu)
        if isinstance(imp, GammaMaxImpact):
            return np.where(capped | (gamma > imp.capital_lambda), np.inf,
                            np.where(floor, 0.0, 1.0))
        return super()._dF(gamma, mu, capped, floor)

    def _find_switch(self):
        imp = self.impact
        if self.cap is None or isinstance(imp, NoImpact):
            return None
        if isinstance(imp, LinearImpact):
            if self.cap <= 1.0 or imp.lam == 0.0:
                return None if imp.lam == 0.0 else 0.0
            return (1.0 - 1.0 / math.sqrt(self.cap)) / imp.lam
        if isinstance(imp, GammaMaxImpact):
            return imp.capital_lambda if math.isfinite(imp.capital_lambda) else None
        return super()._find_switch()

    def _mu(self, gamma):
        imp = self.impact
        ones = np.ones_like(gamma)
        none = np.zeros(gamma.shape, dtype=bool)
        if isinstance(imp, NoImpact):
            return ones, none, none
        if isinstance(imp, LinearImpact):
            lg = imp.lam * gamma
            capped = lg >= 1.0 - DELTA_CAP
            with np.errstate(divide="ignore"):
                mu = np.where(capped, np.inf, 1.0 / np.where(capped, 1.0, 1.0 - lg))
            return mu, capped, none
        if isinstance(imp, IntensityImpact):
            m, found = _solve_multiplier(gamma, imp.curve, self.sigma, 1.0 / DELTA_CAP)
            return np.where(found, m, np.inf), ~found, none
        if isinstance(imp, GammaMaxImpact):
            lam = imp.capital_lambda
            capped = gamma > lam * (1.0 + DELTA_CAP)
            floor = (gamma < -lam) if self.floor_flag else none
            with np.errstate(divide="ignore"):
                mu = np.where(floor, lam / np.abs(np.where(floor, gamma, 1.0)), 1.0)
            mu = np.where(capped, np.inf, mu)
            return mu, capped, floor
        raise TypeError(f"unknown impact spec {imp!r}")


class MuCurveNonlinearity(_Nonlinearity):
    """F(gamma) = gamma * mu(gamma) for an arbitrary vectorised amplification curve.

    Nodes where mu >= 1/DELTA_CAP, mu <= 0 or mu is not finite are treated as capped.
    """

    def __init__(self, mu_fn: Callable[[np.ndarray], np.ndarray], cap: float | None = DEFAULT_CAP,
                 upper_bound: float | None = None):
        self.mu_fn = mu_fn
        self.cap = cap
        self.upper_bound = upper_bound

    def _mu(self, gamma):
        mu = np.asarray(self.mu_fn(gamma), dtype=float)
        capped = ~np.isfinite(mu) | (mu <= 0.0) | (mu >= 1.0 / DELTA_CAP)
        none = np.zeros(gamma.shape, dtype=bool)
        return np.where(capped, np.inf, mu), capped, none


def make_nonlinearity(impact, sigma: float, cap: float | None = DEFAULT_CAP):
    """Accept an ImpactSpec or an already-built nonlinearity object."""
    if isinstance(impact, _Nonlinearity):
        return impact
    return EffectiveNonlinearity(impact, sigma, cap=cap)


def effective_F(gamma_c, nl: _Nonlinearity):
    return nl.F(gamma_c)


def mu_of(gamma_c, nl: _Nonlinearity):
    """Amplification F(gamma_c) / gamma_c; mu(0) = 1.

    Raises Singular for a scalar input where the uncapped model is infinite.
    """
    out = nl.mu(gamma_c)
    if np.ndim(gamma_c) == 0 and not math.isfinite(out):
        raise Singular(f"mu is infinite at gamma_c={float(gamma_c):g}")
    return out


def supply_vol(gamma_c, nl: EffectiveNonlinearity):
    """Short-term implied volatility sigma * sqrt(mu) at which gamma_c can be traded."""
    mu = mu_of(gamma_c, nl)
    return nl.sigma * np.sqrt(mu)


def lambda_from_mu(gamma_grid, mu_values, sigma: float, slope_rtol: float = 0.05) -> TableLambda:
    """Tabulate the impact curve lambda(I) implied by a sampled amplification.

    ``gamma_grid`` must contain 0. At every sample lambda = (1 - 1/mu) / gamma_c
    at intensity I = sigma * gamma_c * mu; at 0 the limit mu'(0) is used.
    """
    g = np.asarray(gamma_grid, dtype=float)
    mu = np.asarray(mu_values, dtype=float)
    if g.shape != mu.shape or g.ndim != 1 or g.size < 3:
        raise InvalidMu("need matching 1-D samples (at least 3)")
    if not sigma > 0:
        raise InvalidMu("sigma must be > 0 to map amplification to intensity")
    order = np.argsort(g)
    g, mu = g[order], mu[order]
    if np.any(np.diff(g) <= 0):
        raise InvalidMu("gamma samples must be distinct")
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
        raise InvalidMu("mu must be finite and > 0 at every sample")
    zero = np.flatnonzero(g == 0.0)
    if zero.size != 1:
        raise InvalidMu("gamma grid must contain 0")
    k = int(zero[0])
    if abs(mu[k] - 1.0) > 1e-12:
        raise InvalidMu(f"mu(0) = {mu[k]!r}, expected 1")
    if k == 0 or k == g.size - 1:
        raise InvalidMu("gamma grid must straddle 0 to test differentiability")
    left = (mu[k] - mu[k - 1]) / (g[k] - g[k - 1])
    right = (mu[k + 1] - mu[k]) / (g[k + 1] - g[k])
    if abs(right - left) > slope_rtol * (1.0 + abs(left) + abs(right)):
        raise InvalidMu(f"mu not differentiable at 0 (slopes {left:g} vs {right:g})")
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(g != 0.0, (1.0 - 1.0 / mu) / np.where(g == 0, 1.0, g), 0.0)
    h_l, h_r = g[k] - g[k - 1], g[k + 1] - g[k]
    # continuous limit: interpolate the neighbouring values (exact for constant lambda)
    lam[k] = (lam[k - 1] * h_r + lam[k + 1] * h_l) / (h_l + h_r)
    if np.any(lam < -1e-12):
        raise InvalidMu("implied lambda is negative (mu < 1 for gamma_c > 0 or vice versa)")
    lam = np.maximum(lam, 0.0)
    intensity = sigma * g * mu
    if np.any(np.diff(intensity) <= 0):
        raise InvalidMu("gamma_c * mu must be strictly increasing")
    return TableLambda(tuple(intensity), tuple(lam))
