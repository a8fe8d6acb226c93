"""Implicit finite-difference solver for u_t + 0.5 sigma^2 F(S^2 u_SS) = 0.

Each backward-Euler step runs a lagged-gamma iteration: F is linearised about
the previous iterate v_j, the diffusion acts linearly on the unknown and the
tridiagonal system is solved directly. Two linearisations are available:

* ``newton``: coef = F'(gamma_bar), with F continued linearly (slope = cap)
  past the point where F' reaches the cap. F is convex for the built-in models,
  so the iterates decrease monotonically onto the implicit solution.
* ``picard``: coef = mu(gamma_bar), the amplification frozen at v_j.

Boundary nodes carry zero gamma, so they keep their terminal values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonEllipticInput, NumericalBlowup
from .grid import SpaceTimeGrid
from .impact import ImpactSpec, make_nonlinearity, NoImpact
from .linalg import solve_tridiagonal
from .payoffs import Payoff, facelift_values

BLOWUP_FACTOR = 1e6


@dataclass
class PriceSurface:
    times: np.ndarray
    prices: np.ndarray
    values: np.ndarray  # shape (n_time + 1, n_space)
    delta: np.ndarray
    gamma_c: np.ndarray
    metadata: dict = field(default_factory=dict)
    nl_history: list = field(default_factory=list, repr=False)

    @property
    def maturity(self) -> float:
        return float(self.times[-1])

    @property
    def s_min(self) -> float:
        return float(self.prices[0])

    @property
    def s_max(self) -> float:
        return float(self.prices[-1])

    def at(self, t_index: int) -> np.ndarray:
        return self.values[t_index]

    def value(self, s: float, t_index: int = 0) -> float:
        return float(np.interp(math.log(s), np.log(self.prices), self.values[t_index]))


def payoff_scale(values) -> float:
    m = float(np.max(np.abs(values)))
    return m if m > 0 else 1.0


def comparison_tolerance(scale: float, n_time: int) -> float:
    """Roundoff allowance for pointwise comparisons of two solved surfaces.

    Ten machine epsilons per backward step, in payoff units.
    """
    return 10.0 * np.finfo(float).eps * n_time * scale


def check_ellipticity(nl, gamma_lo: float, gamma_hi: float, n: int = 1000) -> None:
    """Raise NonEllipticInput if F decreases between uncapped samples."""
    lo, hi = min(gamma_lo, 0.0), max(gamma_hi, 0.0)
    if hi - lo <= 0:
        return
    g = np.linspace(lo, hi, n)
    F = nl.F(g)
    ok = ~nl.capped(g)
    Fs = F[ok]
    if Fs.size > 1 and np.any(np.diff(Fs) < -1e-12 * np.maximum(1.0, np.abs(Fs[1:]))):
        raise NonEllipticInput("effective nonlinearity F is decreasing on the payoff's gamma range")


def step_nonlinear(u_next, nl, sigma: float, dt: float, grid: SpaceTimeGrid,
                   scale: float | None = None, n_itnl: int | None = None):
    """One backward step from t to t - dt. Returns (values, list of max|v_{j+1} - v_j|)."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    u_next = np.asarray(u_next, dtype=float)
    st = grid.stencil
    n = u_next.size
    if scale is None:
        scale = payoff_scale(u_next)
    n_itnl = grid.n_itnl if n_itnl is None else n_itnl
    theta = 0.5 * sigma * sigma * dt
    tol = grid.nl_tol * scale

    lower = np.zeros(n)
    diag = np.ones(n)
    upper = np.zeros(n)
    rhs = u_next.copy()
    v = u_next
    history = []
    for _ in range(n_itnl):
        gamma_bar = st.interior_gamma_c(v)
        if grid.linearization == "newton":
            coef, source = nl.newton_terms(gamma_bar)
        else:
            coef, source = nl.row_coefficients(gamma_bar)
        k = theta * coef
        lower[1:-1] = -k * st.lower
        diag[1:-1] = 1.0 - k * st.diag
        upper[1:-1] = -k * st.upper
        rhs[1:-1] = u_next[1:-1] + theta * source
        w = solve_tridiagonal(lower, diag, upper, rhs)
        if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > BLOWUP_FACTOR * scale:
            raise NumericalBlowup("nodal values exceeded the blow-up threshold")
        change = float(np.max(np.abs(w - v)))
        history.append(change)
        v = w
        if change < tol:
            break
    return v, history


def solve(payoff: Payoff, impact, sigma: float, maturity: float, grid: SpaceTimeGrid,
          facelift_first: bool = True, terminal_values=None) -> PriceSurface:
    """Backward solve from the (optionally face-lifted) payoff to t = 0.

    ``impact`` may be an ImpactSpec or a prebuilt nonlinearity. With
    ``facelift_first`` and a model carrying an upper gamma bound, the terminal
    condition is the face-lifted payoff.
    """
    if not sigma >= 0:
        raise ValueError("sigma must be >= 0")
    if not maturity > 0:
        raise ValueError("maturity must be > 0")
    nl = make_nonlinearity(impact, sigma, cap=grid.cap)
    s = grid.prices
    raw = payoff(s) if terminal_values is None else np.asarray(terminal_values, dtype=float)
    bound = getattr(nl, "upper_bound", None)
    lifted = False
    u = raw.copy()
    if facelift_first and bound is not None and math.isfinite(bound):
        u = facelift_values(s, raw, bound).lifted_values
        lifted = True
    scale = payoff_scale(raw)

    g0 = grid.stencil.interior_gamma_c(u)
    check_ellipticity(nl, float(np.min(g0)), float(np.max(g0)))

    times = grid.times(maturity)
    values = np.empty((grid.n_time + 1, s.size))
    values[-1] = u
    history = []
    for i in range(grid.n_time, 0, -1):
        dt = float(times[i] - times[i - 1])
        u, h = step_nonlinear(u, nl, sigma, dt, grid, scale=scale)
        values[i - 1] = u
        history.append(h)
    history.reverse()

    delta = grid.stencil.delta(values)
    gamma_c = grid.stencil.gamma_c(values)
    impact_meta = impact.to_dict() if hasattr(impact, "to_dict") else {"model": repr(impact)}
    meta = {
        "impact": impact_meta,
        "sigma": float(sigma),
        "maturity": float(maturity),
        "payoff": payoff.to_dict() if terminal_values is None else None,
        "payoff_hash": payoff.digest() if terminal_values is None else None,
        "facelifted": lifted,
        "cap": grid.cap,
        "n_itnl": grid.n_itnl,
        "linearization": grid.linearization,
        "time_grading": grid.time_grading,
    }
    return PriceSurface(times, s.copy(), values, delta, gamma_c, meta, history)


def greeks(surface: PriceSurface):
    """(delta, gamma_c) recomputed from the surface values."""
    from .grid import Stencil
    st = Stencil(surface.prices)
    return st.delta(surface.values), st.gamma_c(surface.values)


def pde_residual(surface: PriceSurface, impact, sigma: float, t_max: float | None = None,
                 active_tol: float = 0.02, cap: float | None = None) -> float:
    """Max interior |u_t + 0.5 sigma^2 F(gamma_c)| with centred time differences.

    Nodes on the cap branch, and nodes within ``active_tol`` of an upper gamma
    bound, are excluded. ``t_max`` restricts the check to t <= t_max.
    """
    if surface.times.size < 3:
        raise ValueError("need at least 3 time levels")
    cap = surface.metadata.get("cap") if cap is None else cap
    nl = make_nonlinearity(impact, sigma, cap=cap)
    t = surface.times
    u = surface.values
    g = surface.gamma_c[1:-1, 1:-1]
    ut = (u[2:, 1:-1] - u[:-2, 1:-1]) / (t[2:] - t[:-2])[:, None]
    F = nl.F(g)
    keep = ~nl.capped(g)
    bound = getattr(nl, "upper_bound", None)
    if bound is not None:
        keep &= g < bound * (1.0 - active_tol)
    if t_max is not None:
        keep &= (t[1:-1] <= t_max + 1e-12)[:, None]
    r = np.abs(ut + 0.5 * sigma * sigma * np.where(keep, F, 0.0))
    r = np.where(keep, r, 0.0)
    return float(np.max(r)) if r.size else 0.0
