"""Piecewise-linear payoffs and the gamma-constrained envelope (face-lifting)."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence
from .grid import SpaceTimeGrid, Stencil
from .linalg import solve_tridiagonal

TOL_FACELIFT = 1e-8
MAX_SWEEPS = 100_000


@dataclass(frozen=True)
class Payoff:
    """Continuous piecewise-linear claim given by breakpoints and end slopes."""

    prices: tuple
    values: tuple
    left_slope: float = 0.0
    right_slope: float = 0.0

    def __post_init__(self):
        p = tuple(float(v) for v in self.prices)
        v = tuple(float(x) for x in self.values)
        if len(p) < 1 or len(p) != len(v):
            raise ValueError("payoff needs matching, non-empty breakpoint lists")
        if p[0] < 0 or any(b <= a for a, b in zip(p, p[1:])):
            raise ValueError("breakpoint prices must be >= 0 and strictly increasing")
        if not all(math.isfinite(x) for x in p + v + (self.left_slope, self.right_slope)):
            raise ValueError("payoff data must be finite")
        object.__setattr__(self, "prices", p)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "left_slope", float(self.left_slope))
        object.__setattr__(self, "right_slope", float(self.right_slope))

    # constructors ---------------------------------------------------------
    @classmethod
    def call(cls, strike: float, quantity: float = 1.0) -> "Payoff":
        return cls((0.0, strike), (0.0, 0.0), 0.0, 1.0).scaled(quantity)

    @classmethod
    def put(cls, strike: float, quantity: float = 1.0) -> "Payoff":
        return cls((0.0, strike), (strike, 0.0), -1.0, 0.0).scaled(quantity)

    @classmethod
    def call_spread(cls, k_low: float, k_high: float, quantity: float = 1.0) -> "Payoff":
        if not k_low < k_high:
            raise ValueError("call spread needs k_low < k_high")
        return cls((0.0, k_low, k_high), (0.0, 0.0, k_high - k_low), 0.0, 0.0).scaled(quantity)

    @classmethod
    def linear(cls, slope: float = 1.0, intercept: float = 0.0) -> "Payoff":
        return cls((0.0,), (intercept,), slope, slope)

    @classmethod
    def from_points(cls, points, left_slope=0.0, right_slope=0.0) -> "Payoff":
        pts = sorted((float(s), float(v)) for s, v in points)
        return cls(tuple(s for s, _ in pts), tuple(v for _, v in pts), left_slope, right_slope)

    def scaled(self, quantity: float) -> "Payoff":
        q = float(quantity)
        return Payoff(self.prices, tuple(q * v for v in self.values),
                      q * self.left_slope, q * self.right_slope)

    def __neg__(self):
        return self.scaled(-1.0)

    # evaluation -----------------------------------------------------------
    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        p, v = self.prices, self.values
        out = np.interp(s, p, v)
        out = np.where(s < p[0], v[0] + self.left_slope * (s - p[0]), out)
        out = np.where(s > p[-1], v[-1] + self.right_slope * (s - p[-1]), out)
        return out if out.ndim else float(out)

    def to_dict(self):
        return {"type": "breakpoints", "points": [[s, v] for s, v in zip(self.prices, self.values)],
                "left_slope": self.left_slope, "right_slope": self.right_slope}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def payoff_eval(payoff: Payoff, s):
    return payoff(s)


@dataclass
class FaceliftResult:
    lifted_values: np.ndarray
    active_set: np.ndarray
    max_violation: float
    sweeps: int = 0
    policy_iterations: int = 0


def constraint_violation(prices, values, capital_lambda) -> float:
    """Largest interior excess of the discrete S^2 D^2 v over the bound."""
    if not math.isfinite(capital_lambda):
        return 0.0
    g = Stencil(prices).interior_gamma_c(values)
    return float(max(np.max(g - capital_lambda), 0.0))


def facelift_values(prices, obstacle, capital_lambda: float, tol: float = TOL_FACELIFT,
                    max_sweeps: int = MAX_SWEEPS, omega: float | None = None,
                    polish: bool = True) -> FaceliftResult:
    """Smallest grid function v >= obstacle with S^2 D^2 v <= capital_lambda inside.

    End nodes keep the obstacle values. Red-black projected SOR runs until the
    largest update falls below ``tol``; with ``polish`` the active set found by
    PSOR is then refined by policy iteration, which returns the exact discrete
    solution of the complementarity problem.
    """
    prices = np.asarray(prices, dtype=float)
    phi = np.asarray(obstacle, dtype=float)
    n = prices.size
    if not capital_lambda > 0:
        raise ValueError("capital_lambda must be > 0")
    if not math.isfinite(capital_lambda):
        return FaceliftResult(phi.copy(), np.zeros(n, dtype=bool), 0.0)
    st = Stencil(prices)
    lo, dg, up = st.lower, st.diag, st.upper
    Lam = float(capital_lambda)
    if omega is None:
        omega = 2.0 / (1.0 + math.sin(math.pi / (n - 1)))

    v = phi.copy()
    red = np.arange(1, n - 1, 2)
    black = np.arange(2, n - 1, 2)
    sweeps = 0
    while True:
        sweeps += 1
        delta = 0.0
        for idx in (red, black):
            k = idx - 1
            gs = (Lam - lo[k] * v[idx - 1] - up[k] * v[idx + 1]) / dg[k]
            new = np.maximum(phi[idx], v[idx] + omega * (gs - v[idx]))
            delta = max(delta, float(np.max(np.abs(new - v[idx]))) if idx.size else 0.0)
            v[idx] = new
        if delta < tol:
            break
        if sweeps >= max_sweeps:
            raise NonConvergence(f"PSOR did not reach tol={tol:g} in {max_sweeps} sweeps "
                                 f"(last update {delta:g})")

    policy_iters = 0
    if polish:
        v, policy, policy_iters = _policy_iteration(v, phi, st, Lam)
        # clear roundoff-level dips below the obstacle on constraint rows
        v = np.maximum(v, phi)
    else:
        policy = np.zeros(n, dtype=bool)
        policy[1:-1] = v[1:-1] > phi[1:-1] + tol
    active = policy & (v > phi)
    g = st.interior_gamma_c(v)
    viol = max(float(np.max(g - Lam)), float(np.max(phi - v)), 0.0)
    return FaceliftResult(v, active, viol, sweeps, policy_iters)


def _policy_iteration(v, phi, st: Stencil, Lam: float, max_iter: int = 100):
    n = v.size
    lower = np.zeros(n)
    diag = np.ones(n)
    upper = np.zeros(n)
    rhs = phi.copy()
    prev = None
    for it in range(1, max_iter + 1):
        g = st.interior_gamma_c(v)
        # constraint row wherever it dominates max(phi - v, S^2 D^2 v - Lambda)
        pde = np.zeros(n, dtype=bool)
        pde[1:-1] = (g - Lam) > (phi[1:-1] - v[1:-1])
        if prev is not None and np.array_equal(pde, prev):
            return v, pde, it - 1
        prev = pde
        inner = pde[1:-1]
        lower[1:-1] = np.where(inner, st.lower, 0.0)
        diag[1:-1] = np.where(inner, st.diag, 1.0)
        upper[1:-1] = np.where(inner, st.upper, 0.0)
        rhs[1:-1] = np.where(inner, Lam, phi[1:-1])
        v_new = solve_tridiagonal(lower, diag, upper, rhs)
        # roundoff can flip ties between the two branches; a fixed point in v is enough
        settled = np.max(np.abs(v_new - v)) <= 1e-13 * max(1.0, float(np.max(np.abs(v))))
        v = v_new
        if settled:
            return v, pde, it
    raise NonConvergence("policy iteration for the face-lift did not settle")


def facelift(payoff: Payoff, capital_lambda: float, grid: SpaceTimeGrid,
             tol: float = TOL_FACELIFT, max_sweeps: int = MAX_SWEEPS) -> FaceliftResult:
    return facelift_values(grid.prices, payoff(grid.prices), capital_lambda, tol=tol,
                           max_sweeps=max_sweeps)
