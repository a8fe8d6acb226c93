"""Penalised approximations of the gamma-constrained problem.

A family mu_n, smooth on the whole real line, blows up past Gamma_max as n
grows. Each member defines an unconstrained PDE; their solutions should
approach the constrained solution on compact sets away from maturity and the
grid edges. This module builds the family, runs the solves and tabulates the
distances.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams
from .grid import SpaceTimeGrid
from .hedge import worker_count
from .impact import LinearImpact, MuCurveNonlinearity
from .payoffs import Payoff
from .pde import PriceSurface, solve


def softplus_n(y, n: float):
    """log(1 + e^{n y}) / log(1 + e^n): smooth, positive, equal to 1 at y = 1, -> max(y, 0)."""
    y = np.asarray(y, dtype=float)
    return np.logaddexp(0.0, n * y) / np.logaddexp(0.0, n)


@dataclass(frozen=True)
class MuFamily:
    gamma_max: float
    n: float

    def __post_init__(self):
        if not (self.gamma_max > 0):
            raise InvalidParams(f"gamma_max must be > 0, got {self.gamma_max}")
        if not (self.n >= 1):
            raise InvalidParams(f"n must be >= 1, got {self.n}")

    def __call__(self, gamma_c):
        y = 1.0 - np.asarray(gamma_c, dtype=float) / self.gamma_max
        with np.errstate(divide="ignore", over="ignore"):
            return 1.0 / softplus_n(y, self.n)

    def F(self, gamma_c):
        g = np.asarray(gamma_c, dtype=float)
        return g * self(g)

    def nonlinearity(self, cap: float) -> MuCurveNonlinearity:
        return MuCurveNonlinearity(self, cap=cap)

    def to_dict(self):
        return {"model": "mu_family", "gamma_max": self.gamma_max, "n": self.n}


def build_mu_family(gamma_max: float, n: float) -> MuFamily:
    return MuFamily(float(gamma_max), float(n))


def limit_impact(gamma_max: float) -> LinearImpact:
    """The pointwise limit of the family: linear impact with lambda = 1 / Gamma_max."""
    return LinearImpact(1.0 / gamma_max)


@dataclass
class ConvergenceRow:
    n: float
    sup_distance: float
    max_gamma_excess: float


def window_mask(surface: PriceSurface, tau_frac: float = 0.05, price_frac: float = 0.5):
    """Boolean (time, price) mask: t <= T - tau_frac*T and the middle price nodes."""
    t = surface.times
    T = surface.maturity
    rows = t <= T * (1.0 - tau_frac) + 1e-12
    m = surface.prices.size
    k = int(round(m * (1.0 - price_frac) / 2.0))
    cols = np.zeros(m, dtype=bool)
    cols[k:m - k] = True
    return rows[:, None] & cols[None, :]


def convergence_study(payoff: Payoff, sigma: float, gamma_max: float, n_list,
                      grid: SpaceTimeGrid, maturity: float = 1.0, tau_frac: float = 0.05,
                      workers: int | None = None):
    """Distance of each penalised solution from the constrained reference.

    Returns (rows, reference_surface). The reference is the limit problem:
    the terminal payoff face-lifted at Gamma_max, then solved with the limit
    amplification 1 / (1 - Gamma_c / Gamma_max).
    """
    ns = [float(n) for n in n_list]
    fams = [build_mu_family(gamma_max, n) for n in ns]

    def job(fam):
        return solve(payoff, fam.nonlinearity(grid.cap), sigma, maturity, grid)

    def ref_job():
        if math.isinf(gamma_max):
            return solve(payoff, LinearImpact(0.0), sigma, maturity, grid)
        return solve(payoff, limit_impact(gamma_max), sigma, maturity, grid,
                     facelift_first=True)

    n_workers = worker_count(workers)
    if n_workers == 1:
        ref = ref_job()
        surfaces = [job(f) for f in fams]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            ref_f = pool.submit(ref_job)
            surfaces = list(pool.map(job, fams))
            ref = ref_f.result()

    mask = window_mask(ref, tau_frac)
    rows = []
    for n, surf in zip(ns, surfaces):
        dist = float(np.max(np.abs(surf.values - ref.values)[mask]))
        excess = max(0.0, float(np.max(surf.gamma_c[mask])) - gamma_max)
        rows.append(ConvergenceRow(n, dist, excess))
    return rows, ref


def write_convergence_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write("n,sup_distance,max_gamma_excess\n")
        for r in rows:
            fh.write(f"{r.n:.12g},{r.sup_distance:.12g},{r.max_gamma_excess:.12g}\n")
