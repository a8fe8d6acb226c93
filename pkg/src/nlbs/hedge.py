"""Monte Carlo check of the replication identity under impacted dynamics.

Paths follow d ln S = -0.5 (sigma mu)^2 dt + sigma mu dB with mu = mu(Gamma_c)
read off a solved surface. Along each path we accumulate

    u(0, S0) + sum delta_i dS_i + 0.5 sum Gamma_c,i sigma^2 (mu_i^2 - mu_i) dt

and compare it with the terminal claim. Every path owns a Philox stream keyed
by the seed with the path id in the counter, so results do not depend on how
paths are split among workers.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import PathEscapedGrid, SingularMu
from .impact import make_nonlinearity
from .pde import PriceSurface

CHUNK = 1024
SEED_MASK = (1 << 64) - 1


def worker_count(default: int | None = None) -> int:
    """Worker threads, capped by the NLBS_THREADS environment variable."""
    env = os.environ.get("NLBS_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            n = 1
        return max(1, n)
    return default or min(8, os.cpu_count() or 1)


def path_normals(seed: int, path_ids, n_draws: int) -> np.ndarray:
    """Standard normals, one row per path, from per-path Philox substreams."""
    out = np.empty((len(path_ids), n_draws))
    key = int(seed) & SEED_MASK
    for row, pid in enumerate(path_ids):
        bitgen = np.random.Philox(key=key, counter=[0, 0, 0, int(pid)])
        out[row] = np.random.Generator(bitgen).standard_normal(n_draws)
    return out


@dataclass
class HedgeRunConfig:
    surface: PriceSurface
    impact: object
    sigma: float
    s0: float
    n_steps: int = 100
    n_paths: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")
        if not (self.surface.s_min < self.s0 < self.surface.s_max):
            raise ValueError(f"s0={self.s0} outside the surface price range")
        if not 0 <= int(self.seed) <= SEED_MASK:
            raise ValueError("seed must fit in 64 bits")


@dataclass
class HedgeRunReport:
    n_steps: int
    u0: float
    path_id: np.ndarray
    s_T: np.ndarray
    s_T_unimpacted: np.ndarray
    delta_term: np.ndarray
    impact_term: np.ndarray
    error: np.ndarray
    escaped: np.ndarray  # boolean mask over all simulated paths
    extra: dict = field(default_factory=dict)

    @property
    def kept(self) -> np.ndarray:
        return ~self.escaped

    @property
    def n_escaped(self) -> int:
        return int(np.count_nonzero(self.escaped))

    @property
    def mean_error(self) -> float:
        e = self.error[self.kept]
        return math.fsum(e) / e.size

    @property
    def rms_error(self) -> float:
        e = self.error[self.kept]
        return math.sqrt(math.fsum(e * e) / e.size)

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.error[self.kept])))

    @property
    def stderr(self) -> float:
        e = self.error[self.kept]
        if e.size < 2:
            return float("nan")
        m = math.fsum(e) / e.size
        d = e - m
        return math.sqrt(math.fsum(d * d) / (e.size - 1) / e.size)

    def summary(self) -> dict:
        return {
            "n_steps": self.n_steps,
            "n_paths": int(self.escaped.size),
            "n_escaped": self.n_escaped,
            "u0": self.u0,
            "mean_error": self.mean_error,
            "rms_error": self.rms_error,
            "max_abs_error": self.max_abs_error,
            "stderr": self.stderr,
            "min_impact_term": float(np.min(self.impact_term[self.kept])),
            **self.extra,
        }

    def rows(self):
        """(path_id, S_T, delta_term, impact_term, error) for paths that stayed on the grid."""
        k = self.kept
        return zip(self.path_id[k], self.s_T[k], self.delta_term[k], self.impact_term[k],
                   self.error[k])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("path_id,S_T,delta_term,impact_term,error\n")
            for pid, st, d, imp, e in self.rows():
                fh.write(f"{int(pid)},{st:.12g},{d:.12g},{imp:.12g},{e:.12g}\n")

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class _SurfaceSampler:
    """Bilinear lookup of u, delta and gamma_c in (t, ln S)."""

    def __init__(self, surface: PriceSurface):
        self.t = surface.times
        self.x = np.log(surface.prices)
        self.fields = (surface.values, surface.delta, surface.gamma_c)

    def at(self, t: float, x: np.ndarray):
        k = int(np.searchsorted(self.t, t, side="right")) - 1
        k = min(max(k, 0), self.t.size - 2)
        w = (t - self.t[k]) / (self.t[k + 1] - self.t[k])
        w = min(max(w, 0.0), 1.0)
        out = []
        for f in self.fields:
            a = np.interp(x, self.x, f[k])
            if w == 0.0:
                out.append(a)
            else:
                out.append((1.0 - w) * a + w * np.interp(x, self.x, f[k + 1]))
        return out


def _run_chunk(cfg: HedgeRunConfig, nl, sampler, dB, path_ids, dt):
    """Hedge one block of paths given Brownian increments dB of shape (paths, n_steps)."""
    sigma = cfg.sigma
    surf = cfg.surface
    lo, hi = math.log(surf.s_min), math.log(surf.s_max)
    n = len(path_ids)
    x = np.full(n, math.log(cfg.s0))
    x0 = x.copy()
    escaped = np.zeros(n, dtype=bool)
    delta_term = np.zeros(n)
    impact_term = np.zeros(n)
    for i in range(cfg.n_steps):
        _, delta, gamma = sampler.at(i * dt, x)
        mu = np.asarray(nl.mu(gamma), dtype=float)
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise SingularMu(f"amplification not finite/positive at step {i}")
        vol = sigma * mu
        x_new = x - 0.5 * vol * vol * dt + vol * dB[:, i]
        s_old = np.exp(x)
        s_new = np.exp(x_new)
        delta_term += delta * (s_new - s_old)
        impact_term += 0.5 * sigma * sigma * gamma * mu * (mu - 1.0) * dt
        x0 += -0.5 * sigma * sigma * dt + sigma * dB[:, i]
        escaped |= (x_new <= lo) | (x_new >= hi)
        # freeze escaped paths inside the grid so lookups stay defined
        x = np.where(escaped, x, x_new)
    return x, x0, delta_term, impact_term, escaped


def _increments(cfg: HedgeRunConfig, ids, n_fine: int, n_steps: int):
    dt_f = cfg.surface.maturity / n_fine
    z = path_normals(cfg.seed, ids, n_fine) * math.sqrt(dt_f)
    block = n_fine // n_steps
    if block == 1:
        return z
    return z.reshape(len(ids), n_steps, block).sum(axis=2)


def _simulate(cfg: HedgeRunConfig, n_fine: int, workers: int | None) -> HedgeRunReport:
    surf = cfg.surface
    cap = surf.metadata.get("cap")
    nl = make_nonlinearity(cfg.impact, cfg.sigma, cap=cap)
    sampler = _SurfaceSampler(surf)
    T = surf.maturity
    dt = T / cfg.n_steps
    chunks = [np.arange(a, min(a + CHUNK, cfg.n_paths)) for a in range(0, cfg.n_paths, CHUNK)]

    def job(ids):
        dB = _increments(cfg, ids, n_fine, cfg.n_steps)
        return _run_chunk(cfg, nl, sampler, dB, ids, dt)

    n_workers = worker_count(workers)
    if n_workers == 1 or len(chunks) == 1:
        parts = [job(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(job, chunks))

    x, x0, dterm, iterm, esc = (np.concatenate(p) for p in zip(*parts))
    if np.all(esc):
        raise PathEscapedGrid("every path left the price grid")
    x_grid = np.log(surf.prices)
    u0 = float(np.interp(math.log(cfg.s0), x_grid, surf.values[0]))
    payoff_T = np.interp(x, x_grid, surf.values[-1])
    error = u0 + dterm + iterm - payoff_T
    error = np.where(esc, np.nan, error)
    return HedgeRunReport(cfg.n_steps, u0, np.arange(cfg.n_paths), np.exp(x), np.exp(x0),
                          dterm, iterm, error, esc)


def simulate(cfg: HedgeRunConfig, workers: int | None = None) -> HedgeRunReport:
    """Hedge ``n_paths`` paths on ``n_steps`` uniform dates."""
    return _simulate(cfg, cfg.n_steps, workers)


@dataclass
class RefinementRow:
    n_steps: int
    rms_error: float
    mean_error: float
    escaped: int


def refinement_study(cfg: HedgeRunConfig, steps_list, workers: int | None = None):
    """Run the hedge at each n_steps with coarse increments summed from the finest level.

    Returns (rows, reports). Every entry of ``steps_list`` must divide the largest.
    """
    steps = [int(s) for s in steps_list]
    if not steps:
        raise ValueError("steps_list is empty")
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError("steps_list must be strictly increasing")
    n_fine = steps[-1]
    if any(n_fine % s for s in steps):
        raise ValueError("every n_steps must divide the finest level")
    rows, reports = [], []
    for s in steps:
        sub = HedgeRunConfig(cfg.surface, cfg.impact, cfg.sigma, cfg.s0, s, cfg.n_paths, cfg.seed)
        rep = _simulate(sub, n_fine, workers)
        reports.append(rep)
        rows.append(RefinementRow(s, rep.rms_error, rep.mean_error, rep.n_escaped))
    return rows, reports


def write_refinement_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write("n_steps,rms_error,mean_error,escaped\n")
        for r in rows:
            fh.write(f"{r.n_steps},{r.rms_error:.12g},{r.mean_error:.12g},{r.escaped}\n")
