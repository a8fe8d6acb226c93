"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even when output capture is on.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from nlbs import config as cfgmod
from nlbs.cli import main
from nlbs.convergence import convergence_study
from nlbs.grid import SpaceTimeGrid
from nlbs.hedge import HedgeRunConfig, refinement_study
from nlbs.impact import (ConstantLambda, GammaMaxImpact, IntensityImpact, LinearImpact,
                         NoImpact, PowerLawLambda, intensity_residual, lambda_from_mu,
                         make_nonlinearity, mu_of, solve_F_intensity)
from nlbs.payoffs import TOL_FACELIFT, Payoff, facelift, facelift_values
from nlbs.pde import comparison_tolerance, payoff_scale, solve

from oracles import bs_call, bs_put

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return report


def load(name):
    return cfgmod.load(str(CONFIGS / name))


# 1 ---------------------------------------------------------------------------------

def test_c1_black_scholes_oracle(verdict):
    g = SpaceTimeGrid(60.0, 100.0 ** 2 / 60.0, 400, 200)
    s = g.prices
    mid = slice(100, 300)
    worst, slowest = 0.0, 0.0
    for payoff, exact in ((Payoff.call(100.0), bs_call), (Payoff.put(100.0), bs_put)):
        t0 = time.perf_counter()
        surf = solve(payoff, NoImpact(), 0.2, 1.0, g)
        slowest = max(slowest, time.perf_counter() - t0)
        ref = exact(s, 100.0, 0.2, 1.0)
        worst = max(worst, float(np.max(np.abs(surf.values[0, mid] - ref[mid]) / ref[mid])))
    verdict(1, worst <= 5e-3 and slowest <= 5.0,
            f"max relative error {worst:.3e} (<= 5e-3), slowest solve {slowest:.2f} s (<= 5 s)")


# 2 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["short_put.json", "call_spread.json"])
def test_c2_impact_dominates_impact_free(verdict, name):
    cfg = load(name)
    base = solve(cfg.payoff, NoImpact(), cfg.sigma, cfg.maturity, cfg.grid)
    tol = comparison_tolerance(payoff_scale(cfg.payoff(cfg.grid.prices)), cfg.grid.n_time)
    worst = math.inf
    scales = (0.1, 0.2, 0.5, 1.0)
    for k in scales:
        surf = solve(cfg.payoff, LinearImpact(cfg.impact.lam * k), cfg.sigma, cfg.maturity,
                     cfg.grid)
        worst = min(worst, float(np.min(surf.values - base.values)))
    verdict(2, worst >= -tol,
            f"{name}: min(u_lambda - u_0) = {worst:.3e} over lambda x {scales} "
            f"(>= -{tol:.2e})")


# 3 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("impact", [LinearImpact(0.025), LinearImpact(0.0025),
                                    GammaMaxImpact(40.0)], ids=lambda i: repr(i))
def test_c3_gamma_cap(verdict, impact):
    g = SpaceTimeGrid(40.0, 250.0, 400, 200, time_grading=2.0)
    surf = solve(Payoff.call(100.0), impact, 0.2, 1.0, g, facelift_first=True)
    bound = impact.upper_bound
    ratio = float(surf.gamma_c.max()) / bound
    verdict(3, ratio <= 1.02, f"{impact!r}: max Gamma_c / bound = {ratio:.4f} (<= 1.02)")


# 4 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("payoff,lam", [(Payoff.call(100.0), 50.0),
                                        (Payoff.call_spread(90.0, 110.0), 20.0)],
                         ids=["call", "call_spread"])
def test_c4_facelift(verdict, payoff, lam):
    at = {}
    for n in (800, 3200):
        g = SpaceTimeGrid(20.0, 500.0, n)
        res = facelift(payoff, lam, g)
        at[n] = float(np.interp(math.log(100.0), np.log(g.prices), res.lifted_values))
        if n == 800:
            s, once = g.prices, res.lifted_values
    rel = abs(at[800] - at[3200]) / abs(at[3200])
    twice = facelift_values(s, once, lam).lifted_values
    idem = float(np.max(np.abs(twice - once)))
    looser = facelift_values(s, payoff(s), 2.0 * lam).lifted_values
    mono = float(np.max(looser - once))
    ok = rel <= 2e-3 and idem <= TOL_FACELIFT and mono <= TOL_FACELIFT
    verdict(4, ok, f"rel diff at strike {rel:.2e} (<= 2e-3), idempotence {idem:.1e}, "
                   f"monotonicity {mono:.1e} (<= {TOL_FACELIFT:g})")


# 5 ---------------------------------------------------------------------------------

def test_c5_replication(verdict):
    cfg = load("hedge_put_linear.json")
    t0 = time.perf_counter()
    surf = solve(cfg.payoff, cfg.impact, cfg.sigma, cfg.maturity, cfg.grid)
    h = cfg.block("hedge")
    hc = HedgeRunConfig(surf, cfg.impact, cfg.sigma, h["s0"], 200, 10_000, cfg.seed)
    rows, reports = refinement_study(hc, [50, 100, 200])
    elapsed = time.perf_counter() - t0
    rms = [r.rms_error for r in rows]
    decreasing = all(b < a for a, b in zip(rms, rms[1:]))
    share = min(float(np.mean(rep.impact_term[rep.kept] >= 0.0)) for rep in reports)
    kept = min(int(rep.kept.sum()) for rep in reports)
    ok = decreasing and share == 1.0 and elapsed <= 30.0
    verdict(5, ok, f"RMS {', '.join(f'{v:.4f}' for v in rms)} (strictly decreasing), "
                   f"impact term >= 0 on {100 * share:.1f}% of {kept} paths, {elapsed:.1f} s")


# 6 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("curve", [ConstantLambda(0.03), PowerLawLambda(0.03, 1.0),
                                   PowerLawLambda(0.01, 2.0)],
                         ids=["constant", "power1", "power2"])
def test_c6_lambda_mu_round_trip(verdict, curve):
    sigma = 0.3
    samples = np.linspace(-5.0, 5.0, 100)  # 100 nonzero intensities; 0 anchors mu(0) = 1
    g = np.union1d(samples, [0.0])
    nl = make_nonlinearity(IntensityImpact(curve), sigma, cap=None)
    tab = lambda_from_mu(g, mu_of(g, nl), sigma, slope_rtol=0.2)
    inten = np.asarray(tab.intensities)
    sampled = inten != 0.0
    err = float(np.max(np.abs(np.asarray(tab.lambdas)[sampled] - curve(inten[sampled]))))
    res = max(intensity_residual(solve_F_intensity(x, curve, sigma), x, curve, sigma)
              for x in samples)
    verdict(6, sampled.sum() == 100 and err <= 1e-6 and res <= 1e-10,
            f"{curve!r}: max |lambda error| {err:.2e} on {sampled.sum()} intensities "
            f"(<= 1e-6), residual {res:.2e} (<= 1e-10)")


# 7 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("payoff,gmax", [(Payoff.put(100.0), 100.0),
                                         (Payoff.call_spread(90.0, 110.0), 20.0)],
                         ids=["put", "call_spread"])
def test_c7_penalised_convergence(verdict, payoff, gmax):
    g = SpaceTimeGrid(40.0, 250.0, 400, 200, time_grading=2.0)
    rows, _ = convergence_study(payoff, 0.2, gmax, [1, 2, 4, 8], g)
    d = [r.sup_distance for r in rows]
    e = [r.max_gamma_excess for r in rows]
    ok = all(b <= a for a, b in zip(d, d[1:])) and all(b <= a for a, b in zip(e, e[1:]))
    verdict(7, ok, "distance " + ", ".join(f"{v:.4g}" for v in d)
            + "; excess " + ", ".join(f"{v:.4g}" for v in e) + " (both non-increasing)")


# 8 ---------------------------------------------------------------------------------

def test_c8_three_iterations_suffice(verdict):
    cfg = load("short_put.json")
    grid = cfg.grid.with_(nl_tol=0.0)  # force all three iterations
    surf = solve(cfg.payoff, cfg.impact, cfg.sigma, cfg.maturity, grid)
    scale = payoff_scale(cfg.payoff(grid.prices))
    limit = 10.0 * cfg.grid.nl_tol * scale
    assert all(len(h) == 3 for h in surf.nl_history)
    worst = max(h[-1] for h in surf.nl_history)
    verdict(8, worst <= limit, f"max |v3 - v2| = {worst:.3e} (<= {limit:.1e}) "
                               f"with {grid.linearization} linearization")


# 9 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_c9_determinism(verdict, tmp_path, monkeypatch, name):
    snaps = []
    for threads in ("1", "4"):
        monkeypatch.setenv("NLBS_THREADS", threads)
        out = tmp_path / threads
        assert main(["--config", str(CONFIGS / name), "--out", str(out), "--quiet"]) == 0
        snaps.append({p.name: p.read_bytes() for p in sorted(out.iterdir())
                      if p.suffix in (".csv", ".txt")})
    ok = bool(snaps[0]) and snaps[0] == snaps[1]
    verdict(9, ok, f"{name}: {len(snaps[0])} CSV/plot files byte-identical "
                   "with NLBS_THREADS 1 vs 4")
