import math

import numpy as np
import pytest

from nlbs.errors import PathEscapedGrid, SingularMu
from nlbs.grid import SpaceTimeGrid
from nlbs.hedge import (HedgeRunConfig, path_normals, refinement_study, simulate,
                        worker_count, write_refinement_csv)
from nlbs.impact import GammaMaxImpact, LinearImpact, NoImpact
from nlbs.payoffs import Payoff
from nlbs.pde import solve

SIGMA, T, K = 0.2, 1.0, 100.0
GRID = SpaceTimeGrid(20.0, 500.0, 400, 200, time_grading=2.0)


@pytest.fixture(scope="module")
def call_surface():
    return solve(Payoff.call(K), NoImpact(), SIGMA, T, GRID)


@pytest.fixture(scope="module")
def put_linear():
    imp = LinearImpact(0.0025)
    return imp, solve(Payoff.put(K), imp, SIGMA, T, GRID)


class TestConfig:
    def test_validation(self, call_surface):
        with pytest.raises(ValueError):
            HedgeRunConfig(call_surface, NoImpact(), SIGMA, 10.0)
        with pytest.raises(ValueError):
            HedgeRunConfig(call_surface, NoImpact(), SIGMA, 100.0, n_steps=0)
        with pytest.raises(ValueError):
            HedgeRunConfig(call_surface, NoImpact(), SIGMA, 100.0, n_paths=0)
        with pytest.raises(ValueError):
            HedgeRunConfig(call_surface, NoImpact(), SIGMA, 100.0, seed=2 ** 64)

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("NLBS_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("NLBS_THREADS", "0")
        assert worker_count() == 1


def test_normals_are_per_path():
    a = path_normals(5, [0, 1, 2], 8)
    b = path_normals(5, [2, 0], 8)
    np.testing.assert_array_equal(a[2], b[0])
    np.testing.assert_array_equal(a[0], b[1])
    assert not np.array_equal(a[0], a[1])
    assert not np.array_equal(a, path_normals(6, [0, 1, 2], 8))


def test_zero_volatility():
    surf = solve(Payoff.put(K), LinearImpact(0.001), 0.0, T, GRID)
    rep = simulate(HedgeRunConfig(surf, LinearImpact(0.001), 0.0, 93.0, 20, 50, seed=1))
    np.testing.assert_allclose(rep.s_T, 93.0, rtol=1e-15)
    assert rep.max_abs_error < 1e-12
    assert rep.impact_term.max() == 0.0


def test_no_impact_paths_match_unimpacted(call_surface):
    rep = simulate(HedgeRunConfig(call_surface, NoImpact(), SIGMA, 100.0, 50, 200, seed=3))
    np.testing.assert_allclose(rep.s_T, rep.s_T_unimpacted, rtol=1e-12)
    assert rep.impact_term.max() == 0.0


def test_refinement_no_impact(call_surface):
    cfg = HedgeRunConfig(call_surface, NoImpact(), SIGMA, 100.0, n_paths=10_000, seed=42)
    rows, _ = refinement_study(cfg, [50, 100, 200])
    rms = [r.rms_error for r in rows]
    assert rms[0] > rms[1] > rms[2]
    assert all(r.escaped == 0 for r in rows)


def test_refinement_linear_and_positivity(put_linear):
    imp, surf = put_linear
    cfg = HedgeRunConfig(surf, imp, SIGMA, 100.0, n_paths=4000, seed=9)
    rows, reps = refinement_study(cfg, [50, 100, 200])
    rms = [r.rms_error for r in rows]
    assert rms[0] > rms[1] > rms[2]
    for rep in reps:
        assert np.all(rep.impact_term[rep.kept] > 0)
    # impacted and exogenous paths share the noise but not the volatility
    assert not np.allclose(reps[-1].s_T, reps[-1].s_T_unimpacted)


def test_coarse_levels_share_increments(call_surface):
    cfg = HedgeRunConfig(call_surface, NoImpact(), SIGMA, 100.0, n_paths=64, seed=4)
    _, reps = refinement_study(cfg, [10, 20, 40])
    # with no impact the exogenous path only depends on the summed increments
    np.testing.assert_allclose(reps[0].s_T_unimpacted, reps[2].s_T_unimpacted, rtol=1e-12)


def test_worker_independent(put_linear, monkeypatch):
    imp, surf = put_linear
    cfg = HedgeRunConfig(surf, imp, SIGMA, 100.0, 50, 3000, seed=123)
    a = simulate(cfg, workers=1)
    b = simulate(cfg, workers=4)
    monkeypatch.setenv("NLBS_THREADS", "7")
    c = simulate(cfg)
    for x in (b, c):
        np.testing.assert_array_equal(a.error, x.error)
        np.testing.assert_array_equal(a.impact_term, x.impact_term)
    assert a.summary() == c.summary()


def test_escaped_paths_are_counted():
    g = SpaceTimeGrid(85.0, 118.0, 200, 100)
    surf = solve(Payoff.call(K), NoImpact(), 0.4, T, g)
    rep = simulate(HedgeRunConfig(surf, NoImpact(), 0.4, 100.0, 50, 500, seed=2))
    assert 0 < rep.n_escaped < 500
    assert np.all(np.isnan(rep.error[rep.escaped]))
    assert np.all(np.isfinite(rep.error[rep.kept]))
    assert len(list(rep.rows())) == 500 - rep.n_escaped
    assert math.isfinite(rep.rms_error)


def test_all_escaped_raises():
    g = SpaceTimeGrid(99.0, 101.0, 50, 20)
    surf = solve(Payoff.call(K), NoImpact(), SIGMA, T, g)
    with pytest.raises(PathEscapedGrid):
        simulate(HedgeRunConfig(surf, NoImpact(), SIGMA, 100.0, 50, 20, seed=0))


def test_singular_mu(call_surface):
    surf = call_surface
    meta = dict(surf.metadata, cap=None)
    uncapped = type(surf)(surf.times, surf.prices, surf.values, surf.delta, surf.gamma_c, meta)
    with pytest.raises(SingularMu):
        simulate(HedgeRunConfig(uncapped, LinearImpact(1.0), SIGMA, 100.0, 20, 50, seed=0))


def test_gamma_max_super_replicates():
    imp = GammaMaxImpact(50.0)
    surf = solve(Payoff.call(K), imp, SIGMA, T, GRID)
    rep = simulate(HedgeRunConfig(surf, imp, SIGMA, 100.0, 100, 4000, seed=17))
    assert rep.mean_error >= -2 * rep.stderr


def test_refinement_arguments(call_surface):
    cfg = HedgeRunConfig(call_surface, NoImpact(), SIGMA, 100.0, n_paths=10, seed=0)
    with pytest.raises(ValueError):
        refinement_study(cfg, [100, 50])
    with pytest.raises(ValueError):
        refinement_study(cfg, [30, 100])
    rows, _ = refinement_study(cfg, [25])
    assert len(rows) == 1 and rows[0].n_steps == 25


def test_exports(tmp_path, call_surface):
    cfg = HedgeRunConfig(call_surface, NoImpact(), SIGMA, 100.0, 10, 20, seed=0)
    rows, reps = refinement_study(cfg, [5, 10])
    reps[-1].write_csv(tmp_path / "p.csv")
    reps[-1].write_summary(tmp_path / "s.json")
    write_refinement_csv(rows, tmp_path / "r.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "path_id,S_T,delta_term,impact_term,error" and len(lines) == 21
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "n_steps,rms_error,mean_error,escaped"
    assert '"rms_error"' in (tmp_path / "s.json").read_text()
