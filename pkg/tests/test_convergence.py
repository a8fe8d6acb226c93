import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlbs.convergence import (build_mu_family, convergence_study, softplus_n, window_mask,
                              write_convergence_csv)
from nlbs.errors import InvalidParams
from nlbs.grid import SpaceTimeGrid
from nlbs.impact import lambda_from_mu
from nlbs.payoffs import Payoff
from nlbs.pde import solve
from nlbs.impact import NoImpact

GRID = SpaceTimeGrid(40.0, 250.0, 400, 200, time_grading=2.0)


class TestFamily:
    def test_normalised(self):
        for gm in (0.5, 2.0, 300.0):
            for n in (1, 3, 50):
                assert build_mu_family(gm, n)(0.0) == pytest.approx(1.0, rel=1e-15)

    def test_blows_up_past_bound(self):
        vals = [build_mu_family(2.0, n)(3.0) for n in (5, 20, 80)]
        assert vals[0] < vals[1] < vals[2] and vals[2] > 1e15

    def test_sampled_monotone_F(self):
        fam = build_mu_family(2.0, 4)
        f = fam.F(np.linspace(-4.0, 1.9, 2000))
        assert np.all(np.diff(f) >= 0)

    def test_positive_and_smooth(self):
        fam = build_mu_family(2.0, 3)
        g = np.linspace(-50, 50, 5001)
        mu = fam(g)
        assert np.all(mu > 0) and np.all(np.isfinite(mu))
        # no kinks: second differences stay bounded on a fine grid
        assert np.max(np.abs(np.diff(np.log(mu), 2))) < 1e-2

    def test_approaches_linear_below_half(self):
        g = np.linspace(-3.0, 1.0, 200)
        err = [np.max(np.abs(build_mu_family(2.0, n)(g) - 1 / (1 - g / 2.0))) for n in (2, 8, 32)]
        assert err[0] > err[1] > err[2] and err[2] < 1e-5

    def test_invalid(self):
        with pytest.raises(InvalidParams):
            build_mu_family(0.0, 2)
        with pytest.raises(InvalidParams):
            build_mu_family(1.0, 0.5)

    def test_admissible_amplification(self):
        g = np.union1d(np.linspace(-5.0, 1.5, 131), [0.0])
        fam = build_mu_family(2.0, 4)
        tab = lambda_from_mu(g, fam(g), 0.2, slope_rtol=0.2)
        assert min(tab.lambdas) >= 0

    def test_softplus_limit(self):
        y = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
        np.testing.assert_allclose(softplus_n(y, 500.0), np.maximum(y, 0.0), atol=2e-3)


@given(st.floats(-20.0, 30.0).filter(lambda g: g > 1e-9), st.integers(1, 30))
def test_pointwise_monotone_in_n(g, n):
    a = build_mu_family(10.0, n)(g)
    b = build_mu_family(10.0, n + 1)(g)
    assert b >= a * (1 - 1e-12)


def test_huge_bound_matches_black_scholes():
    rows, ref = convergence_study(Payoff.put(100.0), 0.2, 1e12, [1, 4], GRID, workers=1)
    bs = solve(Payoff.put(100.0), NoImpact(), 0.2, 1.0, GRID)
    mask = window_mask(bs)
    assert np.max(np.abs(ref.values - bs.values)[mask]) < 1e-6
    for r in rows:
        assert r.sup_distance < 1e-6 and r.max_gamma_excess == 0.0


def test_short_put_monotone():
    rows, _ = convergence_study(Payoff.put(100.0), 0.2, 100.0, [1, 2, 4, 8], GRID)
    d = [r.sup_distance for r in rows]
    e = [r.max_gamma_excess for r in rows]
    assert all(b <= a for a, b in zip(d, d[1:]))
    assert all(b <= a for a, b in zip(e, e[1:]))


def test_long_call_monotone():
    rows, _ = convergence_study(Payoff.call(100.0), 0.2, 50.0, [1, 2, 4, 8], GRID)
    d = [r.sup_distance for r in rows]
    assert all(np.isfinite(d)) and all(b <= a for a, b in zip(d, d[1:]))


def test_worker_count_does_not_matter():
    a, _ = convergence_study(Payoff.call_spread(90, 110), 0.2, 20.0, [1, 3],
                             GRID.with_(n_time=40), workers=1)
    b, _ = convergence_study(Payoff.call_spread(90, 110), 0.2, 20.0, [1, 3],
                             GRID.with_(n_time=40), workers=3)
    assert a == b


def test_window_and_csv(tmp_path):
    surf = solve(Payoff.put(100.0), NoImpact(), 0.2, 1.0, GRID.with_(n_space=100, n_time=20))
    m = window_mask(surf)
    assert m.shape == surf.values.shape
    assert not m[-1].any() and m[0, 50] and not m[0, 0]
    rows, _ = convergence_study(Payoff.put(100.0), 0.2, 100.0, [1], GRID.with_(n_time=20))
    write_convergence_csv(rows, tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().startswith("n,sup_distance,max_gamma_excess\n1,")
