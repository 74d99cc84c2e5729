import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from oracles import eb_iterate
from pollwait.shrink import REGION_COLUMNS, GroupEstimate, adjust_region_tables, eb_adjust


def _groups(raw, se):
    return [GroupEstimate(f"g{i}", r, s) for i, (r, s) in enumerate(zip(raw, se))]


def test_identical_groups_unchanged():
    res = eb_adjust(_groups([4.0] * 5, [2.0] * 5))
    assert res.tau2 == 0.0
    assert all(v == pytest.approx(4.0) for v in res.adjusted.values())


def test_single_group_returned_raw():
    res = eb_adjust([GroupEstimate("only", 3.5, 1.2)])
    assert res.single_group
    assert res.adjusted == {"only": 3.5}


def test_two_group_fixed_point():
    res = eb_adjust(_groups([0.0, 10.0], [1.0, 1.0]), tol=1e-12)
    mu, tau2, adj = eb_iterate([0.0, 10.0], [1.0, 1.0])
    assert res.converged
    assert res.mu == pytest.approx(mu, abs=1e-6) and mu == pytest.approx(5.0)
    assert res.tau2 == pytest.approx(tau2, abs=1e-6) and tau2 == pytest.approx(24.0)
    assert [res.adjusted["g0"], res.adjusted["g1"]] == pytest.approx(adj, abs=1e-6)
    assert adj == pytest.approx([0.2, 9.8])


@pytest.mark.parametrize("seed", range(5))
def test_random_groups_match_extended_precision(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(3, 40))
    se = rng.uniform(0.2, 5, k)
    raw = rng.normal(10, 3, k) + rng.normal(0, se)
    res = eb_adjust(_groups(raw, se), tol=1e-13, max_iter=100_000)
    mu, tau2, adj = eb_iterate(raw, se)
    assert res.mu == pytest.approx(mu, abs=1e-6)
    assert res.tau2 == pytest.approx(tau2, abs=1e-6)
    np.testing.assert_allclose([res.adjusted[f"g{i}"] for i in range(k)], adj, atol=1e-6)


def test_bad_groups_excluded():
    gs = _groups([1.0, 2.0, math.nan, 4.0], [1.0, 0.0, 1.0, 1.0])
    res = eb_adjust(gs)
    assert sorted(res.excluded) == ["g1", "g2"]
    assert set(res.adjusted) == {"g0", "g3"}


def test_non_convergence_flag():
    res = eb_adjust(_groups([0.0, 10.0, 3.0, 25.0], [1.0, 4.0, 0.5, 9.0]), max_iter=1)
    assert not res.converged and res.iterations == 1


def test_clamp_flag_and_full_shrink():
    res = eb_adjust(_groups([1.0, 1.1, 0.9], [5.0, 5.0, 5.0]))
    assert res.clamped and res.tau2 == 0.0
    assert all(v == pytest.approx(res.mu) for v in res.adjusted.values())


raws = st.lists(st.floats(-100, 100), min_size=2, max_size=20)


@given(raws, st.data())
def test_adjusted_between_raw_and_mu(raw, data):
    se = data.draw(st.lists(st.floats(0.1, 50), min_size=len(raw), max_size=len(raw)))
    res = eb_adjust(_groups(raw, se))
    for i, r in enumerate(raw):
        a = res.adjusted[f"g{i}"]
        lo, hi = min(r, res.mu), max(r, res.mu)
        assert lo - 1e-9 <= a <= hi + 1e-9
    assert res.tau2 >= 0


@given(st.floats(-50, 50), st.floats(0.1, 10), st.floats(0.1, 10), raws)
def test_shrinkage_monotone_in_se(r, se_a, se_b, others):
    assume(se_a > se_b)
    gs = [GroupEstimate("a", r, se_a), GroupEstimate("b", r, se_b)] + _groups(others, [1.0] * len(others))
    res = eb_adjust(gs)
    assert abs(res.adjusted["a"] - res.mu) <= abs(res.adjusted["b"] - res.mu) + 1e-9


@given(raws, st.floats(0.1, 20))
def test_scale_equivariance(raw, k):
    se = [1.0 + (i % 3) for i in range(len(raw))]
    a = eb_adjust(_groups(raw, se), tol=1e-12, max_iter=100_000)
    b = eb_adjust(_groups([k * r for r in raw], [k * s for s in se]), tol=1e-12 * k * k, max_iter=100_000)
    for g in a.adjusted:
        assert b.adjusted[g] == pytest.approx(k * a.adjusted[g], rel=1e-6, abs=1e-6 * k)


def _effects(means, sds, ns, disp, dse):
    return pd.DataFrame({"region": [f"R{i}" for i in range(len(means))], "n": ns, "mean": means, "sd": sds,
                         "disparity": disp, "disparity_se": dse})


def test_region_table_layout_and_small_n_blanks():
    eff = _effects([10, 12, 15, 20], [8, 8, 8, 8], [100, 100, 10, 100], [1, 2, 3, 4], [1, 1, 1, 1])
    out = adjust_region_tables(eff, min_n=30)
    assert list(out.columns) == REGION_COLUMNS
    assert np.isnan(out.loc[2, "adjusted_mean"]) and np.isnan(out.loc[2, "adjusted_disparity"])
    assert out.drop(index=2)["adjusted_mean"].notna().all()


def test_equal_precision_preserves_order():
    eff = _effects([10, 14, 11, 30, 2], [9] * 5, [100] * 5, [-3, 5, 1, 9, 0], [2] * 5)
    out = adjust_region_tables(eff)
    assert list(np.argsort(out["adjusted_mean"])) == list(np.argsort(out["raw_mean"]))
    assert list(np.argsort(out["adjusted_disparity"])) == list(np.argsort(out["raw_disparity"]))


def test_small_n_moves_further():
    eff = _effects([10, 10, 20, 30, 40, 20], [20] * 6, [40, 4000, 500, 500, 500, 500], [0] * 6, [1] * 6)
    out = adjust_region_tables(eff, min_n=30)
    mu = eb_adjust([GroupEstimate(r, m, s) for r, m, s in zip(eff["region"], eff["mean"], eff["sd"] / np.sqrt(eff["n"]))]).mu
    assert abs(out.loc[0, "adjusted_mean"] - mu) < abs(out.loc[1, "adjusted_mean"] - mu)


def test_noisy_outlier_lands_near_grand_mean():
    rng = np.random.default_rng(0)
    raw = list(rng.normal(5, 2, 40)) + [-117.11]
    se = [1.5] * 40 + [92.15]
    res = eb_adjust(_groups(raw, se))
    adj = res.adjusted["g40"]
    assert abs(adj) < 117.11
    assert abs(adj - res.mu) < 0.05 * abs(-117.11 - res.mu)
