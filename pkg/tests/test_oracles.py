import itertools
import math

import numpy as np
import pytest

from repsim.calibration import calibrate_scalar
from repsim.metrics import MetricSpec, knn_sets
from repsim.oracles import (
    cross_cov_energy,
    exact_p_value,
    exact_permutation_null,
    expected_cross_cov_energy,
    expected_mknn_null,
    gumbel_max_approx,
    hypergeom_intersection_stats,
    max_inflation_bound,
    mknn_null_baseline,
)
from repsim.synthlab import run_depth_confounder

from conftest import gaussian


def test_expected_cross_cov_energy_examples():
    assert expected_cross_cov_energy(2, 1, 1) == 1.0
    assert expected_cross_cov_energy(10, 0, 5) == 0.0
    assert expected_cross_cov_energy(1025, 512, 512) == 256.0
    with pytest.raises(ValueError):
        expected_cross_cov_energy(1, 3, 3)


def test_cross_cov_energy_direct():
    X, Y = gaussian(0, 9, 3), gaussian(1, 9, 2)
    C = np.cov(X.T, Y.T)[:3, 3:]
    assert cross_cov_energy(X, Y) == pytest.approx(np.sum(C ** 2), rel=1e-12)


def test_expected_mknn_null_examples():
    assert expected_mknn_null(1024, 10) == pytest.approx(0.009775, abs=1e-6)
    assert expected_mknn_null(8, 7) == 1.0
    assert expected_mknn_null(5, 2) == 0.5
    mean, _ = hypergeom_intersection_stats(5, 2)
    assert mean / 2 == 0.5
    with pytest.raises(ValueError):
        expected_mknn_null(5, 5)


def test_hypergeom_examples():
    mean, var = hypergeom_intersection_stats(5, 2)
    assert mean == 1.0 and var == pytest.approx(1 / 3)
    assert hypergeom_intersection_stats(9, 8)[1] == 0.0
    with pytest.raises(ValueError):
        hypergeom_intersection_stats(2, 1)


def test_hypergeom_matches_enumeration():
    # n=6: anchor's neighbour sets are 2-subsets of the 5 other points
    subsets = list(itertools.combinations(range(5), 2))
    sizes = np.array([len(set(a) & set(b)) for a in subsets for b in subsets], dtype=float)
    mean, var = hypergeom_intersection_stats(6, 2)
    assert sizes.mean() == pytest.approx(mean, abs=1e-12)
    assert sizes.var() == pytest.approx(var, abs=1e-12)


def test_max_inflation_bound_examples():
    assert max_inflation_bound(0.2, 0.1, 2) == pytest.approx(0.2 + 0.3 * math.sqrt(math.log(2)))
    assert max_inflation_bound(0.2, 0.0, 100) == 0.2
    vals = [max_inflation_bound(0.0, 1.0, M) for M in range(2, 200)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        max_inflation_bound(0.0, 1.0, 1)


def test_gumbel_approx_is_below_bound():
    for M in (4, 16, 64, 4096):
        assert gumbel_max_approx(0, 1, M) < max_inflation_bound(0, 1, M)


def test_exact_null_examples():
    X = gaussian(0, 3, 2)
    assert exact_permutation_null(X, gaussian(1, 3, 2), "cka-linear").shape == (6,)
    Z = gaussian(2, 6, 2)
    null = exact_permutation_null(Z, Z, MetricSpec.from_name("mknn", k=1))
    assert null[0] == null.max() == 1.0
    with pytest.raises(ValueError):
        exact_permutation_null(gaussian(0, 8, 2), gaussian(1, 8, 2), "cka-linear")


@pytest.mark.parametrize("metric", ["cka-linear", MetricSpec.from_name("mknn", k=2)])
def test_sampled_null_mean_matches_exact(metric):
    X, Y = gaussian(3, 6, 3), gaussian(4, 6, 3)
    exact = exact_permutation_null(X, Y, metric)
    res = calibrate_scalar(X, Y, metric, K=500, seed=11)
    se = exact.std() / math.sqrt(500)
    assert abs(res.null_scores.mean() - exact.mean()) <= 3 * se


def test_exact_p_value_brackets_sampled():
    X, Y = gaussian(5, 6, 2), gaussian(6, 6, 2)
    Y[:, 0] += X[:, 0]
    pe = exact_p_value(X, Y, "cka-linear")
    ps = calibrate_scalar(X, Y, "cka-linear", K=500, seed=3).p_value
    assert abs(pe - ps) <= 3 * math.sqrt(pe * (1 - pe) / 500) + 1 / 501


@pytest.mark.property
def test_per_anchor_intersections_match_hypergeometric():
    n, k, trials = 64, 5, 200
    sizes = []
    for t in range(trials):
        NX = knn_sets(gaussian(10 + t, n, 4), k)
        NY = knn_sets(gaussian(5000 + t, n, 4), k)
        sizes.append(len(set(NX[0]) & set(NY[0])))
    mean, var = hypergeom_intersection_stats(n, k)
    sizes = np.array(sizes, dtype=float)
    assert abs(sizes.mean() - mean) <= 3 * math.sqrt(var / trials)
    # sample variance within 3 sigma (fourth moment bounded by max size k^2 scale)
    se_var = math.sqrt(2 * var ** 2 / (trials - 1) + np.var((sizes - mean) ** 2) / trials)
    assert abs(sizes.var(ddof=1) - var) <= 3 * se_var
    b = mknn_null_baseline(n, k)
    assert b.expectation == pytest.approx(k / (n - 1)) and b.variance == pytest.approx(var / k ** 2)


@pytest.mark.property
def test_raw_max_growth_within_inflation_bound():
    t = run_depth_confounder(L_list=(1, 2, 4, 8), n=64, d_over_n=4, K=9, trials=20, seed=1)
    rows = t.rows()
    means = [r["raw_max_mean"] for r in rows]
    assert all(b >= a for a, b in zip(means, means[1:]))
    for r in rows:
        if r["M"] >= 2:
            assert r["raw_max_mean"] <= max_inflation_bound(r["pair_mean"], r["pair_std"], r["M"])
