from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from infovalue.oos.ols import CollinearityError, absorb_factors, fit_ols_clustered

# 6-row fixture: one regressor, constant, two clusters of three rows
X6 = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
Y6 = np.array([1.0, 3.0, 2.0, 5.0, 4.0, 7.0])
G6 = ["a", "a", "a", "b", "b", "b"]


def test_hand_sandwich_six_rows():
    # Slope and intercept by the textbook formulas.
    xbar, ybar = X6.mean(), Y6.mean()
    b1 = np.sum((X6 - xbar) * (Y6 - ybar)) / np.sum((X6 - xbar) ** 2)
    b0 = ybar - b1 * xbar
    e = Y6 - b0 - b1 * X6
    # Bread written out for the 2x2 case.
    sx, sxx = X6.sum(), (X6 * X6).sum()
    det = 6 * sxx - sx * sx
    bread = np.array([[sxx, -sx], [-sx, 6.0]]) / det
    meat = np.zeros((2, 2))
    for g in ("a", "b"):
        m = np.array([c == g for c in G6])
        s = np.array([e[m].sum(), (X6[m] * e[m]).sum()])
        meat += np.outer(s, s)
    V = bread @ meat @ bread
    res = fit_ols_clustered(X6, Y6, G6)
    assert_allclose(res.coefficients, [b0, b1], rtol=1e-13)
    assert_allclose(res.covariance, V, rtol=1e-12, atol=1e-15)
    assert_allclose(res.clustered_se, np.sqrt(np.diag(V)), rtol=1e-12)


def test_singleton_clusters_reduce_to_hc0():
    rng = np.random.default_rng(0)
    n = 50
    X = rng.standard_normal((n, 2))
    y = X @ [0.5, -1.0] + rng.standard_normal(n) * (1 + np.abs(X[:, 0]))
    ids = list(range(n))
    A = np.column_stack([np.ones(n), X])
    beta = np.linalg.lstsq(A, y, rcond=None)[0]
    e = y - A @ beta
    bread = np.linalg.inv(A.T @ A)
    hc0 = bread @ (A.T * e**2) @ A @ bread
    one = fit_ols_clustered(X, y, ids)
    # two-way with singletons: V_a + V_b - V_ab = HC0 + HC0 - HC0
    two = fit_ols_clustered(X, y, ids, [f"x{i}" for i in ids])
    assert_allclose(one.covariance, hc0, rtol=1e-10)
    assert_allclose(two.covariance, hc0, rtol=1e-10)


def test_absorbing_dummy_regressor_is_collinear():
    rng = np.random.default_rng(1)
    g = np.repeat([0, 1, 2], 10)
    dummy = (g == 1).astype(float)
    X = np.column_stack([rng.standard_normal(30), dummy])
    with pytest.raises(CollinearityError):
        fit_ols_clustered(X, rng.standard_normal(30), g, absorb=[g])


def test_absorbed_factor_matches_dummies():
    rng = np.random.default_rng(2)
    n = 90
    g = rng.integers(0, 5, n)
    x = rng.standard_normal(n) + 0.3 * g
    y = 0.7 * x + g * 1.5 + rng.standard_normal(n)
    clusters = rng.integers(0, 9, n)
    D = np.eye(5)[g][:, 1:]
    full = fit_ols_clustered(np.column_stack([x, D]), y, clusters)
    fe = fit_ols_clustered(x, y, clusters, absorb=[g])
    assert fe.coefficients[0] == pytest.approx(full.coefficients[1], rel=1e-10)
    assert fe.clustered_se[0] == pytest.approx(full.clustered_se[1], rel=1e-8)
    assert fe.adj_r2 == pytest.approx(full.adj_r2, rel=1e-10)
    assert fe.absorbed_levels == 5


def test_two_factor_absorption_matches_dummies():
    rng = np.random.default_rng(3)
    n = 200
    a, b = rng.integers(0, 6, n), rng.integers(0, 4, n)
    x = rng.standard_normal(n) + 0.2 * a - 0.3 * b
    y = 1.2 * x + a - b + rng.standard_normal(n)
    D = np.column_stack([np.eye(6)[a][:, 1:], np.eye(4)[b][:, 1:]])
    full = fit_ols_clustered(np.column_stack([x, D]), y, a, b)
    fe = fit_ols_clustered(x, y, a, b, absorb=[a, b])
    assert fe.coefficients[0] == pytest.approx(full.coefficients[1], rel=1e-7)
    assert fe.adj_r2 == pytest.approx(full.adj_r2, rel=1e-7)


def test_absorb_single_factor_is_group_demeaning():
    M = np.array([1.0, 3.0, 10.0, 14.0])
    f = np.array([0, 0, 1, 1])
    assert_allclose(absorb_factors(M, [f]), [-1.0, 1.0, -2.0, 2.0])


def test_negative_diagonal_is_clipped():
    rng = np.random.default_rng(4)
    n = 40
    X = rng.standard_normal(n)
    y = rng.standard_normal(n)
    res = fit_ols_clustered(X, y, rng.integers(0, 3, n), rng.integers(0, 3, n))
    assert np.all(res.clustered_se >= 0)
    assert np.all(np.isfinite(res.clustered_se))


def test_input_errors():
    with pytest.raises(ValueError):
        fit_ols_clustered(X6, Y6[:5], G6)
    with pytest.raises(ValueError):
        fit_ols_clustered(X6, Y6, G6[:5])
    with pytest.raises(ValueError, match="two levels"):
        fit_ols_clustered(X6, Y6, G6, absorb=[[0] * 6])
    with pytest.raises(ValueError):
        fit_ols_clustered(X6[:2], Y6[:2], G6[:2])
    with pytest.raises(CollinearityError):
        fit_ols_clustered(np.column_stack([X6, 2 * X6]), Y6, G6)


def test_small_sample_factor():
    base = fit_ols_clustered(X6, Y6, G6)
    adj = fit_ols_clustered(X6, Y6, G6, small_sample=True)
    assert_allclose(adj.covariance, base.covariance * 2.0, rtol=1e-14)
