import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from oracles import (cox_de_boor, gram_schmidt_rank, loess_pointwise, solve_pivoted,
                     wilcoxon_enumeration_p)
from probelevel.core import (loess_fit, normal_cdf, normal_quantile, normal_sf, spline_basis,
                             spline_basis_matrix, spline_knots, weighted_least_squares,
                             wilcoxon_signed_rank_p)
from probelevel.errors import (DegenerateAbscissaeError, InsufficientDataError,
                               PositionOutOfBoundsError, SingularDesignError)


# ---- normal distribution -------------------------------------------------

@pytest.mark.parametrize("x", [-6.0, -2.5, -0.3, 0.0, 1.0, 3.7])
def test_normal_cdf_matches_quadrature(x):
    pdf = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    ref = integrate.quad(pdf, -np.inf, x, epsabs=1e-14, epsrel=1e-13)[0]
    assert normal_cdf(x) == pytest.approx(ref, rel=1e-10, abs=1e-15)


@given(st.floats(-8, 8))
def test_normal_cdf_symmetry(x):
    assert abs(normal_cdf(x) + normal_cdf(-x) - 1.0) <= 1e-12
    assert 0.0 <= normal_cdf(x) <= 1.0


@given(st.floats(-8, 8), st.floats(0.001, 3))
def test_normal_cdf_monotone(x, dx):
    assert normal_cdf(x + dx) >= normal_cdf(x)


def test_normal_tail_and_quantile():
    assert normal_sf(10.0) == pytest.approx(7.619853024160527e-24, rel=1e-10)
    assert normal_quantile(0.995) == pytest.approx(2.5758293035489, abs=1e-12)
    for p in (1e-6, 0.01, 0.3, 0.5, 0.99):
        assert normal_cdf(normal_quantile(p)) == pytest.approx(p, rel=1e-12)


# ---- Wilcoxon --------------------------------------------------------------

def test_wilcoxon_exact_matches_enumeration_small_n():
    rng = np.random.default_rng(11)
    for case in range(100):
        n = 3 + case % 10  # 3..12
        v = np.round(rng.normal(0.05, 0.2, size=n), 2)  # rounding creates ties
        tau = 0.015 if case % 2 else 0.0
        assert wilcoxon_signed_rank_p(v, tau) == wilcoxon_enumeration_p(list(v), tau)


def test_wilcoxon_examples():
    assert wilcoxon_signed_rank_p([1.0, 2.0, 3.0], 0.0) == 0.125
    assert wilcoxon_signed_rank_p([-1.0, -2.0, -3.0], 0.0) == 1.0
    assert wilcoxon_signed_rank_p([0.0, 0.0, 0.0], 0.0) == 1.0
    with pytest.raises(InsufficientDataError):
        wilcoxon_signed_rank_p([1.0, 2.0], 0.0)


def test_wilcoxon_normal_approximation_close_to_exact():
    rng = np.random.default_rng(5)
    v = rng.normal(0.1, 1.0, size=40)
    # exact value by dynamic programming at n = 40 through a copy of the rule
    ranks = np.argsort(np.argsort(np.abs(v))) + 1
    w = int(ranks[v > 0].sum())
    counts = np.zeros(40 * 41 // 2 + 1)
    counts[0] = 1
    for r in range(1, 41):
        counts[r:] = counts[r:] + counts[:-r].copy()
    exact = counts[w:].sum() / 2.0 ** 40
    assert wilcoxon_signed_rank_p(v) == pytest.approx(exact, abs=2e-3)


# ---- loess -------------------------------------------------------------------

def test_loess_matches_pointwise_wls():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 10, size=300)
    y = np.sin(x) + rng.normal(0, 0.3, size=300)
    fit = loess_fit(x, y, span=0.3)
    ref = loess_pointwise(x, y, fit.anchors, 0.3)
    np.testing.assert_allclose(fit.values, ref, rtol=1e-10, atol=1e-12)


def test_loess_grid_anchors_match_pointwise_wls():
    rng = np.random.default_rng(4)
    x = rng.uniform(-3, 3, size=500)
    y = x ** 2 + rng.normal(0, 0.5, size=500)
    fit = loess_fit(x, y, span=0.4, max_anchors=50)
    assert fit.anchors.size == 50
    ref = loess_pointwise(x, y, fit.anchors, 0.4)
    np.testing.assert_allclose(fit.values, ref, rtol=1e-10, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-5, 5), st.integers(0, 2 ** 31))
def test_loess_exact_on_affine_data(slope, icpt, seed):
    x = np.random.default_rng(seed).uniform(0, 1, size=40)
    fit = loess_fit(x, icpt + slope * x, span=0.5)
    np.testing.assert_allclose(fit(x), icpt + slope * x, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_loess_invariant_to_point_order(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=60)
    y = rng.normal(size=60)
    perm = rng.permutation(60)
    a = loess_fit(x, y, 0.4)
    b = loess_fit(x[perm], y[perm], 0.4)
    np.testing.assert_array_equal(a.anchors, b.anchors)
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12, atol=1e-12)


def test_loess_errors_and_interpolation():
    with pytest.raises(DegenerateAbscissaeError):
        loess_fit(np.ones(20), np.arange(20.0))
    with pytest.raises(InsufficientDataError):
        loess_fit(np.arange(5.0), np.arange(5.0))
    fit = loess_fit(np.arange(20.0), np.arange(20.0) * 2, 0.5)
    assert np.all(np.diff(fit.anchors) > 0)
    assert fit(3.5) == pytest.approx(7.0)
    assert fit(-10.0) == pytest.approx(fit.values[0])


def test_smoothfit_round_trip():
    fit = loess_fit(np.arange(30.0), np.sqrt(np.arange(30.0)), 0.4)
    again = type(fit).from_dict(fit.to_dict())
    np.testing.assert_array_equal(again.values, fit.values)


# ---- splines -----------------------------------------------------------------

def _full_basis_oracle(df, length):
    knots = list(spline_knots(df, length))
    return np.array([[cox_de_boor(knots, 3, b, float(p)) for b in range(df + 1)]
                     for p in range(1, length + 1)])


def test_spline_basis_matches_de_boor_recursion():
    full = _full_basis_oracle(5, 25)
    np.testing.assert_allclose(spline_basis_matrix(5, 25), full[:, 1:], atol=1e-14)
    np.testing.assert_allclose(full.sum(axis=1), 1.0, atol=1e-12)


@given(st.integers(1, 25), st.integers(3, 8))
def test_spline_partition_of_unity_and_nonnegative(pos, df):
    b = spline_basis(pos, df)
    full = _full_basis_oracle(df, 25)[pos - 1]
    assert np.all(b >= 0)
    assert b.sum() + full[0] == pytest.approx(1.0, abs=1e-12)


def test_spline_rank_and_boundaries():
    B = spline_basis_matrix(5, 25)
    assert gram_schmidt_rank(B) == 5
    full = _full_basis_oracle(5, 25)
    assert full[0].sum() == pytest.approx(1.0) and full[-1].sum() == pytest.approx(1.0)
    with pytest.raises(PositionOutOfBoundsError, match="position out of bounds"):
        spline_basis(26)
    with pytest.raises(PositionOutOfBoundsError):
        spline_basis(0)


def test_spline_local_support():
    knots = spline_knots(7, 25)
    B = np.column_stack([_full_basis_oracle(7, 25)[:, 0], spline_basis_matrix(7, 25)])
    pos = np.arange(1, 26)
    for b in range(B.shape[1]):
        outside = (pos < knots[b]) | (pos > knots[b + 4])
        assert np.all(B[outside, b] == 0.0)


# ---- weighted least squares -------------------------------------------------

def test_wls_identity_and_exact_data():
    y = np.array([1.0, -2.0, 3.5])
    np.testing.assert_allclose(weighted_least_squares(np.eye(3), y), y, atol=1e-14)
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    np.testing.assert_allclose(weighted_least_squares(X, 2 - 0.5 * np.arange(10.0)),
                               [2.0, -0.5], atol=1e-10)


def test_wls_matches_normal_equations():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(50, 4))
    y = rng.normal(size=50)
    w = rng.uniform(0.1, 3, size=50)
    b = weighted_least_squares(X, y, w)
    ref = solve_pivoted(X.T @ (w[:, None] * X), X.T @ (w * y))
    np.testing.assert_allclose(b, ref, rtol=1e-10)
    assert np.linalg.norm(X.T @ (w * (y - X @ b))) <= 1e-8 * np.linalg.norm(X.T @ (w * y))


def test_wls_singular_design():
    X = np.column_stack([np.ones(6), np.ones(6)])
    with pytest.raises(SingularDesignError, match="singular design"):
        weighted_least_squares(X, np.arange(6.0))
    # rank deficient only on the positively weighted rows
    X = np.column_stack([np.ones(4), [0, 0, 0, 1.0]])
    with pytest.raises(SingularDesignError):
        weighted_least_squares(X, np.arange(4.0), [1, 1, 1, 0])
