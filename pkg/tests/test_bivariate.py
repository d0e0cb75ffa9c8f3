import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mprt.bivariate import (
    R_BOUND,
    PairKind,
    ThresholdVector,
    bounded_minimize,
    bvn_cdf,
    contingency_table,
    estimate_thresholds,
    fit_pair,
    loglik_cont_cont,
    loglik_polychoric,
    loglik_polyserial,
    rectangle_probs,
    std_normal_cdf,
    std_normal_quantile,
)
from mprt.datamodel import discretize_column
from mprt.exceptions import DataError, NumericalError

from oracles import grid_argmax

# Frozen from oracles.bvn_cdf_quad (Plackett integral with adaptive quadrature),
# cross-checked against oracles.bvn_cdf_dblquad.
BVN_CASES = [
    ((0.3, -0.7, 0.6), 0.2171672254519064),
    ((-1.2, 0.4, -0.8), 0.00909110957866864),
    ((1.5, 1.5, 0.95), 0.9169398022579285),
    ((-2.0, -2.0, -0.3), 5.3132170622335656e-05),
]

# Frozen from oracles.norm_quantile_bisect.
QUANTILES = [(0.025, -1.9599639845400545), (0.3, -0.5244005127080409), (0.9, 1.2815515655446004)]


@pytest.mark.parametrize("args,expected", BVN_CASES)
def test_bvn_against_quadrature(args, expected):
    assert bvn_cdf(*args) == pytest.approx(expected, abs=1e-12)


def test_bvn_quarter_plus_arcsin():
    assert bvn_cdf(0.0, 0.0, 0.5) == pytest.approx(1.0 / 3.0, abs=1e-12)
    for r in np.linspace(-0.95, 0.95, 9):
        assert bvn_cdf(0.0, 0.0, r) == pytest.approx(0.25 + math.asin(r) / (2 * math.pi), abs=1e-13)


def test_bvn_infinite_limits():
    assert bvn_cdf(np.inf, 0.7, 0.4) == pytest.approx(std_normal_cdf(0.7), abs=1e-15)
    assert bvn_cdf(-0.2, np.inf, -0.4) == pytest.approx(std_normal_cdf(-0.2), abs=1e-15)
    assert bvn_cdf(-np.inf, 0.3, 0.2) == 0.0
    assert bvn_cdf(np.inf, np.inf, 0.9) == 1.0


def test_bvn_rejects_unit_correlation():
    with pytest.raises(DataError):
        bvn_cdf(0.0, 0.0, 1.0)


def test_bvn_broadcasts():
    out = bvn_cdf(np.array([[0.0], [1.0]]), np.array([[0.0, 1.0]]), 0.3)
    assert out.shape == (2, 2)
    assert out[1, 0] == pytest.approx(bvn_cdf(1.0, 0.0, 0.3), abs=1e-15)


@settings(max_examples=80, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-0.98, 0.98))
def test_bvn_symmetries(x, y, r):
    assert bvn_cdf(x, y, r) == pytest.approx(bvn_cdf(y, x, r), abs=1e-12)
    # Phi2(x, -y; -r) = Phi(x) - Phi2(x, y; r)
    assert bvn_cdf(x, -y, -r) == pytest.approx(std_normal_cdf(x) - bvn_cdf(x, y, r), abs=1e-12)
    assert 0.0 <= bvn_cdf(x, y, r) <= min(std_normal_cdf(x), std_normal_cdf(y)) + 1e-15


@pytest.mark.parametrize("p,expected", QUANTILES)
def test_quantile(p, expected):
    assert std_normal_quantile(p) == pytest.approx(expected, abs=1e-12)


def test_quantile_domain():
    assert std_normal_quantile(0.5) == 0.0
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(DataError):
            std_normal_quantile(bad)


def test_threshold_estimation():
    codes = np.array([1] * 25 + [2] * 50 + [3] * 25)
    t = estimate_thresholds(codes, 3)
    assert t.tolist() == pytest.approx([std_normal_quantile(0.25), std_normal_quantile(0.75)], abs=1e-15)
    assert t.extended[0] == -np.inf and t.extended[-1] == np.inf


def test_threshold_empty_extreme_level():
    with pytest.raises(DataError, match="extreme level is empty"):
        estimate_thresholds(np.array([1, 2, 2, 1]), 3)


def test_threshold_empty_interior_level():
    with pytest.raises(DataError, match="interior level is empty"):
        estimate_thresholds(np.array([1, 3, 3, 1]), 3)


def test_threshold_vector_validation():
    with pytest.raises(DataError):
        ThresholdVector(np.array([0.5, 0.1]))


def test_cont_cont_maximizer_is_sample_correlation():
    for s in (-0.7, 0.0, 0.35, 0.9):
        assert fit_pair(PairKind.CONT_CONT, *_pair_with_corr(s)) == pytest.approx(s, abs=1e-5)
    assert loglik_cont_cont(0.999999999, 0.2) < loglik_cont_cont(0.2, 0.2)


def _pair_with_corr(s, n=400):
    rng = np.random.default_rng(3)
    z = rng.normal(size=(n, 2))
    z -= z.mean(0)
    # exact sample correlation s via whitening then mixing
    w = np.linalg.cholesky(np.cov(z.T))
    z = z @ np.linalg.inv(w).T
    z = z @ np.linalg.cholesky(np.array([[1, s], [s, 1]])).T
    z /= z.std(0, ddof=1)
    return z[:, 0], z[:, 1]


def _latent_pair(r, n, seed):
    rng = np.random.default_rng(seed)
    z = rng.multivariate_normal([0, 0], [[1, r], [r, 1]], size=n)
    return z[:, 0], z[:, 1]


def test_polyserial_fit_matches_grid_oracle():
    x, y = _latent_pair(0.6, 800, 11)
    codes = discretize_column(y, [-0.5, 0.8])
    thr = estimate_thresholds(codes, 3)
    xs = (x - x.mean()) / x.std(ddof=1)
    got = fit_pair(PairKind.CONT_ORD, xs, codes, None, thr)
    ref = grid_argmax(lambda r: loglik_polyserial(r, xs, codes, thr))
    assert got == pytest.approx(ref, abs=1e-5)
    # either argument order
    assert fit_pair(PairKind.CONT_ORD, codes, xs, thr, None) == pytest.approx(got, abs=1e-12)


def test_polychoric_fit_matches_grid_oracle():
    x, y = _latent_pair(-0.45, 1500, 12)
    a, b = discretize_column(x, [-0.3, 0.9]), discretize_column(y, [-1.0, 0.1, 1.2])
    ta, tb = estimate_thresholds(a, 3), estimate_thresholds(b, 4)
    got = fit_pair(PairKind.ORD_ORD, a, b, ta, tb)
    table = contingency_table(a, b, 3, 4)
    ref = grid_argmax(lambda r: loglik_polychoric(r, table, ta, tb))
    assert got == pytest.approx(ref, abs=1e-5)


def test_polyserial_kernel_direct_formula():
    x = np.array([-1.0, 0.2, 0.7, 1.5])
    codes = np.array([1, 2, 2, 3])
    thr = ThresholdVector(np.array([-0.4, 0.6]))
    r = 0.3
    s = math.sqrt(1 - r * r)
    ext = thr.extended
    direct = np.mean(
        [
            -0.5 * xi * xi - 0.5 * math.log(2 * math.pi)
            + math.log(std_normal_cdf((ext[c] - r * xi) / s) - std_normal_cdf((ext[c - 1] - r * xi) / s))
            for xi, c in zip(x, codes)
        ]
    )
    assert loglik_polyserial(r, x, codes, thr) == pytest.approx(direct, abs=1e-13)


def test_rectangle_probs_sum_to_one_and_marginals():
    ti, tj = ThresholdVector(np.array([-0.5, 0.7])), ThresholdVector(np.array([0.0]))
    probs = rectangle_probs(0.4, ti, tj)
    assert probs.sum() == pytest.approx(1.0, abs=1e-14)
    assert probs.sum(axis=1) == pytest.approx(np.diff(std_normal_cdf(ti.extended)), abs=1e-14)
    assert np.all(probs > 0)


def test_polychoric_table_shape_checked():
    ti = ThresholdVector(np.array([0.0]))
    with pytest.raises(DataError):
        loglik_polychoric(0.1, np.ones((3, 2)), ti, ti)


def test_fit_stays_in_bounds_for_perfect_association():
    x = np.linspace(-2, 2, 300)
    xs = (x - x.mean()) / x.std(ddof=1)
    codes = discretize_column(x, [-0.5, 0.5])
    thr = estimate_thresholds(codes, 3)
    r = fit_pair(PairKind.CONT_ORD, xs, codes, None, thr)
    assert abs(r) <= R_BOUND
    assert r > 0.95


def test_pair_kind_errors():
    thr = ThresholdVector(np.array([0.0]))
    with pytest.raises(DataError):
        fit_pair(PairKind.CONT_ORD, np.zeros(3), np.ones(3), None, None)
    with pytest.raises(DataError):
        fit_pair(PairKind.ORD_ORD, np.ones(3), np.ones(3), thr, None)


def test_bounded_minimize_quadratic_and_failure():
    x, fx, _ = bounded_minimize(lambda t: (t - 0.3) ** 2, -1, 1)
    assert x == pytest.approx(0.3, abs=1e-6)
    x, _, _ = bounded_minimize(lambda t: t, -0.5, 0.5)
    assert x == pytest.approx(-0.5, abs=1e-5)
    with pytest.raises(NumericalError):
        bounded_minimize(lambda t: math.sin(40 * t), -1, 1, maxiter=2)
