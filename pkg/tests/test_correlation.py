import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mprt.correlation import (
    ANGLE_EPS,
    CorrelationConfig,
    PseudoLikelihood,
    angles_from_correlation,
    angles_to_cholesky,
    clamp_angles,
    correlation_from_angles,
    estimate_correlation,
    pairwise_init,
    repair_correlation,
    subset_thresholds,
)
from mprt.datamodel import ColumnMeta, make_dataset, standardize
from mprt.exceptions import DataError, NumericalError
from mprt.harness.generators import apply_discretization, sample_gaussian


def _random_theta(m, rng):
    theta = np.zeros((m, m))
    iu = np.triu_indices(m, 1)
    theta[iu] = rng.uniform(0.05, math.pi - 0.05, size=len(iu[0]))
    return theta


def _mixed(sigma, n, seed, cols=(1, 3)):
    latent = sample_gaussian(sigma, n, seed)
    return standardize(apply_discretization(latent, {"columns": list(cols)}, seed=seed + 1))


R4 = np.array(
    [
        [1.0, 0.5, 0.3, -0.2],
        [0.5, 1.0, 0.4, 0.1],
        [0.3, 0.4, 1.0, 0.35],
        [-0.2, 0.1, 0.35, 1.0],
    ]
)


def test_angle_examples():
    t = np.array([[0.0, math.pi / 2], [0.0, 0.0]])
    assert np.allclose(angles_to_cholesky(t), np.eye(2), atol=1e-15)
    t[0, 1] = math.pi / 3
    assert correlation_from_angles(t)[0, 1] == pytest.approx(0.5, abs=1e-15)
    assert angles_from_correlation(np.array([[1, 0.5], [0.5, 1]]))[0, 1] == pytest.approx(math.pi / 3, abs=1e-12)
    ident = angles_from_correlation(np.eye(4))
    assert np.allclose(ident[np.triu_indices(4, 1)], math.pi / 2)


def test_near_boundary_angle():
    t = clamp_angles(np.array([[0.0, 0.0], [0.0, 0.0]]))
    r = correlation_from_angles(t)
    assert t[0, 1] == ANGLE_EPS
    assert 1 - 1e-11 < r[0, 1] < 1.0
    assert np.linalg.eigvalsh(r).min() >= -1e-12


def test_unit_columns_and_psd_sweep():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = int(rng.integers(2, 7))
        theta = _random_theta(m, rng)
        u = angles_to_cholesky(theta)
        assert np.allclose(np.linalg.norm(u, axis=0), 1.0, atol=1e-12)
        r = correlation_from_angles(theta)
        assert np.all(np.diag(r) == 1.0)
        assert np.linalg.eigvalsh(r).min() >= -1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_round_trip(m, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(m, m + 2))
    cov = a @ a.T
    s = 1 / np.sqrt(np.diag(cov))
    r = cov * np.outer(s, s)
    back = correlation_from_angles(angles_from_correlation(r))
    assert np.linalg.norm(back - r) < 1e-8


def test_indefinite_needs_repair():
    bad = np.array([[1, 0.9, -0.9], [0.9, 1, 0.9], [-0.9, 0.9, 1]])
    with pytest.raises(NumericalError, match="repair required"):
        angles_from_correlation(bad)
    fixed = repair_correlation(bad)
    assert np.allclose(np.diag(fixed), 1.0)
    assert np.linalg.eigvalsh(fixed).min() > 0
    angles_from_correlation(fixed)


def test_pairwise_init_continuous_is_sample_correlation():
    d = standardize(make_dataset(sample_gaussian(R4, 5000, 4), [ColumnMeta.continuous(f"c{i}") for i in range(4)]))
    raw, thr = pairwise_init(d)
    assert thr == {}
    sample = np.corrcoef(d.values.T)
    assert np.linalg.norm(raw - sample) < 1e-4


def test_pairwise_init_mixed_recovers_truth():
    d = _mixed(R4, 10_000, 21)
    raw, thr = pairwise_init(d)
    assert set(thr) == {1, 3}
    assert np.max(np.abs(raw - R4)) < 0.05


def test_single_pair_subset():
    d = _mixed(R4, 2000, 5)
    raw, _ = pairwise_init(d, [0, 1])
    est = estimate_correlation(d, [0, 1])
    assert raw.shape == (2, 2) and raw[0, 1] == raw[1, 0]
    assert est.r_matrix[0, 1] == pytest.approx(raw[0, 1], abs=1e-6)


def test_estimate_continuous_close_to_sample():
    d = standardize(make_dataset(sample_gaussian(R4, 5000, 8), [ColumnMeta.continuous(f"c{i}") for i in range(4)]))
    est = estimate_correlation(d)
    assert np.linalg.norm(est.r_matrix - np.corrcoef(d.values.T)) < 0.05


def test_estimate_identity_truth_mixed():
    d = _mixed(np.eye(4), 5000, 13)
    est = estimate_correlation(d)
    off = est.r_matrix[~np.eye(4, dtype=bool)]
    assert np.max(np.abs(off)) < 0.06


def test_rank_deficient_truth_is_psd():
    lam = np.array([0.9, 0.8, 0.95])
    r = np.outer(lam, lam)
    np.fill_diagonal(r, 1.0)
    d = _mixed(r, 600, 3, cols=(0, 2))
    est = estimate_correlation(d)
    assert np.linalg.eigvalsh(est.r_matrix).min() >= -1e-8
    assert np.all(np.diag(est.r_matrix) == 1.0)
    assert np.all(np.abs(est.r_matrix) <= 1.0)


def test_objective_monotone():
    d = _mixed(R4, 800, 17)
    est = estimate_correlation(d)
    assert np.all(np.diff(est.history) <= 1e-15)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    for m, seed in ((3, 31), (4, 32), (5, 33)):
        a = rng.normal(size=(m, m))
        cov = a @ a.T + m * np.eye(m)
        s = 1 / np.sqrt(np.diag(cov))
        d = _mixed(cov * np.outer(s, s), 1000, seed, cols=tuple(range(1, m, 2)))
        subset = list(range(m))
        obj = PseudoLikelihood(d, subset, subset_thresholds(d, subset))
        theta = _random_theta(m, rng)
        g, g_fd = obj.gradient(theta), obj.gradient_fd(theta, 1e-5)
        iu = np.triu_indices(m, 1)
        assert np.max(np.abs(g[iu] - g_fd[iu])) <= 1e-3 * max(1.0, np.max(np.abs(g_fd[iu])))


def test_fd_gradient_config_agrees():
    d = _mixed(R4, 1000, 9)
    a = estimate_correlation(d)
    b = estimate_correlation(d, config=CorrelationConfig(gradient="fd"))
    assert np.max(np.abs(a.r_matrix - b.r_matrix)) < 1e-4


def test_row_guard():
    d = _mixed(R4, 30, 1)
    with pytest.raises(DataError, match="rows"):
        estimate_correlation(d)


def test_submatrix_and_json():
    d = _mixed(R4, 1000, 2)
    est = estimate_correlation(d, [3, 0, 1])
    assert est.submatrix([0], [3])[0, 0] == est.r_matrix[1, 0]
    js = est.to_json(d.names)
    assert js["variables"] == ["V3", "V0", "V1"]
    assert set(js["thresholds"]) == {"V1", "V3"}
    assert js["converged"] is True
