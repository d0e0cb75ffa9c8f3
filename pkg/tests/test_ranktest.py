import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mprt.datamodel import ColumnMeta, VariableSet, make_dataset, standardize
from mprt.exceptions import DataError, NumericalError
from mprt.harness.generators import apply_discretization, gen_rank_instance, sample_gaussian
from mprt.ranktest import (
    DfConvention,
    Method,
    RankHypothesis,
    ResidualProjector,
    bartlett_statistic,
    cca,
    ccart,
    chi_square_df,
    chi_square_pvalue,
    draw_permutation,
    mprt,
    permuted_cross_block,
    pvalue_from_permutations,
    residual_statistic,
)
from mprt.correlation import subset_thresholds

from oracles import cca_cholesky, projected_permutation_statistic


def _random_blocks(p, q, rng, n=None):
    a = rng.normal(size=(p + q, p + q + 2))
    cov = a @ a.T
    return cov[:p, :p], cov[:p, p:], cov[p:, p:]


def _continuous(values):
    return make_dataset(values, [ColumnMeta.continuous(f"c{j}") for j in range(values.shape[1])])


def test_cca_canonical_example():
    sol = cca(np.eye(2), np.diag([0.8, 0.3]), np.eye(2))
    assert sol.scores == pytest.approx([0.8, 0.3], abs=1e-15)
    assert np.allclose(np.abs(sol.a_matrix), np.eye(2)) and np.allclose(np.abs(sol.b_matrix), np.eye(2))
    assert np.all(cca(np.eye(3), np.zeros((3, 2)), np.eye(2)).scores == 0)


@pytest.mark.parametrize("p,q", [(3, 2), (2, 4), (3, 3), (1, 3)])
def test_cca_invariants(p, q):
    rng = np.random.default_rng(p * 10 + q)
    sx, sxy, sy = _random_blocks(p, q, rng)
    sol = cca(sx, sxy, sy)
    k = min(p, q)
    assert np.allclose(sol.a_matrix.T @ sx @ sol.a_matrix, np.eye(k), atol=1e-8)
    assert np.allclose(sol.b_matrix.T @ sy @ sol.b_matrix, np.eye(k), atol=1e-8)
    assert np.allclose(sol.a_matrix.T @ sxy @ sol.b_matrix, np.diag(sol.scores), atol=1e-8)
    assert np.all(np.diff(sol.scores) <= 0)
    assert sol.scores == pytest.approx(cca_cholesky(sx, sxy, sy)[2], abs=1e-10)


def test_cca_degenerate():
    with pytest.raises(NumericalError, match="degenerate within-set covariance"):
        cca(np.array([[1.0, 1.0], [1.0, 1.0]]), np.zeros((2, 1)), np.eye(1))


def test_bartlett_examples():
    # oracle: scalar arithmetic -96.5 * log(0.75 * 0.99), -96.5 * log(0.99)
    assert bartlett_statistic([0.5, 0.1], 100, 2, 2, 0) == pytest.approx(28.731177401459757, abs=1e-10)
    assert bartlett_statistic([0.5, 0.1], 100, 2, 2, 1) == pytest.approx(0.9698574098628899, abs=1e-12)
    assert bartlett_statistic([0.5, 0.1], 100, 2, 2, 2) == 0.0
    assert bartlett_statistic([1.0, 0.1], 100, 2, 2, 0) == math.inf
    with pytest.raises(DataError):
        bartlett_statistic([0.5], 100, 1, 1, 2)


def test_chi_square_pvalue():
    assert chi_square_pvalue(0.0, 2, 2, 0) == 1.0
    assert chi_square_pvalue(1e6, 2, 2, 0) < 1e-300
    # df = 1, 4, 9 under the classical convention with P = Q; oracle: lower gamma series
    for p, ref in ((2, 0.31731050786291437), (3, 0.40600584970983833), (4, 0.43727418891386716)):
        df = chi_square_df(p, p, 1, "classical")
        got = chi_square_pvalue(float(df), p, p, 1, "classical")
        assert df == (p - 1) ** 2
        assert got == pytest.approx(ref, abs=1e-12)
        assert 0.3 < got < 0.6
    assert chi_square_pvalue(10.0, 2, 2, 1) == pytest.approx(0.040427681994512965, abs=1e-12)
    assert chi_square_df(3, 4, 1) == 12 and chi_square_df(3, 4, 1, DfConvention.CLASSICAL) == 6
    with pytest.raises(DataError):
        chi_square_pvalue(1.0, 2, 2, 2, "classical")
    with pytest.raises(DataError):
        chi_square_pvalue(-1.0, 2, 2, 0)


def test_pvalue_from_permutations():
    assert pvalue_from_permutations(5, np.arange(1, 11)) == pytest.approx(7 / 11)
    assert pvalue_from_permutations(100, np.arange(10)) == pytest.approx(1 / 11)
    assert pvalue_from_permutations(-math.inf, np.arange(10)) == 1.0
    with pytest.raises(DataError):
        pvalue_from_permutations(1.0, [])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_residual_statistic_identity(p, q, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(80, p + q)) @ rng.normal(size=(p + q, p + q))
    s = np.cov(x.T)
    sx, sxy, sy = s[:p, :p], s[:p, p:], s[p:, p:]
    sol = cca(sx, sxy, sy)
    for k in range(min(p, q)):
        lam = bartlett_statistic(sol.scores, 80, p, q, k)
        assert residual_statistic(sol, sx, sy, sxy, k, 80, p, q) == pytest.approx(lam, rel=1e-9, abs=1e-9)
        assert residual_statistic(sol, sx, sy, np.zeros_like(sxy), k, 80, p, q) == 0.0


def test_residual_statistic_matches_projected_permutation():
    rng = np.random.default_rng(4)
    n, p, q = 150, 3, 2
    vals = rng.normal(size=(n, p + q)) @ rng.normal(size=(p + q, p + q))
    d = standardize(_continuous(vals))
    vs = VariableSet(tuple(range(p)), tuple(range(p, p + q)))
    s = d.values.T @ d.values / (n - 1)
    sx, sxy, sy = s[:p, :p], s[:p, p:], s[p:, p:]
    sol = cca(sx, sxy, sy)
    for b in range(5):
        perm = draw_permutation(9, b, n)
        cross = permuted_cross_block(d, vs, perm, {})
        assert np.allclose(cross, d.values[:, :p].T @ d.values[perm, p:] / (n - 1), atol=1e-14)
        for k in range(2):
            ref = projected_permutation_statistic(vals[:, :p], vals[:, p:], perm, k)
            assert residual_statistic(sol, sx, sy, cross, k, n, p, q) == pytest.approx(ref, abs=1e-8)


def test_permuted_cross_block_identity_and_validation():
    sigma = gen_rank_instance(2, 2, 1, 3)
    d = standardize(apply_discretization(sample_gaussian(sigma, 500, 1), "half", seed=2))
    vs = VariableSet((0, 1), (2, 3))
    thr = subset_thresholds(d, [0, 1, 2, 3])
    from mprt.correlation import pairwise_init

    raw, _ = pairwise_init(d, [0, 1, 2, 3], thr)
    ident = permuted_cross_block(d, vs, np.arange(500), thr)
    assert np.allclose(ident, raw[:2, 2:], atol=1e-12)
    with pytest.raises(DataError):
        permuted_cross_block(d, vs, np.zeros(500, dtype=int), thr)


def test_permuted_cross_block_independence():
    d = standardize(apply_discretization(sample_gaussian(np.eye(4), 5000, 5), "half", seed=6))
    vs = VariableSet((0, 1), (2, 3))
    thr = subset_thresholds(d, [0, 1, 2, 3])
    block = permuted_cross_block(d, vs, draw_permutation(1, 0, 5000), thr)
    assert np.max(np.abs(block)) < 0.05


def test_projector_conditioning_reported():
    rng = np.random.default_rng(0)
    sx, sxy, sy = _random_blocks(3, 3, rng)
    proj = ResidualProjector(cca(sx, sxy, sy), sx, sy, 1)
    assert proj.conditioning >= 1.0


def _mixed_rank_data(rank, n, seed, k_strength=1.0):
    sigma = gen_rank_instance(3, 3, rank, seed, k_strength)
    return apply_discretization(sample_gaussian(sigma, n, seed + 1), "half", seed=seed + 2)


def test_mprt_vacuous_and_hypothesis_bounds():
    d = _mixed_rank_data(1, 300, 0)
    rep = mprt(d, RankHypothesis.of([0, 1], [2, 3, 4], 2), num_perms=5)
    assert (rep.statistic, rep.p_value, rep.decision) == (0.0, 1.0, True)
    with pytest.raises(DataError):
        RankHypothesis.of([0, 1], [2, 3], 3)
    with pytest.raises(DataError):
        mprt(d, RankHypothesis.of([0], [1], 0), num_perms=0)


def test_mprt_deterministic_and_report_fields():
    d = _mixed_rank_data(1, 400, 3)
    hyp = RankHypothesis.of([0, 1, 2], [3, 4, 5], 1)
    a = mprt(d, hyp, num_perms=30, seed=11)
    b = mprt(d, hyp, num_perms=30, seed=11)
    assert a.to_json(True) == b.to_json(True)
    assert a.method is Method.MPRT and a.num_permutations == 30
    assert a.decision == (a.p_value >= a.alpha)
    assert len(a.to_json(emit_perms=True)["perm_statistics"]) == 30
    assert "perm_statistics" not in a.to_json()
    assert 1 / 31 <= a.p_value <= 1


def test_mprt_alpha_monotone():
    d = _mixed_rank_data(2, 600, 7, 0.4)
    hyp = RankHypothesis.of([0, 1, 2], [3, 4, 5], 1)
    ps = {alpha: mprt(d, hyp, alpha, num_perms=40, seed=1) for alpha in (0.01, 0.05, 0.2)}
    rejected = [not r.decision for r in ps.values()]
    assert rejected == sorted(rejected)


def test_mprt_detects_strong_signal():
    d = _mixed_rank_data(1, 1000, 5)
    rep = mprt(d, RankHypothesis.of([0, 1, 2], [3, 4, 5], 0), num_perms=50)
    assert not rep.decision and rep.p_value == pytest.approx(1 / 51)


def test_ccart_variants():
    sigma = gen_rank_instance(3, 3, 1, 9)
    latent = sample_gaussian(sigma, 800, 10)
    cont = _continuous(latent)
    mixed = apply_discretization(latent, "half", seed=11)
    hyp = RankHypothesis.of([0, 1, 2], [3, 4, 5], 1)
    c = ccart(cont, hyp, variant="ccart-c", df_convention="classical")
    ref_scores = cca_cholesky(*(lambda s: (s[:3, :3], s[:3, 3:], s[3:, 3:]))(np.corrcoef(latent.T)))[2]
    assert c.statistic == pytest.approx(-(800 - 4.5) * np.sum(np.log(1 - ref_scores[1:] ** 2)), rel=1e-10)
    assert c.df_convention == "classical"
    with pytest.raises(DataError):
        ccart(mixed, hyp, variant="ccart-c")
    for v in ("ccart-d", "ccart-de"):
        rep = ccart(mixed, hyp, variant=v)
        assert 0 <= rep.p_value <= 1 and rep.method.value == v


def test_ccart_d_sees_full_rank_on_discretized_rank_one():
    # one latent factor drives every column; coarse codes break the rank-1 structure
    rng = np.random.default_rng(0)
    n = 20000
    f = rng.normal(size=n)
    latent = np.c_[[0.9 * f + math.sqrt(1 - 0.81) * rng.normal(size=n) for _ in range(6)]].T
    mixed = apply_discretization(latent, "all", seed=1)
    rep = ccart(mixed, RankHypothesis.of([0, 1, 2], [3, 4, 5], 1), variant="ccart-d", df_convention="classical")
    assert not rep.decision
