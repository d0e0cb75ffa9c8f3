"""Rank tests for cross-covariance matrices.

``mprt`` is the mixed-data permutation rank test: CCA on a pseudo-likelihood
correlation estimate, a Bartlett-type statistic on the trailing canonical
correlations, and a permutation null obtained by re-estimating only the
cross block between ``X`` and row-permuted ``Y``. ``ccart`` is the
classical chi-square CCA rank test, used as a baseline.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from ._rng import rng_for
from .bivariate import PairKind, ThresholdVector, _PolyserialData, _maximize, contingency_table, loglik_polychoric
from .correlation import CorrelationConfig, estimate_correlation
from .datamodel import Dataset, VariableSet, ensure_standardized
from .exceptions import DataError, NumericalError

EIG_FLOOR = 1e-10
DEFAULT_PERMS = 200


class Method(str, enum.Enum):
    MPRT = "mprt"
    CCART_C = "ccart-c"
    CCART_D = "ccart-d"
    CCART_DE = "ccart-de"


class DfConvention(str, enum.Enum):
    PAPER = "paper"          # (P - k + 1)(Q - k + 1)
    CLASSICAL = "classical"  # (P - k)(Q - k)


@dataclass(frozen=True)
class RankHypothesis:
    """``H0: rank(Sigma_XY) <= k``."""

    vars: VariableSet
    k: int

    def __post_init__(self):
        if not 0 <= self.k <= self.vars.k_max:
            raise DataError(f"k must lie in [0, {self.vars.k_max}], got {self.k}")

    @classmethod
    def of(cls, x: Sequence[int], y: Sequence[int], k: int) -> "RankHypothesis":
        return cls(VariableSet(tuple(x), tuple(y)), k)


@dataclass
class CcaSolution:
    a_matrix: np.ndarray
    b_matrix: np.ndarray
    scores: np.ndarray


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    statistic: float
    p_value: float
    method: Method
    num_permutations: int
    decision: bool
    alpha: float
    seed: int | None
    k: int
    p: int
    q: int
    n: int
    df_convention: str | None = None
    perm_statistics: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self, emit_perms: bool = False) -> dict:
        out = {
            "statistic": _json_float(self.statistic),
            "p_value": self.p_value,
            "method": self.method.value,
            "num_permutations": self.num_permutations,
            "decision": self.decision,
            "alpha": self.alpha,
            "seed": self.seed,
            "k": self.k,
            "p": self.p,
            "q": self.q,
            "n": self.n,
            "df_convention": self.df_convention,
            "diagnostics": self.diagnostics,
        }
        if emit_perms and self.perm_statistics is not None:
            out["perm_statistics"] = [_json_float(v) for v in self.perm_statistics]
        return out


def _json_float(v: float):
    v = float(v)
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


# ---------------------------------------------------------------- algebra


def inv_sqrt(mat: np.ndarray, floor: float = EIG_FLOOR, strict: bool = True) -> tuple[np.ndarray, float]:
    """Symmetric inverse square root and condition number.

    With ``strict`` an eigenvalue below ``floor`` raises; otherwise it is
    floored.
    """
    mat = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(mat)
    if strict and w.min() < floor:
        raise NumericalError("degenerate within-set covariance")
    w = np.maximum(w, floor)
    return (v / np.sqrt(w)) @ v.T, float(w.max() / w.min())


def cca(sigma_x: np.ndarray, sigma_xy: np.ndarray, sigma_y: np.ndarray) -> CcaSolution:
    """Canonical directions and correlations from covariance blocks via SVD."""
    sigma_x = np.atleast_2d(np.asarray(sigma_x, dtype=float))
    sigma_y = np.atleast_2d(np.asarray(sigma_y, dtype=float))
    sigma_xy = np.asarray(sigma_xy, dtype=float).reshape(sigma_x.shape[0], sigma_y.shape[0])
    k_max = min(sigma_xy.shape)
    wx, _ = inv_sqrt(sigma_x)
    wy, _ = inv_sqrt(sigma_y)
    u, s, vt = np.linalg.svd(wx @ sigma_xy @ wy)
    return CcaSolution(
        a_matrix=wx @ u[:, :k_max],
        b_matrix=wy @ vt.T[:, :k_max],
        scores=np.clip(s[:k_max], 0.0, 1.0),
    )


def _bartlett_factor(n: int, p: int, q: int) -> float:
    return n - 0.5 * (p + q + 3)


def _log_residual_product(residual: np.ndarray) -> float:
    residual = np.abs(np.asarray(residual, dtype=float))
    if residual.size == 0:
        return 0.0
    if np.any(residual >= 1.0):
        return -math.inf
    return float(np.sum(np.log1p(-residual * residual)))


def bartlett_statistic(scores: Sequence[float], n: int, p: int, q: int, k: int) -> float:
    """``-(N - (P+Q+3)/2) * sum_{i>k} log(1 - r_i^2)``; ``+inf`` if some ``r_i >= 1``."""
    scores = np.asarray(scores, dtype=float)
    if not 0 <= k <= scores.size:
        raise DataError(f"k={k} outside [0, {scores.size}]")
    log_prod = _log_residual_product(scores[k:])
    if log_prod == -math.inf:
        return math.inf
    return -_bartlett_factor(n, p, q) * log_prod


def chi_square_df(p: int, q: int, k: int, df_convention: DfConvention | str = DfConvention.PAPER) -> int:
    conv = DfConvention(df_convention)
    return (p - k + 1) * (q - k + 1) if conv is DfConvention.PAPER else (p - k) * (q - k)


def chi_square_pvalue(
    lambda_k: float, p: int, q: int, k: int, df_convention: DfConvention | str = DfConvention.PAPER
) -> float:
    """Chi-square survival probability of ``lambda_k``.

    ``paper`` uses ``(P-k+1)(Q-k+1)`` degrees of freedom, ``classical`` the
    Bartlett ``(P-k)(Q-k)``.
    """
    df = chi_square_df(p, q, k, df_convention)
    if df <= 0:
        raise DataError(f"nonpositive chi-square degrees of freedom ({df})")
    if lambda_k < 0:
        raise DataError("statistic must be non-negative")
    return float(chi2.sf(lambda_k, df))


class ResidualProjector:
    """Maps a cross block to the residual canonical correlations beyond ``k``.

    Holds the whitened residual projections so each permutation costs two
    small matrix products and an SVD.
    """

    def __init__(self, sol: CcaSolution, sigma_x: np.ndarray, sigma_y: np.ndarray, k: int):
        a_res = sol.a_matrix[:, k:]
        b_res = sol.b_matrix[:, k:]
        wx, cond_x = inv_sqrt(a_res.T @ sigma_x @ a_res, strict=False)
        wy, cond_y = inv_sqrt(b_res.T @ sigma_y @ b_res, strict=False)
        self.left = wx @ a_res.T
        self.right = b_res @ wy
        self.k = k
        self.conditioning = max(cond_x, cond_y)

    def residual_scores(self, cross: np.ndarray) -> np.ndarray:
        if self.left.shape[0] == 0:
            return np.zeros(0)
        return np.linalg.svd(self.left @ cross @ self.right, compute_uv=False)

    def statistic(self, cross: np.ndarray, n: int, p: int, q: int) -> float:
        log_prod = _log_residual_product(self.residual_scores(cross))
        if log_prod == -math.inf:
            return math.inf
        return -_bartlett_factor(n, p, q) * log_prod


def residual_statistic(
    sol: CcaSolution,
    sigma_x: np.ndarray,
    sigma_y: np.ndarray,
    cross: np.ndarray,
    k: int,
    n: int,
    p: int,
    q: int,
) -> float:
    """Bartlett statistic of the canonical correlations between the residual
    canonical variates (directions ``k+1..K``) implied by ``cross``."""
    if k >= sol.scores.size:
        return 0.0
    return ResidualProjector(sol, sigma_x, sigma_y, k).statistic(np.asarray(cross, dtype=float), n, p, q)


# ---------------------------------------------------------- permutations


class CrossBlockEstimator:
    """Estimates the ``P x Q`` correlation block between ``X`` and row-permuted ``Y``.

    Continuous pairs use the standardized cross moment; pairs involving an
    ordinal column are refit by maximum likelihood with fixed thresholds.
    """

    def __init__(self, d: Dataset, vars: VariableSet, thresholds: dict[int, ThresholdVector]):
        d = ensure_standardized(d)
        self.n = d.n_rows
        self.x = list(vars.x_indices)
        self.y = list(vars.y_indices)
        self.thresholds = thresholds
        self.d = d
        cont_x = [a for a, i in enumerate(self.x) if not d.is_ordinal(i)]
        cont_y = [b for b, j in enumerate(self.y) if not d.is_ordinal(j)]
        self._cont_x = cont_x
        self._cont_y = cont_y
        self._xc = d.values[:, [self.x[a] for a in cont_x]]
        self._yc = d.values[:, [self.y[b] for b in cont_y]]
        self._ord_pairs = []
        for a, i in enumerate(self.x):
            for b, j in enumerate(self.y):
                kind = PairKind.of(d.is_ordinal(i), d.is_ordinal(j))
                if kind is not PairKind.CONT_CONT:
                    self._ord_pairs.append((a, b, i, j, kind))
        for idx in self.x + self.y:
            if d.is_ordinal(idx) and idx not in thresholds:
                raise DataError(f"missing thresholds for ordinal column {idx}")

    def block(self, perm: np.ndarray | None = None) -> np.ndarray:
        d = self.d
        out = np.zeros((len(self.x), len(self.y)))
        if perm is None:
            perm = np.arange(self.n)
        if self._cont_x and self._cont_y:
            out[np.ix_(self._cont_x, self._cont_y)] = self._xc.T @ self._yc[perm] / (self.n - 1)
        for a, b, i, j, kind in self._ord_pairs:
            if kind is PairKind.ORD_ORD:
                ti, tj = self.thresholds[i], self.thresholds[j]
                table = contingency_table(d.codes(i), d.codes(j)[perm], ti.levels, tj.levels).astype(float)
                out[a, b] = _maximize(lambda r: loglik_polychoric(r, table, ti, tj), 0.0)
            elif d.is_ordinal(j):
                data = _PolyserialData(d.column(i), d.codes(j)[perm], self.thresholds[j])
                out[a, b] = _maximize(data.interval_loglik, 0.0)
            else:
                data = _PolyserialData(d.column(j)[perm], d.codes(i), self.thresholds[i])
                out[a, b] = _maximize(data.interval_loglik, 0.0)
        return out


def permuted_cross_block(
    d: Dataset, vars: VariableSet, perm: np.ndarray, thresholds: dict[int, ThresholdVector]
) -> np.ndarray:
    """Cross-correlation estimate between ``X`` and ``Y`` with ``Y`` rows permuted."""
    perm = np.asarray(perm, dtype=np.intp)
    if perm.shape != (d.n_rows,) or not np.array_equal(np.sort(perm), np.arange(d.n_rows)):
        raise DataError("perm must be a permutation of range(N)")
    return CrossBlockEstimator(d, vars, thresholds).block(perm)


def pvalue_from_permutations(lambda_obs: float, lambda_perms: Sequence[float]) -> float:
    """``(1 + #{perm >= obs}) / (1 + B)``."""
    perms = np.asarray(lambda_perms, dtype=float)
    if perms.size == 0:
        raise DataError("need at least one permutation statistic")
    return float((1 + np.count_nonzero(perms >= lambda_obs)) / (1 + perms.size))


def draw_permutation(seed: int, replicate: int, n: int) -> np.ndarray:
    """Permutation number ``replicate`` of the stream keyed by ``seed``."""
    return rng_for(seed, replicate).permutation(n)


# --------------------------------------------------------------- drivers


def _vacuous_report(method, hyp, n, alpha, seed, df=None) -> TestReport:
    return TestReport(0.0, 1.0, method, 0, True, alpha, seed, hyp.k, hyp.vars.p, hyp.vars.q, n, df)


def mprt(
    d: Dataset,
    hyp: RankHypothesis,
    alpha: float = 0.05,
    num_perms: int = DEFAULT_PERMS,
    seed: int = 0,
    corr_config: CorrelationConfig | None = None,
) -> TestReport:
    """Mixed-data permutation rank test of ``rank(Sigma_XY) <= k``."""
    if num_perms < 1:
        raise DataError("num_perms must be >= 1")
    d = ensure_standardized(d)
    vars_ = hyp.vars
    vars_.validate(d.n_cols)
    n, p, q, k = d.n_rows, vars_.p, vars_.q, hyp.k
    if k == vars_.k_max:
        return _vacuous_report(Method.MPRT, hyp, n, alpha, seed)

    est = estimate_correlation(d, vars_.union(), corr_config)
    x, y = list(vars_.x_indices), list(vars_.y_indices)
    sx, sxy, sy = est.submatrix(x, x), est.submatrix(x, y), est.submatrix(y, y)
    sol = cca(sx, sxy, sy)
    proj = ResidualProjector(sol, sx, sy, k)
    lam_obs = proj.statistic(sxy, n, p, q)

    estimator = CrossBlockEstimator(d, vars_, est.thresholds)
    lam_perms = np.array(
        [proj.statistic(estimator.block(draw_permutation(seed, b, n)), n, p, q) for b in range(num_perms)]
    )
    p_value = pvalue_from_permutations(lam_obs, lam_perms)
    return TestReport(
        statistic=lam_obs,
        p_value=p_value,
        method=Method.MPRT,
        num_permutations=num_perms,
        decision=p_value >= alpha,
        alpha=alpha,
        seed=seed,
        k=k,
        p=p,
        q=q,
        n=n,
        perm_statistics=lam_perms,
        diagnostics={
            "scores": sol.scores.tolist(),
            "corr_converged": est.converged,
            "corr_iterations": est.iterations,
            "corr_repaired": est.repaired,
            "residual_conditioning": proj.conditioning,
        },
    )


def sample_correlation(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    sd = values.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise DataError("zero-variance column")
    z = (values - values.mean(axis=0)) / sd
    return z.T @ z / (values.shape[0] - 1)


def ccart_from_correlation(
    corr: np.ndarray,
    n: int,
    hyp: RankHypothesis,
    alpha: float = 0.05,
    method: Method | str = Method.CCART_C,
    df_convention: DfConvention | str = DfConvention.PAPER,
) -> TestReport:
    """Chi-square CCA rank test on a correlation matrix indexed like the dataset."""
    method = Method(method)
    df_convention = DfConvention(df_convention)
    corr = np.asarray(corr, dtype=float)
    x, y = list(hyp.vars.x_indices), list(hyp.vars.y_indices)
    p, q, k = hyp.vars.p, hyp.vars.q, hyp.k
    if k == hyp.vars.k_max:
        return _vacuous_report(method, hyp, n, alpha, None, df_convention.value)
    sol = cca(corr[np.ix_(x, x)], corr[np.ix_(x, y)], corr[np.ix_(y, y)])
    lam = bartlett_statistic(sol.scores, n, p, q, k)
    p_value = chi_square_pvalue(lam, p, q, k, df_convention)
    return TestReport(
        lam, p_value, method, 0, p_value >= alpha, alpha, None, k, p, q, n,
        df_convention.value, diagnostics={"scores": sol.scores.tolist()},
    )


def ccart(
    d: Dataset,
    hyp: RankHypothesis,
    alpha: float = 0.05,
    variant: Method | str = Method.CCART_C,
    df_convention: DfConvention | str = DfConvention.PAPER,
    corr_config: CorrelationConfig | None = None,
) -> TestReport:
    """Classical CCA rank test with the variant's correlation matrix.

    ``ccart-c`` needs all-continuous data; ``ccart-d`` treats ordinal codes
    as numbers; ``ccart-de`` plugs in the pseudo-likelihood estimate.
    """
    variant = Method(variant)
    hyp.vars.validate(d.n_cols)
    if variant is Method.CCART_C:
        if d.ordinal_mask.any():
            raise DataError("ccart-c needs all-continuous data")
        corr = sample_correlation(d.values)
    elif variant is Method.CCART_D:
        corr = sample_correlation(d.values)
    elif variant is Method.CCART_DE:
        union = hyp.vars.union()
        est = estimate_correlation(ensure_standardized(d), union, corr_config)
        corr = np.eye(d.n_cols)
        corr[np.ix_(union, union)] = est.r_matrix
    else:
        raise DataError("ccart variants are ccart-c, ccart-d, ccart-de")
    return ccart_from_correlation(corr, d.n_rows, hyp, alpha, variant, df_convention)
