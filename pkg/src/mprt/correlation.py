"""Pseudo-likelihood estimation of latent correlation matrices for mixed data.

The estimate is built in two stages: independent pairwise maximum
likelihood fits, followed by a joint descent over hyperspherical angles
of the Cholesky factor so the result is always a valid correlation
matrix (symmetric, unit diagonal, PSD).

Angle convention: with ``U`` upper triangular and ``R = U^T U``, column
``i`` of ``U`` is a unit vector whose entries are::

    U[0, i] = cos(theta[0, i])
    U[j, i] = cos(theta[j, i]) * prod_{l < j} sin(theta[l, i])    0 < j < i
    U[i, i] = prod_{l < i} sin(theta[l, i])

so ``R[0, i] = cos(theta[0, i])`` and all angles equal to pi/2 give the
identity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bivariate import (
    PairKind,
    ThresholdVector,
    _PolyserialData,
    contingency_table,
    estimate_thresholds,
    fit_pair,
    loglik_cont_cont,
    loglik_polychoric,
)
from .datamodel import Dataset, ensure_standardized
from .exceptions import DataError, NumericalError

logger = logging.getLogger(__name__)

ANGLE_EPS = 1e-6
REPAIR_EIG_FLOOR = 1e-6


@dataclass
class CorrelationConfig:
    tol: float = 1e-7
    max_iters: int = 500
    min_rows_per_var: int = 10
    gradient: str = "analytic"  # or "fd": central differences over every angle
    fd_step: float = 1e-5
    max_halvings: int = 40


@dataclass
class CorrelationEstimate:
    """Result of :func:`estimate_correlation`.

    ``variables`` are dataset column indices in matrix order; ``thresholds``
    maps ordinal column indices to their cut points.
    """

    r_matrix: np.ndarray
    variables: list[int]
    thresholds: dict[int, ThresholdVector]
    objective: float
    iterations: int
    converged: bool
    raw_pairwise: np.ndarray | None = None
    repaired: bool = False
    history: list[float] = field(default_factory=list)

    def submatrix(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        """Block of ``r_matrix`` addressed by dataset column indices."""
        pos = {v: i for i, v in enumerate(self.variables)}
        return self.r_matrix[np.ix_([pos[r] for r in rows], [pos[c] for c in cols])]

    def to_json(self, names: Sequence[str]) -> dict:
        return {
            "variables": [names[v] for v in self.variables],
            "r": self.r_matrix.tolist(),
            "thresholds": {names[j]: t.tolist() for j, t in sorted(self.thresholds.items())},
            "converged": bool(self.converged),
            "objective": self.objective,
            "iterations": self.iterations,
        }


# --------------------------------------------------------- angle mapping


def clamp_angles(theta: np.ndarray) -> np.ndarray:
    """Clip the strictly upper triangle into ``[eps, pi - eps]``; zero elsewhere."""
    theta = np.asarray(theta, dtype=float)
    m = theta.shape[0]
    iu = np.triu_indices(m, 1)
    out = np.zeros((m, m))
    out[iu] = np.clip(theta[iu], ANGLE_EPS, math.pi - ANGLE_EPS)
    return out


def angles_to_cholesky(theta: np.ndarray) -> np.ndarray:
    """Upper-triangular ``U`` with unit-norm columns from an angle matrix."""
    theta = np.asarray(theta, dtype=float)
    m = theta.shape[0]
    u = np.zeros((m, m))
    u[0, 0] = 1.0
    for i in range(1, m):
        ang = theta[:i, i]
        sines = np.concatenate([[1.0], np.cumprod(np.sin(ang))])
        u[:i, i] = np.cos(ang) * sines[:i]
        u[i, i] = sines[i]
    return u


def correlation_from_angles(theta: np.ndarray) -> np.ndarray:
    u = angles_to_cholesky(theta)
    r = u.T @ u
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return r


def angles_from_correlation(r_matrix: np.ndarray) -> np.ndarray:
    """Invert :func:`correlation_from_angles` through a Cholesky factorization."""
    r_matrix = np.asarray(r_matrix, dtype=float)
    m = r_matrix.shape[0]
    try:
        u = np.linalg.cholesky(r_matrix).T
    except np.linalg.LinAlgError:
        raise NumericalError("repair required: matrix is not positive definite") from None
    u /= np.linalg.norm(u, axis=0)
    theta = np.zeros((m, m))
    for i in range(1, m):
        rest = 1.0
        for j in range(i):
            if rest <= 0.0:
                theta[j, i] = 0.5 * math.pi
                continue
            c = float(np.clip(u[j, i] / rest, -1.0, 1.0))
            theta[j, i] = math.acos(c)
            rest *= math.sin(theta[j, i])
    return clamp_angles(theta)


def _angle_jacobian_columns(theta: np.ndarray, u: np.ndarray, i: int) -> np.ndarray:
    """``d U[:, i] / d theta[j, i]`` for ``j < i`` as rows of an ``(i, m)`` array."""
    m = u.shape[0]
    jac = np.zeros((i, m))
    sin = np.sin(theta[:i, i])
    cos = np.cos(theta[:i, i])
    for j in range(i):
        prod_before = float(np.prod(sin[:j]))
        jac[j, j] = -sin[j] * prod_before
        cot = cos[j] / sin[j]
        jac[j, j + 1:i + 1] = u[j + 1:i + 1, i] * cot
    return jac


# ------------------------------------------------------ pseudo-likelihood


class _ContContTerm:
    __slots__ = ("s",)

    def __init__(self, s):
        self.s = s

    def __call__(self, r):
        return loglik_cont_cont(r, self.s)


class _PolyserialTerm:
    __slots__ = ("data",)

    def __init__(self, data):
        self.data = data

    def __call__(self, r):
        return self.data.const + self.data.interval_loglik(r)


class _PolychoricTerm:
    __slots__ = ("table", "ti", "tj")

    def __init__(self, table, ti, tj):
        self.table, self.ti, self.tj = table, ti, tj

    def __call__(self, r):
        return loglik_polychoric(r, self.table, self.ti, self.tj)


class PseudoLikelihood:
    """Summed pairwise negative log-likelihood over a variable subset."""

    def __init__(self, d: Dataset, subset: Sequence[int], thresholds: dict[int, ThresholdVector]):
        d = ensure_standardized(d)
        self.subset = list(subset)
        self.m = len(self.subset)
        self.pairs = []
        self.terms = []
        n = d.n_rows
        for a in range(self.m):
            for b in range(a + 1, self.m):
                i, j = self.subset[a], self.subset[b]
                kind = PairKind.of(d.is_ordinal(i), d.is_ordinal(j))
                if kind is PairKind.CONT_CONT:
                    term = _ContContTerm(float(d.column(i) @ d.column(j)) / (n - 1))
                elif kind is PairKind.CONT_ORD:
                    c, o = (i, j) if d.is_ordinal(j) else (j, i)
                    term = _PolyserialTerm(_PolyserialData(d.column(c), d.codes(o), thresholds[o]))
                else:
                    table = contingency_table(
                        d.codes(i), d.codes(j), thresholds[i].levels, thresholds[j].levels
                    )
                    term = _PolychoricTerm(table.astype(float), thresholds[i], thresholds[j])
                self.pairs.append((a, b))
                self.terms.append(term)

    def value_at(self, r_matrix: np.ndarray) -> float:
        return -sum(t(float(r_matrix[a, b])) for (a, b), t in zip(self.pairs, self.terms))

    def value(self, theta: np.ndarray) -> float:
        return self.value_at(correlation_from_angles(theta))

    def pair_gradient(self, r_matrix: np.ndarray) -> np.ndarray:
        """Symmetric matrix of ``d(objective)/dR[a, b]`` (central differences in r)."""
        g = np.zeros((self.m, self.m))
        for (a, b), t in zip(self.pairs, self.terms):
            r = float(r_matrix[a, b])
            h = min(1e-6, 0.5 * (1.0 - abs(r)))
            g[a, b] = g[b, a] = -(t(r + h) - t(r - h)) / (2.0 * h)
        return g

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        """Gradient over the strictly upper angle triangle (chain rule)."""
        u = angles_to_cholesky(theta)
        r = correlation_from_angles(theta)
        g = self.pair_gradient(r)
        out = np.zeros((self.m, self.m))
        for i in range(1, self.m):
            v = u @ g[:, i]
            out[:i, i] = _angle_jacobian_columns(theta, u, i) @ v
        return out

    def gradient_fd(self, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
        out = np.zeros((self.m, self.m))
        for j, i in zip(*np.triu_indices(self.m, 1)):
            tp = theta.copy()
            tm = theta.copy()
            tp[j, i] += step
            tm[j, i] -= step
            out[j, i] = (self.value(tp) - self.value(tm)) / (2.0 * step)
        return out


# ---------------------------------------------------------------- driver


def subset_thresholds(d: Dataset, subset: Sequence[int]) -> dict[int, ThresholdVector]:
    return {j: estimate_thresholds(d.codes(j), d.metas[j].levels) for j in subset if d.is_ordinal(j)}


def _check_subset(d: Dataset, subset: Sequence[int] | None) -> list[int]:
    if subset is None:
        return list(range(d.n_cols))
    subset = [int(j) for j in subset]
    if len(set(subset)) != len(subset):
        raise DataError("duplicate column in subset")
    for j in subset:
        if not 0 <= j < d.n_cols:
            raise DataError(f"column index {j} out of range")
    return subset


def pairwise_init(
    d: Dataset,
    subset: Sequence[int] | None = None,
    thresholds: dict[int, ThresholdVector] | None = None,
) -> tuple[np.ndarray, dict[int, ThresholdVector]]:
    """Independent per-pair maximum likelihood correlations.

    Returns the symmetric unit-diagonal matrix (possibly indefinite) and the
    thresholds of the ordinal columns involved.
    """
    d = ensure_standardized(d)
    subset = _check_subset(d, subset)
    if thresholds is None:
        thresholds = subset_thresholds(d, subset)
    m = len(subset)
    raw = np.eye(m)
    for a in range(m):
        for b in range(a + 1, m):
            i, j = subset[a], subset[b]
            kind = PairKind.of(d.is_ordinal(i), d.is_ordinal(j))
            ci = d.codes(i) if d.is_ordinal(i) else d.column(i)
            cj = d.codes(j) if d.is_ordinal(j) else d.column(j)
            raw[a, b] = raw[b, a] = fit_pair(kind, ci, cj, thresholds.get(i), thresholds.get(j))
    return raw, thresholds


def repair_correlation(r_matrix: np.ndarray, floor: float = REPAIR_EIG_FLOOR) -> np.ndarray:
    """Clip eigenvalues at ``floor`` and rescale back to unit diagonal."""
    w, v = np.linalg.eigh(r_matrix)
    fixed = (v * np.maximum(w, floor)) @ v.T
    s = 1.0 / np.sqrt(np.diag(fixed))
    fixed = fixed * s[:, None] * s[None, :]
    fixed = 0.5 * (fixed + fixed.T)
    np.fill_diagonal(fixed, 1.0)
    return fixed


def _needs_repair(r_matrix: np.ndarray) -> bool:
    if np.linalg.eigvalsh(r_matrix).min() < REPAIR_EIG_FLOOR:
        return True
    try:
        np.linalg.cholesky(r_matrix)
    except np.linalg.LinAlgError:
        return True
    return False


def estimate_correlation(
    d: Dataset,
    subset: Sequence[int] | None = None,
    config: CorrelationConfig | None = None,
) -> CorrelationEstimate:
    """Latent correlation matrix of ``subset`` by pairwise pseudo-likelihood.

    Pairwise fits seed a gradient descent over Cholesky angles with a
    monotone backtracking line search; an indefinite pairwise matrix is
    repaired by eigenvalue clipping first.
    """
    config = config or CorrelationConfig()
    d = ensure_standardized(d)
    subset = _check_subset(d, subset)
    m = len(subset)
    if d.n_rows < config.min_rows_per_var * m:
        raise DataError(
            f"need at least {config.min_rows_per_var * m} rows for {m} variables, got {d.n_rows}"
        )
    raw, thresholds = pairwise_init(d, subset)
    if m == 1:
        return CorrelationEstimate(np.eye(1), subset, thresholds, 0.0, 0, True, raw)

    repaired = _needs_repair(raw)
    start = repair_correlation(raw) if repaired else raw
    theta = angles_from_correlation(start)
    objective = PseudoLikelihood(d, subset, thresholds)
    grad_fn = objective.gradient if config.gradient == "analytic" else (
        lambda t: objective.gradient_fd(t, config.fd_step)
    )

    value = objective.value(theta)
    history = [value]
    converged = False
    iters = 0
    while iters < config.max_iters:
        iters += 1
        grad = grad_fn(theta)
        step = 1.0
        for _ in range(config.max_halvings):
            cand = clamp_angles(theta - step * grad)
            cand_value = objective.value(cand)
            if cand_value < value:
                break
            step *= 0.5
        else:
            # no descent direction left at machine precision
            converged = True
            break
        change = value - cand_value
        theta, value = cand, cand_value
        history.append(value)
        if change <= config.tol * max(abs(value), 1.0):
            converged = True
            break
    if not converged:
        logger.warning("correlation refinement hit max_iters=%d", config.max_iters)
    r_matrix = correlation_from_angles(theta)
    return CorrelationEstimate(
        r_matrix, subset, thresholds, value, iters, converged, raw, repaired, history
    )
