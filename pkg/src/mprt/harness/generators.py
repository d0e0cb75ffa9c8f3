"""Synthetic data: linear-Gaussian SCMs, rank-controlled covariances, random discretization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .._rng import rng_for
from ..causal import Pdag
from ..datamodel import ColumnMeta, Dataset, discretize_column
from ..exceptions import DataError

DEFAULT_COEFF_RANGE = (0.5, 2.0)
DEFAULT_NOISE_RANGE = (0.5, 1.5)
MAX_RESAMPLES = 1000


@dataclass(frozen=True, eq=False)
class ScmSpec:
    """Linear SCM ``V = B^T V + eps``.

    ``coefs[j, i]`` is the weight of parent ``j`` in the equation of ``i``;
    ``order`` is a topological order.
    """

    n_nodes: int
    coefs: np.ndarray
    noise_var: np.ndarray
    order: tuple[int, ...]
    seed: int

    def __post_init__(self):
        coefs = np.asarray(self.coefs, dtype=float)
        if coefs.shape != (self.n_nodes, self.n_nodes):
            raise DataError("coefficient matrix shape mismatch")
        pos = {v: i for i, v in enumerate(self.order)}
        if sorted(pos) != list(range(self.n_nodes)):
            raise DataError("order must be a permutation of the nodes")
        for j, i in zip(*np.nonzero(coefs)):
            if pos[j] >= pos[i]:
                raise DataError("edges must follow the topological order")
        if np.any(np.asarray(self.noise_var) <= 0):
            raise DataError("noise variances must be positive")

    def edges(self) -> list[tuple[int, int]]:
        """Directed edges ``(parent, child)``."""
        return [(int(j), int(i)) for j, i in zip(*np.nonzero(self.coefs))]

    def skeleton(self, names: Sequence[str] | None = None) -> Pdag:
        return Pdag.from_edges(self.n_nodes, self.edges(), list(names) if names else None)


def gen_scm(
    nodes: int,
    edge_prob: float,
    coeff_range: tuple[float, float] = DEFAULT_COEFF_RANGE,
    seed: int = 0,
    noise_range: tuple[float, float] = DEFAULT_NOISE_RANGE,
) -> ScmSpec:
    """Random DAG: random topological order, Bernoulli edges, signed uniform weights."""
    lo, hi = coeff_range
    if not 0 < lo <= hi:
        raise DataError("coeff_range must satisfy 0 < lo <= hi")
    if not 0 <= edge_prob <= 1:
        raise DataError("edge_prob must lie in [0, 1]")
    rng = rng_for(seed)
    order = rng.permutation(nodes)
    coefs = np.zeros((nodes, nodes))
    for a in range(nodes):
        for b in range(a + 1, nodes):
            if rng.random() < edge_prob:
                coefs[order[a], order[b]] = rng.choice([-1.0, 1.0]) * rng.uniform(lo, hi)
    noise = rng.uniform(*noise_range, size=nodes)
    return ScmSpec(nodes, coefs, noise, tuple(int(v) for v in order), seed)


def sample_scm(spec: ScmSpec, n: int, seed: int | None = None) -> np.ndarray:
    """Ancestral sampling; the stream is keyed by ``spec.seed`` unless ``seed`` is given."""
    rng = rng_for(spec.seed, 1) if seed is None else rng_for(seed)
    eps = rng.standard_normal((n, spec.n_nodes)) * np.sqrt(spec.noise_var)
    out = np.zeros((n, spec.n_nodes))
    for i in spec.order:
        out[:, i] = out @ spec.coefs[:, i] + eps[:, i]
    return out


def population_covariance(spec: ScmSpec) -> np.ndarray:
    """``(I - B)^{-T} Omega (I - B)^{-1}`` in the row-vector convention."""
    inv = np.linalg.inv(np.eye(spec.n_nodes) - spec.coefs)
    return inv.T @ np.diag(spec.noise_var) @ inv


def gen_rank_instance(
    p: int,
    q: int,
    true_rank: int,
    seed: int = 0,
    strengths: float | Sequence[float] = 1.0,
    within_factors: int = 1,
) -> np.ndarray:
    """Population correlation over ``p + q`` variables with ``rank(Sigma_XY) = true_rank``.

    Each side loads on ``true_rank`` shared latent factors (loading scale
    ``strengths[i]`` for factor ``i``) plus ``within_factors`` side-specific
    factors and unique noise; the covariance is rescaled to unit diagonal.
    """
    if not 0 <= true_rank <= min(p, q):
        raise DataError(f"true_rank must lie in [0, {min(p, q)}]")
    rng = rng_for(seed)
    s = np.broadcast_to(np.asarray(strengths, dtype=float), (true_rank,))

    def loadings(rows, cols):
        return rng.choice([-1.0, 1.0], size=(rows, cols)) * rng.uniform(0.5, 1.5, size=(rows, cols))

    lx = loadings(p, true_rank) * s
    ly = loadings(q, true_rank) * s
    wx = loadings(p, within_factors)
    wy = loadings(q, within_factors)
    dx = rng.uniform(0.5, 1.5, size=p)
    dy = rng.uniform(0.5, 1.5, size=q)
    sigma = np.zeros((p + q, p + q))
    sigma[:p, :p] = lx @ lx.T + wx @ wx.T + np.diag(dx)
    sigma[p:, p:] = ly @ ly.T + wy @ wy.T + np.diag(dy)
    sigma[:p, p:] = lx @ ly.T
    sigma[p:, :p] = sigma[:p, p:].T
    scale = 1.0 / np.sqrt(np.diag(sigma))
    sigma = sigma * np.outer(scale, scale)
    np.fill_diagonal(sigma, 1.0)
    return sigma


def sample_gaussian(sigma: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Zero-mean Gaussian rows with covariance ``sigma``."""
    chol = np.linalg.cholesky(sigma)
    return rng_for(seed).standard_normal((n, sigma.shape[0])) @ chol.T


@dataclass(frozen=True)
class DiscretizationPolicy:
    """Which columns to discretize and how.

    ``columns`` is ``"none"``, ``"all"``, ``"half"`` (every other column,
    starting at index 1) or an explicit index list. Each chosen column gets
    ``levels - 1`` thresholds drawn uniformly from ``[low, high]`` on its
    standardized scale.
    """

    columns: str | tuple[int, ...] = "half"
    levels: int = 3
    low: float = -1.5
    high: float = 1.5

    def selected(self, m: int) -> list[int]:
        if self.columns == "none":
            return []
        if self.columns == "all":
            return list(range(m))
        if self.columns == "half":
            return list(range(1, m, 2))
        cols = [int(c) for c in self.columns]
        if any(not 0 <= c < m for c in cols):
            raise DataError("discretization column out of range")
        return cols

    @classmethod
    def parse(cls, obj) -> "DiscretizationPolicy":
        if isinstance(obj, DiscretizationPolicy):
            return obj
        if obj is None:
            return cls()
        if isinstance(obj, str):
            return cls(columns=obj)
        if isinstance(obj, dict):
            cols = obj.get("columns", "half")
            return cls(
                columns=cols if isinstance(cols, str) else tuple(cols),
                levels=int(obj.get("levels", 3)),
                low=float(obj.get("low", -1.5)),
                high=float(obj.get("high", 1.5)),
            )
        raise DataError(f"cannot parse discretization policy {obj!r}")

    def to_json(self) -> dict:
        cols = self.columns if isinstance(self.columns, str) else list(self.columns)
        return {"columns": cols, "levels": self.levels, "low": self.low, "high": self.high}


def draw_thresholds(col: np.ndarray, policy: DiscretizationPolicy, rng: np.random.Generator) -> np.ndarray:
    """Sorted thresholds on the column's own scale such that every level is observed."""
    mu, sd = col.mean(), col.std(ddof=1)
    for _ in range(MAX_RESAMPLES):
        t = np.sort(rng.uniform(policy.low, policy.high, size=policy.levels - 1))
        if np.any(np.diff(t) <= 1e-12):
            continue
        thr = mu + sd * t
        counts = np.bincount(discretize_column(col, thr) - 1, minlength=policy.levels)
        if np.all(counts > 0):
            return thr
    raise DataError("could not draw thresholds that leave every level non-empty")


def apply_discretization(
    data: np.ndarray,
    policy: DiscretizationPolicy | str = "half",
    seed: int = 0,
    names: Sequence[str] | None = None,
    thresholds: dict[int, np.ndarray] | None = None,
) -> Dataset:
    """Discretize the policy's columns into ordinal levels ``1..C``.

    Pre-drawn ``thresholds`` (column -> array) are used verbatim when given,
    which lets nested subsamples share one discretization.
    """
    policy = DiscretizationPolicy.parse(policy)
    data = np.asarray(data, dtype=float)
    m = data.shape[1]
    names = list(names) if names is not None else [f"V{j}" for j in range(m)]
    rng = rng_for(seed)
    out = data.copy()
    metas = [ColumnMeta.continuous(nm) for nm in names]
    for j in policy.selected(m):
        thr = thresholds[j] if thresholds is not None else draw_thresholds(data[:, j], policy, rng)
        out[:, j] = discretize_column(data[:, j], thr)
        metas[j] = ColumnMeta.ordinal(names[j], policy.levels)
    return Dataset(out, tuple(metas))


def draw_all_thresholds(data: np.ndarray, policy: DiscretizationPolicy, seed: int) -> dict[int, np.ndarray]:
    """Thresholds for every selected column, in the same stream order as :func:`apply_discretization`."""
    rng = rng_for(seed)
    return {j: draw_thresholds(data[:, j], policy, rng) for j in policy.selected(data.shape[1])}
