"""Conditional-independence oracles, PC skeleton search and skeleton metrics.

A rank oracle declares ``x`` independent of ``y`` given ``C`` when the
cross-covariance of ``{x} ∪ C`` and ``{y} ∪ C`` has rank ``|C|``.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .correlation import CorrelationConfig, estimate_correlation
from .datamodel import Dataset, ensure_standardized
from .exceptions import DataError
from .ranktest import DfConvention, Method, RankHypothesis, ccart, mprt, sample_correlation
from .bivariate import std_normal_cdf

log = logging.getLogger(__name__)

DEFAULT_MAX_COND = 3


@dataclass(frozen=True)
class CiQuery:
    x: int
    y: int
    cond: tuple[int, ...] = ()

    def __post_init__(self):
        cond = tuple(sorted(int(c) for c in self.cond))
        if self.x == self.y:
            raise DataError("CI query needs x != y")
        if self.x in cond or self.y in cond or len(set(cond)) != len(cond):
            raise DataError("conditioning set must be distinct and exclude x and y")
        object.__setattr__(self, "cond", cond)


CiOracle = Callable[[Dataset, CiQuery], "tuple[bool, float]"]


@dataclass
class Pdag:
    """Skeleton with optional orientation marks.

    ``adjacency`` is symmetric; ``directed[i, j]`` marks an arrowhead ``i -> j``.
    """

    n_nodes: int
    adjacency: np.ndarray
    names: list[str] | None = None
    directed: np.ndarray | None = None
    sepsets: dict[tuple[int, int], tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool).copy()
        if adj.shape != (self.n_nodes, self.n_nodes):
            raise DataError("adjacency shape does not match n_nodes")
        if np.any(np.diag(adj)):
            raise DataError("self-loops are not allowed")
        if not np.array_equal(adj, adj.T):
            raise DataError("adjacency must be symmetric")
        self.adjacency = adj
        if self.names is None:
            self.names = [f"V{i}" for i in range(self.n_nodes)]

    @classmethod
    def empty(cls, n: int, names=None) -> "Pdag":
        return cls(n, np.zeros((n, n), dtype=bool), names)

    @classmethod
    def complete(cls, n: int, names=None) -> "Pdag":
        return cls(n, ~np.eye(n, dtype=bool), names)

    @classmethod
    def from_edges(cls, n: int, edges: Sequence[tuple[int, int]], names=None) -> "Pdag":
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            adj[i, j] = adj[j, i] = True
        return cls(n, adj, names)

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    def neighbors(self, i: int) -> list[int]:
        return np.flatnonzero(self.adjacency[i]).tolist()

    def to_json(self) -> dict:
        out = {"nodes": list(self.names), "edges": [[self.names[i], self.names[j]] for i, j in self.edges()]}
        if self.directed is not None:
            out["directed"] = [
                [self.names[i], self.names[j]] for i, j in zip(*np.nonzero(self.directed))
            ]
        if self.sepsets:
            out["sepsets"] = [
                {"pair": [self.names[i], self.names[j]], "cond": [self.names[c] for c in s]}
                for (i, j), s in sorted(self.sepsets.items())
            ]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Pdag":
        names = list(obj["nodes"])
        idx = {n: i for i, n in enumerate(names)}
        try:
            edges = [(idx[a], idx[b]) for a, b in obj.get("edges", [])]
        except KeyError as exc:
            raise DataError(f"edge references unknown node {exc}") from None
        g = cls.from_edges(len(names), edges, names)
        if obj.get("directed"):
            g.directed = np.zeros((g.n_nodes, g.n_nodes), dtype=bool)
            for a, b in obj["directed"]:
                g.directed[idx[a], idx[b]] = True
        return g

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")


# ---------------------------------------------------------------- oracles


def _ci_hypothesis(q: CiQuery) -> RankHypothesis:
    return RankHypothesis.of((q.x,) + q.cond, (q.y,) + q.cond, len(q.cond))


def rank_ci_test(
    d: Dataset,
    q: CiQuery,
    alpha: float = 0.05,
    perms: int = 200,
    seed: int = 0,
    corr_config: CorrelationConfig | None = None,
) -> tuple[bool, float]:
    """MPRT of ``rank(Sigma_{x∪C, y∪C}) <= |C|``; independent iff not rejected."""
    rep = mprt(d, _ci_hypothesis(q), alpha=alpha, num_perms=perms, seed=seed, corr_config=corr_config)
    return rep.decision, rep.p_value


def ccart_ci_test(
    d: Dataset,
    q: CiQuery,
    alpha: float = 0.05,
    variant: Method | str = Method.CCART_D,
    df_convention: DfConvention | str = DfConvention.CLASSICAL,
    corr_config: CorrelationConfig | None = None,
) -> tuple[bool, float]:
    rep = ccart(d, _ci_hypothesis(q), alpha, variant, df_convention, corr_config)
    return rep.decision, rep.p_value


def partial_correlation(corr: np.ndarray, x: int, y: int, cond: Sequence[int]) -> float:
    idx = [x, y, *cond]
    sub = np.asarray(corr)[np.ix_(idx, idx)]
    try:
        prec = np.linalg.inv(sub)
    except np.linalg.LinAlgError:
        raise DataError("conditioning-set covariance is singular") from None
    rho = -prec[0, 1] / math.sqrt(prec[0, 0] * prec[1, 1])
    return float(np.clip(rho, -1.0, 1.0))


def fisher_z_pvalue(rho: float, n: int, n_cond: int) -> float:
    """Two-sided p-value of ``atanh(rho)`` against ``N(0, 1/(N - |C| - 3))``."""
    dof = n - n_cond - 3
    if dof <= 0:
        raise DataError(f"Fisher-Z needs N > |C| + 3 (N={n}, |C|={n_cond})")
    if abs(rho) >= 1.0:
        return 0.0
    z = math.sqrt(dof) * abs(math.atanh(rho))
    return float(2.0 * std_normal_cdf(-z))


def fisher_z_ci(
    d: Dataset,
    q: CiQuery,
    alpha: float = 0.05,
    corr_source: str = "sample",
    corr: np.ndarray | None = None,
) -> tuple[bool, float]:
    """Fisher-Z partial-correlation test.

    ``corr_source`` is ``"sample"`` (ordinal codes used as numbers) or
    ``"estimated"`` (pseudo-likelihood latent correlation). A precomputed
    full correlation matrix may be passed as ``corr``.
    """
    if corr is None:
        if corr_source == "sample":
            corr = sample_correlation(d.values)
        elif corr_source == "estimated":
            idx = sorted({q.x, q.y, *q.cond})
            est = estimate_correlation(ensure_standardized(d), idx)
            corr = np.eye(d.n_cols)
            corr[np.ix_(idx, idx)] = est.r_matrix
        else:
            raise DataError("corr_source must be 'sample' or 'estimated'")
    rho = partial_correlation(corr, q.x, q.y, q.cond)
    p = fisher_z_pvalue(rho, d.n_rows, len(q.cond))
    return p >= alpha, p


def make_oracle(
    method: str,
    alpha: float = 0.05,
    perms: int = 200,
    seed: int = 0,
    corr_config: CorrelationConfig | None = None,
) -> CiOracle:
    """CI oracle by name: ``mprt``, ``fisher-z``, ``ccart-d`` or ``ccart-de``."""
    method = method.lower()
    if method == "mprt":
        return lambda d, q: rank_ci_test(d, q, alpha, perms, seed, corr_config)
    if method == "fisher-z":
        last: list = [None, None]

        def fz(d: Dataset, q: CiQuery):
            if last[0] is not d:
                last[:] = [d, sample_correlation(d.values)]
            return fisher_z_ci(d, q, alpha, corr=last[1])

        return fz
    if method in (Method.CCART_D.value, Method.CCART_DE.value):
        return lambda d, q: ccart_ci_test(d, q, alpha, method, DfConvention.CLASSICAL, corr_config)
    raise DataError(f"unknown CI method {method!r}")


# --------------------------------------------------------------------- PC


def pc_skeleton(
    d: Dataset,
    ci_oracle: CiOracle,
    alpha: float | None = None,
    max_cond: int = DEFAULT_MAX_COND,
    nodes: Sequence[int] | None = None,
) -> Pdag:
    """PC adjacency search with level-synchronous edge removal.

    Neighbourhoods are frozen at the start of each level, pairs are visited
    in node order and conditioning sets in lexicographic order, so the
    result does not depend on removal order. ``alpha`` is informational;
    the oracle carries its own level.
    """
    nodes = list(range(d.n_cols)) if nodes is None else list(nodes)
    m = len(nodes)
    sub = d if nodes == list(range(d.n_cols)) else _select(d, nodes)
    graph = Pdag.complete(m, [sub.names[i] for i in range(m)])
    for level in range(max_cond + 1):
        adj = graph.adjacency.copy()
        if not any(adj[i].sum() - 1 >= level for i in range(m)):
            break
        removals = []
        for i, j in itertools.combinations(range(m), 2):
            if not adj[i, j]:
                continue
            for a, b in ((i, j), (j, i)):
                found = _find_sepset(sub, ci_oracle, a, b, adj, level)
                if found is not None:
                    removals.append((i, j, found))
                    break
        for i, j, s in removals:
            graph.adjacency[i, j] = graph.adjacency[j, i] = False
            graph.sepsets[(i, j)] = s
        log.debug("level %d removed %d edges", level, len(removals))
    return graph


def _find_sepset(d, oracle, a, b, adj, level):
    cands = [c for c in np.flatnonzero(adj[a]).tolist() if c != b]
    for cond in itertools.combinations(cands, level):
        independent, _ = oracle(d, CiQuery(a, b, cond))
        if independent:
            return tuple(cond)
    return None


def _select(d: Dataset, cols: Sequence[int]) -> Dataset:
    return Dataset(d.values[:, list(cols)], tuple(d.metas[c] for c in cols), d.standardized)


def orient(graph: Pdag) -> Pdag:
    """Orient v-structures from separating sets, then apply Meek rules 1-3."""
    n = graph.n_nodes
    adj = graph.adjacency
    # g[i, j] & ~g[j, i] means i -> j; both set means undirected
    g = adj.copy()
    for j in range(n):
        for i, k in itertools.combinations(np.flatnonzero(adj[j]).tolist(), 2):
            if adj[i, k]:
                continue
            sep = graph.sepsets.get((min(i, k), max(i, k)), ())
            if j not in sep:
                g[j, i] = g[j, k] = False
    changed = True
    while changed:
        changed = False
        for a, b in itertools.permutations(range(n), 2):
            if not (g[a, b] and g[b, a]):
                continue
            directed_into_a = [c for c in range(n) if g[c, a] and not g[a, c]]
            # R1: c -> a - b, c and b nonadjacent
            r1 = any(not adj[c, b] for c in directed_into_a if c != b)
            # R2: a -> c -> b
            r2 = any(g[a, c] and not g[c, a] and g[c, b] and not g[b, c] for c in range(n))
            # R3: a - c -> b, a - e -> b, c and e nonadjacent
            mids = [c for c in range(n) if g[a, c] and g[c, a] and g[c, b] and not g[b, c]]
            r3 = any(not adj[c, e] for c, e in itertools.combinations(mids, 2))
            if r1 or r2 or r3:
                g[b, a] = False
                changed = True
    out = Pdag(n, adj, list(graph.names), g & ~g.T, dict(graph.sepsets))
    return out


def skeleton_metrics(estimated: Pdag, truth: Pdag) -> tuple[float, int]:
    """Undirected-edge F1 and structural Hamming distance.

    Two empty graphs score F1 = 1; otherwise a zero precision and recall
    gives F1 = 0.
    """
    if estimated.n_nodes != truth.n_nodes:
        raise DataError("graphs have different node counts")
    est, tru = set(estimated.edges()), set(truth.edges())
    shd = len(est ^ tru)
    if not est and not tru:
        return 1.0, 0
    tp = len(est & tru)
    precision = tp / len(est) if est else 0.0
    recall = tp / len(tru) if tru else 0.0
    if precision + recall == 0:
        return 0.0, shd
    return 2 * precision * recall / (precision + recall), shd
