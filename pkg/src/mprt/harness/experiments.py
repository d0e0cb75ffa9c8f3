"""Benchmark jobs: Type I/II rates, null p-value samples, PC skeleton comparison.

Every job is a pure function of its :class:`ExperimentConfig`. Trial ``t``
draws from streams keyed by ``(seed, t, ...)`` so results do not depend on
the number of workers or on completion order.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import os
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import kstest

from .. import __version__
from .._rng import derive_seed
from ..causal import make_oracle, pc_skeleton, skeleton_metrics
from ..datamodel import ColumnMeta, Dataset
from ..exceptions import DataError
from ..ranktest import DfConvention, Method, RankHypothesis, ccart, mprt
from .generators import (
    DEFAULT_COEFF_RANGE,
    DiscretizationPolicy,
    apply_discretization,
    draw_all_thresholds,
    gen_rank_instance,
    gen_scm,
    sample_gaussian,
    sample_scm,
)

log = logging.getLogger(__name__)

_TAG_NULL, _TAG_ALT, _TAG_DATA, _TAG_PERM, _TAG_THR = 1, 2, 3, 4, 5


class Scenario(str, enum.Enum):
    TYPE12_MIXED = "TypeI_TypeII_mixed"
    TYPE12_CONTINUOUS = "TypeI_TypeII_continuous"
    PC_COMPARISON = "PC_comparison"
    NULL_PVALUE_HIST = "Null_pvalue_hist"


RANK_METHODS = [m.value for m in Method]
PC_METHODS = ["mprt", "fisher-z", "ccart-d", "ccart-de"]


@dataclass
class ExperimentConfig:
    """Knobs for one benchmark job.

    Rank scenarios use ``p``, ``q``, ``k``: the null truth has rank ``k``
    with factor strength ``strength``; the alternative adds one factor of
    strength ``alt_strength``. PC jobs use ``nodes``, ``edge_prob`` and
    ``coeff_range`` and run ``trials`` random graphs.
    """

    scenario: Scenario = Scenario.TYPE12_MIXED
    sample_sizes: list[int] = field(default_factory=lambda: [500, 1000, 2000])
    trials: int = 500
    alpha: float = 0.05
    perms: int = 200
    discretization: DiscretizationPolicy = field(default_factory=DiscretizationPolicy)
    seed: int = 0
    methods: list[str] | None = None
    p: int = 3
    q: int = 3
    k: int = 1
    strength: float = 1.5
    alt_strength: float = 0.3
    within_factors: int = 1
    type1: bool = True
    type2: bool = True
    df_convention: DfConvention = DfConvention.CLASSICAL
    nodes: int = 6
    edge_prob: float = 0.3
    coeff_range: tuple[float, float] = DEFAULT_COEFF_RANGE
    max_cond: int = 3

    def __post_init__(self):
        self.scenario = Scenario(self.scenario)
        self.df_convention = DfConvention(self.df_convention)
        self.discretization = DiscretizationPolicy.parse(self.discretization)
        if self.scenario is Scenario.TYPE12_CONTINUOUS:
            self.discretization = DiscretizationPolicy("none")
        self.sample_sizes = [int(n) for n in self.sample_sizes]
        self.coeff_range = tuple(float(c) for c in self.coeff_range)
        if self.trials < 1:
            raise DataError("trials must be >= 1")
        if not self.sample_sizes or min(self.sample_sizes) <= 0:
            raise DataError("sample sizes must be positive")
        if self.perms < 1:
            raise DataError("perms must be >= 1")
        if self.methods is None:
            self.methods = self.default_methods()
        self.methods = [str(m).lower() for m in self.methods]
        allowed = PC_METHODS if self.scenario is Scenario.PC_COMPARISON else RANK_METHODS
        bad = [m for m in self.methods if m not in allowed]
        if bad:
            raise DataError(f"unknown methods {bad} for scenario {self.scenario.value}")
        if self.scenario is not Scenario.PC_COMPARISON and not 0 <= self.k < min(self.p, self.q):
            raise DataError("k must satisfy 0 <= k < min(p, q)")

    def default_methods(self) -> list[str]:
        if self.scenario is Scenario.PC_COMPARISON:
            return list(PC_METHODS)
        if self.scenario is Scenario.TYPE12_CONTINUOUS:
            return [Method.MPRT.value, Method.CCART_C.value]
        return list(RANK_METHODS)

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise DataError(f"unknown config keys {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(obj)

    def to_json(self) -> dict:
        out = asdict(self)
        out["scenario"] = self.scenario.value
        out["df_convention"] = self.df_convention.value
        out["discretization"] = self.discretization.to_json()
        out["coeff_range"] = list(self.coeff_range)
        return out


@dataclass
class ExperimentResult:
    scenario: Scenario
    summary: list[dict]
    raw: list[dict]
    manifest: dict

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "summary.csv", self.summary)
        _write_csv(out / "raw.csv", self.raw)
        (out / "manifest.json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True), encoding="utf-8")

    def rate(self, method: str, n: int, metric: str) -> float:
        for row in self.summary:
            if row["method"] == method and row["N"] == n and row["metric"] == metric:
                return row["rate"] if "rate" in row else row["value"]
        raise KeyError((method, n, metric))

    def values(self, method: str, n: int, key: str = "p_value", hypothesis: str | None = None) -> np.ndarray:
        return np.array(
            [
                r[key]
                for r in self.raw
                if r["method"] == method and r["N"] == n and (hypothesis is None or r["hypothesis"] == hypothesis)
            ]
        )


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def worker_count() -> int:
    """Worker cap from ``MPRT_THREADS`` (default: all CPUs)."""
    raw = os.environ.get("MPRT_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise DataError(f"MPRT_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def _run_trials(fn: Callable, cfg: ExperimentConfig, n_trials: int) -> list:
    n_jobs = min(worker_count(), n_trials)
    if n_jobs <= 1:
        return [fn(cfg, t) for t in range(n_trials)]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(cfg, t) for t in range(n_trials))


def _manifest(cfg: ExperimentConfig, notes: dict) -> dict:
    import scipy

    return {
        "config": cfg.to_json(),
        "package_version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "rng": "Philox streams keyed by SeedSequence(seed, trial, tag, ...)",
        "notes": notes,
    }


# ----------------------------------------------------------- rank trials


def _continuous_dataset(values: np.ndarray) -> Dataset:
    return Dataset(values, tuple(ColumnMeta.continuous(f"V{j}") for j in range(values.shape[1])))


def _rank_trial_datasets(cfg: ExperimentConfig, sigma: np.ndarray, trial: int, tag: int):
    """Nested samples: the size-``N`` dataset is the first ``N`` rows of one draw."""
    n_max, n_min = max(cfg.sample_sizes), min(cfg.sample_sizes)
    latent = sample_gaussian(sigma, n_max, derive_seed(cfg.seed, trial, tag, _TAG_DATA))
    thr = draw_all_thresholds(latent[:n_min], cfg.discretization, derive_seed(cfg.seed, trial, tag, _TAG_THR))
    for n in cfg.sample_sizes:
        sub = latent[:n]
        yield n, _continuous_dataset(sub), apply_discretization(sub, cfg.discretization, thresholds=thr)


def _run_rank_method(method: str, cont: Dataset, mixed: Dataset, hyp: RankHypothesis, cfg, seed):
    if method == Method.MPRT.value:
        return mprt(mixed, hyp, cfg.alpha, cfg.perms, seed)
    if method == Method.CCART_C.value:
        return ccart(cont, hyp, cfg.alpha, Method.CCART_C, cfg.df_convention)
    return ccart(mixed, hyp, cfg.alpha, method, cfg.df_convention)


def _rank_trial(cfg: ExperimentConfig, trial: int) -> list[dict]:
    hyp = RankHypothesis.of(range(cfg.p), range(cfg.p, cfg.p + cfg.q), cfg.k)
    cases = []
    if cfg.type1:
        cases.append(("null", _TAG_NULL, cfg.k, [cfg.strength] * cfg.k))
    if cfg.type2:
        cases.append(("alt", _TAG_ALT, cfg.k + 1, [cfg.strength] * cfg.k + [cfg.alt_strength]))
    rows = []
    for label, tag, rank, strengths in cases:
        sigma = gen_rank_instance(
            cfg.p, cfg.q, rank, derive_seed(cfg.seed, trial, tag), strengths, cfg.within_factors
        )
        for n, cont, mixed in _rank_trial_datasets(cfg, sigma, trial, tag):
            perm_seed = derive_seed(cfg.seed, trial, tag, _TAG_PERM, n)
            for method in cfg.methods:
                rep = _run_rank_method(method, cont, mixed, hyp, cfg, perm_seed)
                rows.append(
                    {
                        "trial": trial,
                        "hypothesis": label,
                        "true_rank": rank,
                        "N": n,
                        "method": method,
                        "statistic": float(rep.statistic),
                        "p_value": float(rep.p_value),
                        "decision": bool(rep.decision),
                    }
                )
    return rows


def _collect(cfg: ExperimentConfig, fn: Callable) -> list[dict]:
    return [row for rows in _run_trials(fn, cfg, cfg.trials) for row in rows]


def run_type12(cfg: ExperimentConfig) -> ExperimentResult:
    """Type I (null truth, rejected) and Type II (alternative truth, not rejected) rates."""
    if cfg.scenario not in (Scenario.TYPE12_MIXED, Scenario.TYPE12_CONTINUOUS):
        raise DataError(f"run_type12 cannot run scenario {cfg.scenario.value}")
    raw = _collect(cfg, _rank_trial)
    summary = []
    for label, metric, flag in (("null", "type1", False), ("alt", "type2", True)):
        for n in cfg.sample_sizes:
            for method in cfg.methods:
                dec = [r["decision"] for r in raw if r["hypothesis"] == label and r["N"] == n and r["method"] == method]
                if dec:
                    rate = float(np.mean([d == flag for d in dec]))
                    summary.append(
                        {"method": method, "N": n, "metric": metric, "rate": rate, "trials": len(dec), "seed": cfg.seed}
                    )
    return ExperimentResult(cfg.scenario, summary, raw, _manifest(cfg, _rank_notes(cfg)))


def run_null_pvalue_hist(cfg: ExperimentConfig) -> ExperimentResult:
    """Raw p-values under a true rank-``k`` null, with KS distance to uniform."""
    if cfg.scenario is not Scenario.NULL_PVALUE_HIST:
        raise DataError(f"run_null_pvalue_hist cannot run scenario {cfg.scenario.value}")
    cfg_null = ExperimentConfig(**{**cfg.__dict__, "type1": True, "type2": False})
    raw = _collect(cfg_null, _rank_trial)
    summary = []
    for n in cfg.sample_sizes:
        for method in cfg.methods:
            pv = [r["p_value"] for r in raw if r["N"] == n and r["method"] == method]
            summary.append(
                {"method": method, "N": n, "metric": "ks_distance", "value": float(kstest(pv, "uniform").statistic),
                 "trials": len(pv), "seed": cfg.seed}
            )
            summary.append(
                {"method": method, "N": n, "metric": "type1", "value": float(np.mean(np.array(pv) < cfg.alpha)),
                 "trials": len(pv), "seed": cfg.seed}
            )
    return ExperimentResult(cfg.scenario, summary, raw, _manifest(cfg, _rank_notes(cfg)))


def _rank_notes(cfg: ExperimentConfig) -> dict:
    return {
        "dimensions": f"P={cfg.p}, Q={cfg.q}, tested k={cfg.k}",
        "type2_protocol": "truth has rank k+1 (extra factor at alt_strength); H0: rank <= k; count non-rejections",
        "ccart_df": cfg.df_convention.value,
        "nested_samples": "size-N data are the first N rows of one draw per trial",
    }


# -------------------------------------------------------------- PC trials


def _pc_trial(cfg: ExperimentConfig, graph: int) -> list[dict]:
    spec = gen_scm(cfg.nodes, cfg.edge_prob, cfg.coeff_range, seed=derive_seed(cfg.seed, graph))
    truth = spec.skeleton()
    n_max, n_min = max(cfg.sample_sizes), min(cfg.sample_sizes)
    latent = sample_scm(spec, n_max, seed=derive_seed(cfg.seed, graph, _TAG_DATA))
    thr = draw_all_thresholds(latent[:n_min], cfg.discretization, derive_seed(cfg.seed, graph, _TAG_THR))
    rows = []
    for n in cfg.sample_sizes:
        d = apply_discretization(latent[:n], cfg.discretization, thresholds=thr)
        for method in cfg.methods:
            oracle = make_oracle(method, cfg.alpha, cfg.perms, derive_seed(cfg.seed, graph, _TAG_PERM, n))
            est = pc_skeleton(d, oracle, cfg.alpha, cfg.max_cond)
            f1, shd = skeleton_metrics(est, truth)
            rows.append(
                {"trial": graph, "N": n, "method": method, "f1": f1, "shd": shd,
                 "true_edges": len(truth.edges()), "est_edges": len(est.edges())}
            )
    log.info("graph %d done", graph)
    return rows


def run_pc_comparison(cfg: ExperimentConfig) -> ExperimentResult:
    """Mean skeleton F1 and SHD of PC with each CI oracle over ``trials`` random SCMs."""
    if cfg.scenario is not Scenario.PC_COMPARISON:
        raise DataError(f"run_pc_comparison cannot run scenario {cfg.scenario.value}")
    raw = _collect(cfg, _pc_trial)
    summary = []
    for n in cfg.sample_sizes:
        for method in cfg.methods:
            sel = [r for r in raw if r["N"] == n and r["method"] == method]
            for metric in ("f1", "shd"):
                summary.append(
                    {"method": method, "N": n, "metric": metric, "value": float(np.mean([r[metric] for r in sel])),
                     "trials": len(sel), "seed": cfg.seed}
                )
    notes = {
        "graph": f"{cfg.nodes} nodes, edge_prob={cfg.edge_prob}, |a| in {list(cfg.coeff_range)}, random sign",
        "pc_variant": f"level-synchronous skeleton search, max conditioning size {cfg.max_cond}",
        "nested_samples": "size-N data are the first N rows of one draw per graph",
    }
    return ExperimentResult(cfg.scenario, summary, raw, _manifest(cfg, notes))


RUNNERS = {
    Scenario.TYPE12_MIXED: run_type12,
    Scenario.TYPE12_CONTINUOUS: run_type12,
    Scenario.NULL_PVALUE_HIST: run_null_pvalue_hist,
    Scenario.PC_COMPARISON: run_pc_comparison,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.scenario](cfg)
