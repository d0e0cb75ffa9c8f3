"""Command-line entry point: ``mprt test | estimate-corr | pc | bench``.

Exit status is 0 on success, 1 for input errors and 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .causal import make_oracle, orient, pc_skeleton
from .correlation import estimate_correlation
from .datamodel import ensure_standardized, load_dataset
from .exceptions import DataError, NumericalError
from .harness.experiments import ExperimentConfig, Scenario, run_experiment
from .ranktest import Method, RankHypothesis, ccart, mprt

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

BENCH_SCENARIOS = {
    "type12": (Scenario.TYPE12_MIXED, Scenario.TYPE12_CONTINUOUS),
    "pc": (Scenario.PC_COMPARISON,),
    "nullhist": (Scenario.NULL_PVALUE_HIST,),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _names(raw: str) -> list[str]:
    return [s.strip() for s in raw.split(",") if s.strip()]


def _write_json(path: str, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2), encoding="utf-8")


def cmd_test(args) -> int:
    d = load_dataset(args.data, args.schema)
    hyp = RankHypothesis.of(d.indices_of(_names(args.x)), d.indices_of(_names(args.y)), args.k)
    method = Method(args.method)
    if method is Method.MPRT:
        rep = mprt(d, hyp, args.alpha, args.perms, args.seed)
    else:
        rep = ccart(d, hyp, args.alpha, method, args.df)
    out = rep.to_json(emit_perms=args.emit_perms)
    out["x"], out["y"] = _names(args.x), _names(args.y)
    _write_json(args.out, out)
    return EXIT_OK


def cmd_estimate_corr(args) -> int:
    d = load_dataset(args.data, args.schema)
    subset = d.indices_of(_names(args.subset)) if args.subset else None
    est = estimate_correlation(ensure_standardized(d), subset)
    _write_json(args.out, est.to_json(d.names))
    return EXIT_OK


def cmd_pc(args) -> int:
    d = load_dataset(args.data, args.schema)
    oracle = make_oracle(args.ci, args.alpha, args.perms, args.seed)
    graph = pc_skeleton(d, oracle, args.alpha, args.max_cond)
    if args.orient:
        graph = orient(graph)
    _write_json(args.out, graph.to_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if cfg.scenario not in BENCH_SCENARIOS[args.kind]:
        raise DataError(f"config scenario {cfg.scenario.value} does not match bench {args.kind}")
    run_experiment(cfg).write(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mprt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(p):
        p.add_argument("--data", required=True, help="CSV file with a header row")
        p.add_argument("--schema", required=True, help="JSON schema with column kinds")

    p = sub.add_parser("test", help="rank test of rank(Sigma_XY) <= k")
    data_args(p)
    p.add_argument("--x", required=True, help="comma-separated X column names")
    p.add_argument("--y", required=True, help="comma-separated Y column names")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--perms", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=[m.value for m in Method], default=Method.MPRT.value)
    p.add_argument("--df", choices=["paper", "classical"], default="paper")
    p.add_argument("--emit-perms", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("estimate-corr", help="latent correlation matrix")
    data_args(p)
    p.add_argument("--subset", help="comma-separated column names (default: all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_corr)

    p = sub.add_parser("pc", help="PC skeleton search")
    data_args(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--ci", choices=["mprt", "fisher-z", "ccart-d", "ccart-de"], default="mprt")
    p.add_argument("--perms", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-cond", type=int, default=3)
    p.add_argument("--orient", action="store_true", help="also orient edges (v-structures + Meek rules)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pc)

    p = sub.add_parser("bench", help="run a benchmark job from a JSON config")
    p.add_argument("kind", choices=sorted(BENCH_SCENARIOS))
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
