"""Command-line entry point: ``psdi generate|spectrum|solve|bench``.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 oracle cap.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench, theory
from .core import NumericalFailure, ValidationError
from .solvers import BetaStrategy, SolverConfig

log = logging.getLogger("psdi")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_ORACLE_CAP = 0, 2, 3, 4


def _base_config(args) -> SolverConfig:
    return SolverConfig(tol=args.tol, max_iter=args.max_iter,
                        residual_mode=args.residual_mode,
                        beta=BetaStrategy.parse(args.beta), rng_seed=args.seed)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, default=1e-8, help="relative residual target")
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--beta", default="optimal",
                   help="PSDI-1D beta: fixed:VALUE | optimal | uniform | normal:MEAN:STD")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--residual-mode", default="true_Tnorm",
                   choices=["true_Tnorm", "cheap_maxabs"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psdi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a test problem as Matrix Market + JSON")
    g.add_argument("--problem", required=True)
    g.add_argument("--out", required=True)

    s = sub.add_parser("spectrum", help="dense spectrum of TA and the enclosing intervals")
    s.add_argument("--problem", required=True)
    s.add_argument("--cap", type=int, default=theory.ORACLE_CAP)
    s.add_argument("--out")

    for name, helptext in (("solve", "run one solver"),
                           ("bench", "run a solver comparison")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--problem")
        p.add_argument("--solver", action="append", default=[])
        _add_solver_flags(p)
        p.add_argument("--reps", type=int, default=1)
        p.add_argument("--bound-overlay", action="store_true")
        p.add_argument("--out")
        p.add_argument("--name")
        if name == "bench":
            p.add_argument("--spec", help="JSON experiment spec (overrides flags)")
    return parser


def _experiment(args) -> bench.ExperimentSpec:
    if getattr(args, "spec", None):
        data = json.loads(Path(args.spec).read_text())
        if args.out and "out" not in data:
            data["out"] = args.out
        return bench.ExperimentSpec.from_json(data)
    if not args.problem:
        raise ValidationError("--problem is required without --spec")
    base = _base_config(args)
    solvers = args.solver or ["psdi"]
    if args.command == "solve" and len(solvers) != 1:
        raise ValidationError("solve takes exactly one --solver; use bench for several")
    return bench.ExperimentSpec(
        problem=args.problem, solvers=[bench.parse_solver(s, base) for s in solvers],
        repetitions=args.reps, seed=args.seed, bound_overlay=args.bound_overlay,
        out_dir=Path(args.out) if args.out else None, name=args.name or args.command)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "generate":
        meta = bench.generate(args.problem, args.out)
        print(json.dumps({"label": meta["label"], "files": meta["files"]}, indent=2))
        return EXIT_OK
    if args.command == "spectrum":
        P = bench.build_problem(args.problem)
        result = bench.spectrum_summary(P, args.cap)
        text = json.dumps(result, indent=2)
        if args.out:
            Path(args.out).write_text(text + "\n")
        print(text)
        return EXIT_OK
    spec = _experiment(args)
    summary = bench.run_experiment(spec)
    summary.pop("records")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except theory.OracleCapExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ORACLE_CAP
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
