"""Averaged PSDI-1D traces for uniform and normal beta draws on the saddle problem.

Runs finish at different iterations, so the comparison index is the last one
reached by every distribution's geometric-mean trace.

    python scripts/beta_distributions.py --m 32 --reps 100
"""
import argparse

import numpy as np

from psdi import bench
from psdi.solvers import SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=32)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--tol", type=float, default=1e-10)
    ap.add_argument("--out", default="results/beta")
    args = ap.parse_args()

    base = SolverConfig(tol=args.tol, max_iter=5000)
    labels = ("psdi1d@normal:opt:0.1", "psdi1d@normal:opt:0.75", "psdi1d@uniform")
    spec = bench.ExperimentSpec(f"saddle:m={args.m},tau=0.01",
                                [bench.parse_solver(s, base) for s in labels],
                                repetitions=args.reps, out_dir=args.out, name="beta")
    summary = bench.run_experiment(spec)
    traces: dict[str, list[float]] = {}
    for rec in summary["records"]:
        traces.setdefault(rec.solver, []).append(rec.res_tnorm)
    k = min(len(t) for t in traces.values()) - 1
    print(f"comparison index {k}")
    for name, t in traces.items():
        its = next(s["iterations"] for s in summary["solvers"] if s["solver"] == name)
        print(f"  {name:<24} mean iterations {np.mean(its):6.1f}  "
              f"averaged residual at {k}: {t[k] / t[0]:.3e}")


if __name__ == "__main__":
    main()
