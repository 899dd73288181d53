"""Optimal-control saddle point study with the block preconditioner.

Intervals come from the dense spectrum oracle (exact Cholesky factors of K
and M), so they are re-derived rather than copied.

    python scripts/example_saddle.py --m 32 --out results/saddle
"""
import argparse

import numpy as np

from psdi import bench
from psdi.solvers import SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=32)
    ap.add_argument("--tau", type=float, default=1e-2)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--tol", type=float, default=1e-8)
    ap.add_argument("--rhs", choices=["random", "control"], default="random")
    ap.add_argument("--out", default="results/saddle")
    args = ap.parse_args()

    base = SolverConfig(tol=args.tol, max_iter=5000)
    solvers = [bench.parse_solver(s, base) for s in
               ("psdi", "psdi1d@optimal", "psdi1d@uniform", "pminres", "pminres_restarted:2")]
    spec = bench.ExperimentSpec(f"saddle:m={args.m},tau={args.tau},rhs={args.rhs}", solvers,
                                repetitions=args.reps, bound_overlay=True, out_dir=args.out,
                                name="saddle")
    summary = bench.run_experiment(spec)
    print(f"n={summary['problem']['n']} interval {summary['interval']} "
          f"rho_opt={summary['rho_opt']:.4f}")
    for rec in summary["solvers"]:
        its = rec["iterations"]
        its = f"{np.mean(its):.1f} (mean of {len(its)})" if isinstance(its, list) else its
        print(f"  {rec['solver']:<18} iterations {its}  final rel {rec['relative_residual']:.2e}")


if __name__ == "__main__":
    main()
