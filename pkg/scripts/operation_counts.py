"""Per-iteration operation counts and working storage of every solver.

    python scripts/operation_counts.py
"""
import tracemalloc

import numpy as np

from psdi.core import SparseMatrix
from psdi.precond import DiagonalPreconditioner
from psdi.problems import shifted_laplacian
from psdi.solvers import SolverConfig, pminres, pminres_restarted, psdi, psdi_1d


def rate(rep):
    c = np.asarray(rep.count_trace)
    if rep.cycles:
        # a cycle includes its own restart, so measure from the zero state
        c = np.vstack([np.zeros(3, int), c[rep.cycles]])
    d = {tuple(int(v) for v in x) for x in np.diff(c, axis=0)}
    return d.pop() if len(d) == 1 else d


def storage(fn, n):
    tracemalloc.start()
    base = tracemalloc.get_traced_memory()[0]
    fn()
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    return (peak - base) / (8.0 * n)


def main():
    P = shifted_laplacian(31, 100.0)
    cfg = SolverConfig(tol=0.0, max_iter=20, residual_mode="cheap_maxabs", beta="fixed:0.0")
    rows = [("PSDI", psdi(P.A, P.T, P.f, P.x0, cfg)),
            ("PSDI-1D", psdi_1d(P.A, P.T, P.f, P.x0, cfg)),
            ("PMINRES", pminres(P.A, P.T, P.f, P.x0, cfg)),
            ("PMINRES(2) per cycle", pminres_restarted(P.A, P.T, P.f, P.x0, 2, cfg))]
    print(f"{'solver':<22}{'setup (mv, prec, ip)':<24}per iteration")
    for name, rep in rows:
        setup = "-" if rep.cycles else str(tuple(rep.count_trace[0]))
        print(f"{name:<22}{setup:<24}{rate(rep)}")

    n = 500_000
    A = SparseMatrix.diagonal(np.where(np.arange(n) % 2, 1.0, -1.0) * np.linspace(1, 2, n))
    T = DiagonalPreconditioner(np.linspace(1.0, 1.5, n))
    f = np.random.default_rng(0).standard_normal(n)
    for mode in ("cheap_maxabs", "true_Tnorm"):
        c = cfg.replace(max_iter=3, residual_mode=mode)
        print(f"working vectors ({mode}): PSDI {storage(lambda: psdi(A, T, f, None, c), n):.2f}, "
              f"PSDI-1D {storage(lambda: psdi_1d(A, T, f, None, c), n):.2f}")


if __name__ == "__main__":
    main()
