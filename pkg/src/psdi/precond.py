"""SPD preconditioners.

Every preconditioner exposes ``dim`` and ``apply(v, out=None, counters=None)``.
``apply`` counts exactly one preconditioner application; ``apply_block`` maps
the columns of a 2-D array and is uncounted (used for densification).
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from .core import Counters, NumericalFailure, SparseMatrix, ValidationError, spmv

__all__ = [
    "NotSPDError",
    "Preconditioner",
    "IdentityPreconditioner",
    "DiagonalPreconditioner",
    "DensePreconditioner",
    "SparseCholeskyFactor",
    "InverseSPDPreconditioner",
    "SaddleBlockPreconditioner",
    "FixedStepSolverPreconditioner",
    "identity_preconditioner",
    "inverse_spd_preconditioner",
    "saddle_block_preconditioner",
    "fixed_step_solver_preconditioner",
    "check_spd",
]


class NotSPDError(ValidationError):
    pass


class Preconditioner:
    """Base class; subclasses implement ``_apply_into(v, out)``."""

    dim: int
    spd: bool = True

    def apply(self, v: np.ndarray, out: np.ndarray | None = None,
              counters: Counters | None = None) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValidationError(f"vector has shape {v.shape}, expected ({self.dim},)")
        if out is None:
            out = np.empty(self.dim)
        self._apply_into(v, out)
        if counters is not None:
            counters.precs += 1
        return out

    def apply_block(self, V: np.ndarray) -> np.ndarray:
        V = np.asarray(V, dtype=np.float64)
        out = np.empty_like(V)
        for j in range(V.shape[1]):
            self._apply_into(np.ascontiguousarray(V[:, j]), out[:, j])
        return out

    def to_dense(self) -> np.ndarray:
        return self.apply_block(np.eye(self.dim))

    def _apply_into(self, v: np.ndarray, out: np.ndarray) -> None:
        raise NotImplementedError


class IdentityPreconditioner(Preconditioner):
    def __init__(self, n: int):
        self.dim = int(n)

    def _apply_into(self, v, out):
        np.copyto(out, v)

    def apply_block(self, V):
        return np.array(V, dtype=np.float64)


class DiagonalPreconditioner(Preconditioner):
    """T = diag(d) with d > 0."""

    def __init__(self, d):
        d = np.asarray(d, dtype=np.float64)
        if d.ndim != 1 or np.any(~(d > 0)):
            raise NotSPDError("matrix not SPD: diagonal must be positive")
        self.d = d
        self.dim = d.size

    def _apply_into(self, v, out):
        np.multiply(self.d, v, out=out)

    def apply_block(self, V):
        return self.d[:, None] * np.asarray(V, dtype=np.float64)


class DensePreconditioner(Preconditioner):
    """Explicit dense SPD matrix T (test-scale utility)."""

    def __init__(self, T):
        T = np.array(T, dtype=np.float64)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValidationError("T must be square")
        if not np.allclose(T, T.T, rtol=1e-13, atol=0.0):
            raise NotSPDError("matrix not SPD: not symmetric")
        try:
            np.linalg.cholesky(T)
        except np.linalg.LinAlgError as exc:
            raise NotSPDError("matrix not SPD") from exc
        self.T = T
        self.dim = T.shape[0]

    def _apply_into(self, v, out):
        np.dot(self.T, v, out=out)

    def apply_block(self, V):
        return self.T @ np.asarray(V, dtype=np.float64)


class SparseCholeskyFactor:
    """Exact Cholesky factor B = R R^T of a sparse SPD matrix, natural order.

    R is stored in LAPACK lower-band form; fill-in is confined to the band
    envelope of B. ``perm`` is the identity (no reordering).
    """

    def __init__(self, B: SparseMatrix):
        n = B.n
        bw = B.bandwidth()
        csr = B.to_scipy()
        ab = np.zeros((bw + 1, n))
        for k in range(bw + 1):
            ab[k, : n - k] = csr.diagonal(-k)
        if np.any(csr.diagonal() <= 0):
            raise NotSPDError("matrix not SPD: non-positive diagonal entry")
        band, info = lapack.dpbtrf(ab, lower=1)
        if info > 0:
            raise NotSPDError(f"matrix not SPD: non-positive pivot at row {info - 1}")
        if info < 0:
            raise NumericalFailure(f"dpbtrf argument error {info}")
        self.n = n
        self.bandwidth = bw
        self.band = band
        self.perm = np.arange(n)

    def solve(self, v: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Solve B z = v; ``v`` may be 1-D or 2-D (columns)."""
        if out is None:
            out = np.array(v, dtype=np.float64, order="F")
        else:
            np.copyto(out, v)
        b = out.reshape(self.n, -1) if out.ndim == 1 else out
        x, info = lapack.dpbtrs(self.band, b, lower=1, overwrite_b=1)
        if info != 0:
            raise NumericalFailure(f"dpbtrs failed with info={info}")
        if not np.shares_memory(x, out):
            np.copyto(out, x.reshape(out.shape))
        return out

    def lower_dense(self) -> np.ndarray:
        R = np.zeros((self.n, self.n))
        for k in range(self.bandwidth + 1):
            idx = np.arange(self.n - k)
            R[idx + k, idx] = self.band[k, : self.n - k]
        return R


class InverseSPDPreconditioner(Preconditioner):
    """T = B^{-1} through an exact sparse Cholesky factor of B."""

    def __init__(self, B: SparseMatrix):
        self.B = B
        self.factor = SparseCholeskyFactor(B)
        self.dim = B.n

    def _apply_into(self, v, out):
        self.factor.solve(v, out)

    def apply_block(self, V):
        return self.factor.solve(np.asarray(V, dtype=np.float64))


class SaddleBlockPreconditioner(Preconditioner):
    """blockdiag((2 tau M)^{-1}, M^{-1}, K^{-1} M K^{-1}) for the control KKT system."""

    def __init__(self, K: SparseMatrix, M: SparseMatrix, tau: float):
        if K.n != M.n:
            raise ValidationError(f"K and M differ in size: {K.n} vs {M.n}")
        if not tau > 0:
            raise ValidationError("tau must be positive (the first block scales by 1/(2 tau))")
        self.K, self.M, self.tau = K, M, float(tau)
        self.Kf = SparseCholeskyFactor(K)
        self.Mf = SparseCholeskyFactor(M)
        self.m = K.n
        self.dim = 3 * K.n

    def _apply_into(self, v, out):
        m = self.m
        o1, o2, o3 = out[:m], out[m:2 * m], out[2 * m:]
        self.Mf.solve(v[:m], o1)
        o1 *= 1.0 / (2.0 * self.tau)
        self.Mf.solve(v[m:2 * m], o2)
        z = self.Kf.solve(v[2 * m:])
        spmv(self.M, z, out=o3)
        self.Kf.solve(o3, o3)

    def apply_block(self, V):
        V = np.asarray(V, dtype=np.float64)
        m = self.m
        out = np.empty_like(V)
        out[:m] = self.Mf.solve(V[:m]) / (2.0 * self.tau)
        out[m:2 * m] = self.Mf.solve(V[m:2 * m])
        out[2 * m:] = self.Kf.solve(self.M @ self.Kf.solve(V[2 * m:]))
        return out


class FixedStepSolverPreconditioner(Preconditioner):
    """Approximate inverse of A given by ``t`` steps of an inner solver from zero.

    Not SPD in general (and nonlinear for PSDI/PMINRES); intended for the
    inner-outer pattern only. PSDI-1D with a random beta strategy reseeds on
    every call so the map is deterministic.
    """

    spd = False
    KINDS = ("psdi", "psdi_1d", "pminres")

    def __init__(self, A: SparseMatrix, T_inner: Preconditioner, solver_kind: str,
                 t: int, config=None, interval=None):
        from .solvers import SolverConfig

        if int(t) < 1:
            raise ValidationError("number of inner steps t must be >= 1")
        if solver_kind not in self.KINDS:
            raise ValidationError(f"unknown inner solver {solver_kind!r}")
        if solver_kind == "psdi_1d" and interval is None:
            raise ValidationError("psdi_1d inner solver needs an IntervalPair")
        base = config or SolverConfig()
        # tol=0 forces exactly t steps unless an exact solution appears.
        self.config = base.replace(tol=0.0, max_iter=int(t), residual_mode="cheap_maxabs")
        self.A, self.T_inner, self.kind, self.t = A, T_inner, solver_kind, int(t)
        self.interval = interval
        self.dim = A.n

    def _apply_into(self, v, out):
        from . import solvers

        x0 = np.zeros(self.dim)
        if self.kind == "psdi":
            rep = solvers.psdi(self.A, self.T_inner, v, x0, self.config)
        elif self.kind == "psdi_1d":
            rep = solvers.psdi_1d(self.A, self.T_inner, v, x0, self.config, self.interval)
        else:
            rep = solvers.pminres(self.A, self.T_inner, v, x0, self.config)
        np.copyto(out, rep.solution)


def identity_preconditioner(n: int) -> IdentityPreconditioner:
    return IdentityPreconditioner(n)


def inverse_spd_preconditioner(B: SparseMatrix) -> InverseSPDPreconditioner:
    return InverseSPDPreconditioner(B)


def saddle_block_preconditioner(K: SparseMatrix, M: SparseMatrix,
                                tau: float) -> SaddleBlockPreconditioner:
    return SaddleBlockPreconditioner(K, M, tau)


def fixed_step_solver_preconditioner(A, T_inner, solver_kind, t, config=None,
                                     interval=None) -> FixedStepSolverPreconditioner:
    return FixedStepSolverPreconditioner(A, T_inner, solver_kind, t, config, interval)


def check_spd(T: Preconditioner, trials: int = 100, rtol: float = 1e-10,
              seed: int = 0) -> tuple[bool, bool]:
    """Randomized symmetry and positivity checks; returns (symmetric, positive).

    Symmetry is measured as |(u, Tv) - (Tu, v)| relative to the Cauchy-Schwarz
    scale sqrt((u, Tu)(v, Tv)).
    """
    rng = np.random.default_rng(seed)
    symmetric = positive = True
    for _ in range(trials):
        u = rng.standard_normal(T.dim)
        v = rng.standard_normal(T.dim)
        Tu, Tv = T.apply(u), T.apply(v)
        uTu, vTv = float(u @ Tu), float(v @ Tv)
        if not (uTu > 0 and vTv > 0):
            positive = False
            continue
        scale = np.sqrt(uTu * vTv)
        if abs(float(u @ Tv) - float(Tu @ v)) > rtol * scale:
            symmetric = False
    return symmetric, positive
