"""Linear-algebra substrate: CSR matrices, operation counters, T-inner products
and Matrix Market I/O.

All arithmetic is float64. Operations that the solvers cost-account (matvecs,
preconditioner applications, inner products) take an optional ``Counters``
instance which is owned by a single solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.sparse import _sparsetools

__all__ = [
    "Counters",
    "SparseMatrix",
    "ValidationError",
    "NumericalFailure",
    "spmv",
    "t_inner",
    "read_matrix_market",
    "write_matrix_market",
]

SYMMETRY_RTOL = 1e-14


class ValidationError(ValueError):
    """Bad input: dimension mismatch, parameter out of range, malformed file."""


class NumericalFailure(ArithmeticError):
    """NaN/inf scalars, annihilated directions, failed factorizations."""


@dataclass
class Counters:
    """Exact operation tallies for one solve.

    ``monitoring`` counts inner products spent only on residual tracking; they
    are kept apart from ``inner_products`` so per-iteration audits can be
    compared against the algorithmic cost.
    """

    matvecs: int = 0
    precs: int = 0
    inner_products: int = 0
    monitoring: int = 0

    def snapshot(self) -> tuple[int, int, int]:
        return (self.matvecs, self.precs, self.inner_products)

    def add(self, other: "Counters") -> None:
        self.matvecs += other.matvecs
        self.precs += other.precs
        self.inner_products += other.inner_products
        self.monitoring += other.monitoring


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Square symmetric matrix in compressed sparse row form.

    Both triangles are stored explicitly and columns are sorted within each
    row. Construction validates the structure and (by default) numerical
    symmetry to a relative tolerance of 1e-14.
    """

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    check_symmetry: bool = field(default=True, repr=False)
    _csr: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        n = int(self.n)
        if n < 1:
            raise ValidationError("matrix dimension must be positive")
        if row_ptr.shape != (n + 1,) or row_ptr[0] != 0:
            raise ValidationError("row_ptr must have n+1 entries starting at 0")
        if np.any(np.diff(row_ptr) < 0):
            raise ValidationError("row_ptr must be nondecreasing")
        nnz = int(row_ptr[-1])
        if col_idx.shape != (nnz,) or values.shape != (nnz,):
            raise ValidationError("col_idx/values length must equal row_ptr[-1]")
        if nnz and (col_idx.min() < 0 or col_idx.max() >= n):
            raise ValidationError("column index out of range")
        if nnz > 1:
            same_row = np.ones(nnz - 1, dtype=bool)
            starts = row_ptr[1:-1]
            same_row[starts[(starts > 0) & (starts < nnz)] - 1] = False
            if np.any(np.diff(col_idx)[same_row] <= 0):
                raise ValidationError("columns not strictly increasing within a row")
        for name, arr in (("row_ptr", row_ptr), ("col_idx", col_idx), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n", n)
        csr = sp.csr_matrix((values, col_idx, row_ptr), shape=(n, n))
        object.__setattr__(self, "_csr", csr)
        if self.check_symmetry and not self.is_symmetric():
            raise ValidationError("matrix is not symmetric")

    @classmethod
    def from_scipy(cls, mat, check_symmetry: bool = True) -> "SparseMatrix":
        csr = sp.csr_matrix(mat, dtype=np.float64)
        if csr.shape[0] != csr.shape[1]:
            raise ValidationError(f"matrix is not square: {csr.shape}")
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.indptr, csr.indices, csr.data, check_symmetry)

    @classmethod
    def from_dense(cls, arr, check_symmetry: bool = True) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(arr, dtype=np.float64)), check_symmetry)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    @classmethod
    def diagonal(cls, diag) -> "SparseMatrix":
        return cls.from_scipy(sp.diags(np.asarray(diag, dtype=np.float64), format="csr"))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr.copy()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def diag(self) -> np.ndarray:
        return self._csr.diagonal()

    def is_symmetric(self, rtol: float = SYMMETRY_RTOL) -> bool:
        diff = self._csr - self._csr.T
        if diff.nnz == 0:
            return True
        scale = np.abs(self.values).max() if self.nnz else 0.0
        return bool(np.abs(diff.data).max() <= rtol * scale)

    def bandwidth(self) -> int:
        """Largest |i - j| over stored entries."""
        rows = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
        return int(np.abs(rows - self.col_idx).max()) if self.nnz else 0

    def __matmul__(self, x):
        return self._csr @ x


def _check_vec(x: np.ndarray, n: int, name: str = "vector") -> None:
    if x.ndim != 1 or x.shape[0] != n:
        raise ValidationError(f"{name} has shape {x.shape}, expected ({n},)")


def spmv(A: SparseMatrix, x: np.ndarray, counters: Counters | None = None,
         out: np.ndarray | None = None) -> np.ndarray:
    """Return ``A @ x``; writes into ``out`` without temporaries when given."""
    x = np.asarray(x, dtype=np.float64)
    _check_vec(x, A.n, "x")
    if out is None:
        out = np.zeros(A.n)
    else:
        _check_vec(out, A.n, "out")
        out.fill(0.0)
    # csr_matvec accumulates y += A x in place.
    _sparsetools.csr_matvec(A.n, A.n, A.row_ptr, A.col_idx, A.values, x, out)
    if counters is not None:
        counters.matvecs += 1
    return out


def t_inner(u: np.ndarray, v: np.ndarray, T, counters: Counters | None = None,
            Tv: np.ndarray | None = None) -> float:
    """T-inner product (u, T v).

    Supplying a cached ``Tv`` skips the preconditioner application.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_vec(u, T.dim, "u")
    _check_vec(v, T.dim, "v")
    if Tv is None:
        Tv = T.apply(v, counters=counters)
    else:
        _check_vec(Tv, T.dim, "Tv")
    if counters is not None:
        counters.inner_products += 1
    return float(np.dot(u, Tv))


def read_matrix_market(path) -> SparseMatrix:
    """Read a real symmetric matrix in coordinate format.

    General storage is accepted as long as the content is numerically
    symmetric; the result is identical to reading the symmetric-storage file.
    """
    path = Path(path)
    try:
        rows, cols, _entries, fmt, fld, symm = scipy.io.mminfo(str(path))
    except (ValueError, IndexError, OSError) as exc:
        raise ValidationError(f"{path}: malformed Matrix Market header ({exc})") from exc
    if fmt != "coordinate":
        raise ValidationError(f"{path}: expected coordinate format, got {fmt!r}")
    if fld not in ("real", "integer"):
        raise ValidationError(f"{path}: unsupported field type {fld!r}")
    if symm not in ("general", "symmetric"):
        raise ValidationError(f"{path}: unsupported symmetry {symm!r}")
    if rows != cols:
        raise ValidationError(f"{path}: matrix is not square ({rows}x{cols})")
    try:
        mat = scipy.io.mmread(str(path))
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    return SparseMatrix.from_scipy(mat)


def write_matrix_market(A: SparseMatrix, path, comment: str = "") -> None:
    """Write ``A`` with symmetric storage and 17 significant digits."""
    lower = sp.tril(A.to_scipy(), format="coo")
    path = Path(path)
    with path.open("w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
        for line in comment.splitlines():
            fh.write(f"% {line}\n")
        fh.write(f"{A.n} {A.n} {lower.nnz}\n")
        order = np.lexsort((lower.row, lower.col))
        for k in order:
            fh.write(f"{lower.row[k] + 1} {lower.col[k] + 1} {lower.data[k]:.16e}\n")
