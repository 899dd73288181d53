"""Test-system generators: shifted Laplacian, Q1 optimal-control saddle point
system, diagonal models, and perturbed-solution starting guesses.

Random vectors come from ``numpy.random.Generator(PCG64(seed))`` so equal
seeds give bit-identical f and x0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import NumericalFailure, SparseMatrix, ValidationError
from .precond import (IdentityPreconditioner, Preconditioner, inverse_spd_preconditioner,
                      saddle_block_preconditioner)

__all__ = [
    "ProblemInstance",
    "laplacian_2d",
    "laplacian_eigenvalues",
    "shifted_laplacian",
    "q1_element_matrices",
    "q1_stiffness_mass",
    "control_saddle_problem",
    "diagonal_model",
    "perturbed_solution_start",
]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class ProblemInstance:
    A: SparseMatrix
    T: Preconditioner
    f: np.ndarray
    x0: np.ndarray
    label: str
    metadata: dict = field(default_factory=dict)
    # generator by-products (L, K, M) kept for diagnostics
    parts: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.A.n

    def with_start(self, x0: np.ndarray) -> "ProblemInstance":
        return ProblemInstance(self.A, self.T, self.f, np.asarray(x0, dtype=np.float64),
                               self.label, dict(self.metadata), self.parts)


def laplacian_2d(m: int) -> sp.csr_matrix:
    """5-point Dirichlet Laplacian on an m x m interior grid, h = 1/(m+1), scaled by 1/h^2."""
    h = 1.0 / (m + 1)
    T1 = sp.diags([-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])
    I = sp.identity(m)
    return ((sp.kron(I, T1) + sp.kron(T1, I)) / h**2).tocsr()


def laplacian_eigenvalues(m: int) -> np.ndarray:
    """(4/h^2)(sin^2(j pi h/2) + sin^2(k pi h/2)), j, k = 1..m, sorted."""
    h = 1.0 / (m + 1)
    s = np.sin(np.arange(1, m + 1) * np.pi * h / 2.0) ** 2
    return np.sort((4.0 / h**2 * (s[:, None] + s[None, :])).ravel())


def shifted_laplacian(m: int, sigma: float, seed: int = 0) -> ProblemInstance:
    """A = L - sigma*I with T = L^{-1}; f, x0 uniform on (-1, 1)."""
    if m < 2:
        raise ValidationError("grid size m must be >= 2")
    if sigma < 0:
        raise ValidationError("shift sigma must be nonnegative")
    L = laplacian_2d(m)
    n = m * m
    Lm = SparseMatrix.from_scipy(L)
    A = SparseMatrix.from_scipy(L - sigma * sp.identity(n, format="csr"))
    rng = _rng(seed)
    f = rng.uniform(-1.0, 1.0, n)
    x0 = rng.uniform(-1.0, 1.0, n)
    return ProblemInstance(
        A, inverse_spd_preconditioner(Lm), f, x0, f"laplacian(m={m},sigma={sigma:g})",
        {"generator": "laplacian", "m": m, "sigma": sigma, "seed": seed, "n": n},
        {"L": Lm})


_GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def _q1_shape(xi, eta):
    """Bilinear shape functions and reference gradients, nodes counterclockwise."""
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    N = 0.25 * (1 + sx * xi) * (1 + sy * eta)
    dN = np.stack([0.25 * sx * (1 + sy * eta), 0.25 * sy * (1 + sx * xi)])
    return N, dN


def q1_element_matrices(h: float) -> tuple[np.ndarray, np.ndarray]:
    """Stiffness and consistent mass of a square h x h Q1 element (2x2 Gauss)."""
    Ke = np.zeros((4, 4))
    Me = np.zeros((4, 4))
    jac = h / 2.0
    for xi in _GAUSS2:
        for eta in _GAUSS2:
            N, dN = _q1_shape(xi, eta)
            grad = dN / jac
            Ke += grad.T @ grad * jac**2
            Me += np.outer(N, N) * jac**2
    return Ke, Me


def q1_stiffness_mass(m: int) -> tuple[SparseMatrix, SparseMatrix, np.ndarray]:
    """Assemble K and M on an m x m element grid of the unit square.

    Dirichlet boundary nodes are eliminated; the (m-1)^2 interior nodes are
    numbered row by row. Returns (K, M, node coordinates).
    """
    if m < 2:
        raise ValidationError("need at least 2 elements per side")
    h = 1.0 / m
    Ke, Me = q1_element_matrices(h)
    ex, ey = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    ex, ey = ex.ravel(), ey.ravel()
    # global grid node (i, j), i, j in 0..m; interior index (j-1)(m-1) + (i-1)
    gi = np.stack([ex, ex + 1, ex + 1, ex], axis=1)
    gj = np.stack([ey, ey, ey + 1, ey + 1], axis=1)
    interior = (gi > 0) & (gi < m) & (gj > 0) & (gj < m)
    idx = np.where(interior, (gj - 1) * (m - 1) + (gi - 1), -1)
    rows = np.repeat(idx, 4, axis=1).ravel()
    cols = np.tile(idx, (1, 4)).ravel()
    keep = (rows >= 0) & (cols >= 0)
    nel = ex.size
    kv = np.tile(Ke.ravel(), nel)[keep]
    mv = np.tile(Me.ravel(), nel)[keep]
    nn = (m - 1) ** 2
    K = sp.coo_matrix((kv, (rows[keep], cols[keep])), shape=(nn, nn)).tocsr()
    M = sp.coo_matrix((mv, (rows[keep], cols[keep])), shape=(nn, nn)).tocsr()
    # exact symmetry: average out summation-order roundoff
    K = 0.5 * (K + K.T)
    M = 0.5 * (M + M.T)
    ii, jj = np.meshgrid(np.arange(1, m), np.arange(1, m), indexing="xy")
    coords = np.stack([ii.ravel() * h, jj.ravel() * h], axis=1)
    return SparseMatrix.from_scipy(K), SparseMatrix.from_scipy(M), coords


def _u_hat(x, y):
    inside = (x < 0.5) & (y < 0.5)
    return np.where(inside, (2 * x - 1) ** 2 * (2 * y - 1) ** 2, 0.0)


def _q1_load(m: int, func) -> np.ndarray:
    """Load vector b_i = integral of func * phi_i over interior nodes (2x2 Gauss)."""
    h = 1.0 / m
    nn = (m - 1) ** 2
    b = np.zeros(nn)
    corner_i = np.array([0, 1, 1, 0])
    corner_j = np.array([0, 0, 1, 1])
    for exi in range(m):
        for eyi in range(m):
            be = np.zeros(4)
            for xi in _GAUSS2:
                for eta in _GAUSS2:
                    N, _ = _q1_shape(xi, eta)
                    x = (exi + 0.5 * (1 + xi)) * h
                    y = (eyi + 0.5 * (1 + eta)) * h
                    be += N * func(x, y) * (h / 2.0) ** 2
            gi, gj = exi + corner_i, eyi + corner_j
            ok = (gi > 0) & (gi < m) & (gj > 0) & (gj < m)
            np.add.at(b, ((gj - 1) * (m - 1) + (gi - 1))[ok], be[ok])
    return b


def control_saddle_problem(m: int, tau: float = 1e-2, seed: int = 0,
                           rhs: str = "random") -> ProblemInstance:
    """KKT system [[2 tau M, 0, -M], [0, M, K], [-M, K, 0]] with block preconditioner.

    ``rhs="random"`` draws f uniform on (-1, 1); ``rhs="control"`` assembles
    [0; M-weighted target load of u_hat; 0] for zero boundary data.
    x0 is always seeded random.
    """
    if not tau > 0:
        raise ValidationError("tau must be positive")
    if rhs not in ("random", "control"):
        raise ValidationError(f"unknown rhs mode {rhs!r}")
    K, M, _ = q1_stiffness_mass(m)
    Ks, Ms = K.to_scipy(), M.to_scipy()
    A = sp.bmat([[2 * tau * Ms, None, -Ms],
                 [None, Ms, Ks],
                 [-Ms, Ks, None]], format="csr")
    A = SparseMatrix.from_scipy(A)
    nb = K.n
    rng = _rng(seed)
    if rhs == "random":
        f = rng.uniform(-1.0, 1.0, 3 * nb)
    else:
        f = np.concatenate([np.zeros(nb), _q1_load(m, _u_hat), np.zeros(nb)])
    x0 = rng.uniform(-1.0, 1.0, 3 * nb)
    T = saddle_block_preconditioner(K, M, tau)
    return ProblemInstance(
        A, T, f, x0, f"saddle(m={m},tau={tau:g})",
        {"generator": "saddle", "m": m, "tau": tau, "seed": seed, "rhs": rhs,
         "n": 3 * nb}, {"K": K, "M": M})


def diagonal_model(spectrum, seed: int = 0) -> ProblemInstance:
    """A = diag(spectrum), T = I, f standard normal, x0 = 0."""
    lam = np.asarray(spectrum, dtype=np.float64)
    if lam.ndim != 1 or lam.size == 0:
        raise ValidationError("spectrum must be a nonempty list")
    if np.any(lam == 0):
        raise ValidationError("spectrum contains zero: matrix singular")
    if not (np.any(lam < 0) and np.any(lam > 0)):
        raise ValidationError("spectrum must contain both signs")
    n = lam.size
    f = _rng(seed).standard_normal(n)
    return ProblemInstance(
        SparseMatrix.diagonal(lam), IdentityPreconditioner(n), f, np.zeros(n),
        f"diagonal(n={n})", {"generator": "diagonal", "spectrum": lam.tolist(),
                             "seed": seed, "n": n})


def perturbed_solution_start(P: ProblemInstance, eps: float, seed: int = 0) -> np.ndarray:
    """x* + delta with delta uniform on [0, eps]; x* from a sparse LU solve."""
    if eps < 0:
        raise ValidationError("perturbation magnitude must be nonnegative")
    try:
        lu = spla.splu(P.A.to_scipy().tocsc())
        xs = lu.solve(P.f)
    except RuntimeError as exc:
        raise NumericalFailure(f"direct factorization failed: {exc}") from exc
    if not np.all(np.isfinite(xs)):
        raise NumericalFailure("direct factorization produced non-finite solution")
    return xs + _rng(seed).uniform(0.0, eps, P.n)
