"""Closed-form convergence factors and a dense spectrum oracle for TA.

Every factor below is endpoint arithmetic: on a pair of intervals
[a, b] U [c, d] with b < beta < c, the parabola mu(lam) = lam^2 - beta*lam
takes its maximum at a or d and its minimum at b or c.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import SparseMatrix, ValidationError

__all__ = [
    "IntervalPair",
    "SpectrumReport",
    "OracleCapExceeded",
    "SpectrumNotIndefinite",
    "mu_beta",
    "tau_beta",
    "rho_stationary",
    "alpha_opt_of_beta",
    "kappa_tilde",
    "rho_opt_of_beta",
    "rho_opt",
    "beta_opt",
    "alpha_opt",
    "pminres_bound",
    "spectrum_oracle",
    "interval_from_spectrum",
]

ORACLE_CAP = 4096
EQUAL_LENGTH_ATOL = 1e-12


class OracleCapExceeded(ValidationError):
    pass


class SpectrumNotIndefinite(ValidationError):
    pass


@dataclass(frozen=True)
class IntervalPair:
    """[a, b] U [c, d] with a <= b < 0 < c <= d and b - a == d - c."""

    a: float
    b: float
    c: float
    d: float
    check_lengths: bool = True

    def __post_init__(self):
        for name in "abcd":
            object.__setattr__(self, name, float(getattr(self, name)))
        a, b, c, d = self.a, self.b, self.c, self.d
        if not (a <= b < 0.0 < c <= d):
            raise ValidationError(f"need a <= b < 0 < c <= d, got {(a, b, c, d)}")
        if self.check_lengths:
            tol = EQUAL_LENGTH_ATOL * max(1.0, abs(a), abs(d))
            if abs((b - a) - (d - c)) > tol:
                raise ValidationError(
                    f"intervals differ in length: {b - a!r} vs {d - c!r}")

    @property
    def endpoints(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)

    def contains(self, lam, atol: float = 0.0) -> np.ndarray:
        lam = np.asarray(lam, dtype=np.float64)
        return ((lam >= self.a - atol) & (lam <= self.b + atol)) | (
            (lam >= self.c - atol) & (lam <= self.d + atol))

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d}


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray
    p: int

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    @property
    def lam_1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lam_p(self) -> float:
        return float(self.eigenvalues[self.p - 1])

    @property
    def lam_p1(self) -> float:
        return float(self.eigenvalues[self.p])

    @property
    def lam_n(self) -> float:
        return float(self.eigenvalues[-1])

    def to_dict(self) -> dict:
        out = {"n": self.n, "p": self.p}
        if 0 < self.p < self.n:
            out.update(lam_1=self.lam_1, lam_p=self.lam_p,
                       lam_p1=self.lam_p1, lam_n=self.lam_n)
        return out


def mu_beta(lam, beta):
    return lam * lam - beta * lam


def _check_beta(I: IntervalPair, beta: float) -> None:
    if not (I.b < beta < I.c):
        raise ValidationError(f"beta={beta!r} not in the open interval ({I.b!r}, {I.c!r})")


def _mu_max(I: IntervalPair, beta: float) -> float:
    return max(mu_beta(I.a, beta), mu_beta(I.d, beta))


def _mu_min(I: IntervalPair, beta: float) -> float:
    return min(mu_beta(I.b, beta), mu_beta(I.c, beta))


def tau_beta(I: IntervalPair, beta: float) -> float:
    """Upper limit on alpha for the stationary scheme to contract."""
    _check_beta(I, beta)
    return 2.0 / _mu_max(I, beta)


def rho_stationary(I: IntervalPair, alpha: float, beta: float) -> float:
    """max over the four endpoints of |1 - alpha*mu_beta(lam)|; may be >= 1."""
    return max(abs(1.0 - alpha * mu_beta(lam, beta)) for lam in I.endpoints)


def alpha_opt_of_beta(I: IntervalPair, beta: float) -> float:
    _check_beta(I, beta)
    return 2.0 / (_mu_min(I, beta) + _mu_max(I, beta))


def kappa_tilde(I: IntervalPair, beta: float) -> float:
    _check_beta(I, beta)
    return _mu_max(I, beta) / _mu_min(I, beta)


def rho_opt_of_beta(I: IntervalPair, beta: float) -> float:
    k = kappa_tilde(I, beta)
    return (k - 1.0) / (k + 1.0)


def rho_opt(I: IntervalPair) -> float:
    ad, bc = abs(I.a * I.d), abs(I.b * I.c)
    return (ad - bc) / (ad + bc)


def beta_opt(I: IntervalPair) -> float:
    return I.c - abs(I.b)


def alpha_opt(I: IntervalPair) -> float:
    return 2.0 / (abs(I.b) * I.c + abs(I.a) * I.d)


def pminres_bound(I: IntervalPair, i: int) -> float:
    """Multiplier of ||r0||_T bounding the PMINRES residual after i steps."""
    if i < 0:
        raise ValidationError("step index must be nonnegative")
    sad, sbc = math.sqrt(abs(I.a * I.d)), math.sqrt(abs(I.b * I.c))
    return 2.0 * ((sad - sbc) / (sad + sbc)) ** (i // 2)


def spectrum_oracle(A: SparseMatrix, T, cap: int = ORACLE_CAP) -> SpectrumReport:
    """Eigenvalues of TA from the symmetric similarity R^T A R, T = R R^T.

    T is densified by applying it to the identity, so this is O(n^3) and
    guarded by ``cap``.
    """
    n = A.n
    if n > cap:
        raise OracleCapExceeded(f"n={n} exceeds the spectrum oracle cap {cap}")
    if T.dim != n:
        raise ValidationError(f"T has dimension {T.dim}, A has {n}")
    Td = T.to_dense()
    Td = 0.5 * (Td + Td.T)
    try:
        R = scipy.linalg.cholesky(Td, lower=True)
    except np.linalg.LinAlgError as exc:
        from .precond import NotSPDError

        raise NotSPDError("matrix not SPD: densified preconditioner") from exc
    AR = np.asarray(A.to_scipy() @ R)
    S = R.T @ AR
    S = 0.5 * (S + S.T)
    lam = scipy.linalg.eigh(S, eigvals_only=True, check_finite=False)
    lam.sort()
    return SpectrumReport(eigenvalues=lam, p=int(np.count_nonzero(lam < 0)))


def interval_from_spectrum(S: SpectrumReport) -> IntervalPair:
    """Tightest enclosing interval pair, equalized by extending one outer end."""
    if S.p == 0 or S.p == S.n:
        raise SpectrumNotIndefinite("spectrum not indefinite")
    a, b, c, d = S.lam_1, S.lam_p, S.lam_p1, S.lam_n
    if b >= 0 or c <= 0:
        raise SpectrumNotIndefinite("spectrum not indefinite")
    left, right = b - a, d - c
    if left > right:
        d = c + left
    else:
        a = b - right
    return IntervalPair(a, b, c, d)
