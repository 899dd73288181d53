"""Iterative solvers for symmetric indefinite A with an SPD preconditioner T.

All solvers share the same reporting: ``trace[0]`` is the initial residual
measure and ``trace[i]`` the measure after iteration i. With
``residual_mode="true_Tnorm"`` the measure is ||r||_T, tracked through an
explicit residual vector (one extra "monitoring" inner product per iteration);
with ``"cheap_maxabs"`` it is max|w_i| of the preconditioned residual, which
costs nothing. PMINRES always reports ||r||_T since its recurrence yields it
for free.

Convergence means trace[i] <= max(tol * trace[0], atol); atol defaults to 0.

Setup (r0 = f - A x0, w0 = T r0) costs one matvec and one preconditioner
application for every solver; ``SolveReport.setup_counts`` records the setup
cost so that per-iteration rates can be audited exactly.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import blas

from .core import Counters, NumericalFailure, SparseMatrix, ValidationError, spmv
from .theory import IntervalPair, beta_opt

__all__ = [
    "BetaStrategy",
    "SolverConfig",
    "SolveReport",
    "IterationScalars",
    "psdi",
    "psdi_1d",
    "stationary_two_term",
    "orthomin1",
    "pminres",
    "pminres_restarted",
]

TRUE_TNORM = "true_Tnorm"
CHEAP_MAXABS = "cheap_maxabs"
CONVERGED = "converged"
MAX_ITER = "max_iter"
BREAKDOWN = "exact_breakdown_solution"

GRAM_EPS = 1e-12
RESAMPLE_CAP = 100


@dataclass(frozen=True)
class BetaStrategy:
    """How PSDI-1D picks beta in (b, c) at each iteration."""

    kind: str = "optimal"
    value: float | None = None
    mean: float | None = None
    std: float | None = None

    KINDS = ("fixed", "optimal", "uniform", "normal")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"unknown beta strategy {self.kind!r}")
        if self.kind == "fixed" and self.value is None:
            raise ValidationError("fixed beta strategy needs a value")
        if self.kind == "normal" and not (self.std is not None and self.std > 0):
            raise ValidationError("normal beta strategy needs std > 0")

    @classmethod
    def fixed(cls, beta: float) -> "BetaStrategy":
        return cls("fixed", value=float(beta))

    @classmethod
    def optimal(cls) -> "BetaStrategy":
        return cls("optimal")

    @classmethod
    def uniform(cls) -> "BetaStrategy":
        return cls("uniform")

    @classmethod
    def normal(cls, std: float, mean: float | None = None) -> "BetaStrategy":
        """Normal draws; ``mean=None`` centres on the optimal beta c - |b|."""
        return cls("normal", mean=mean, std=float(std))

    @classmethod
    def parse(cls, text: str) -> "BetaStrategy":
        """Parse ``fixed:VALUE``, ``optimal``, ``uniform`` or ``normal:MEAN:STD``.

        ``MEAN`` may be ``opt`` for c - |b|.
        """
        parts = text.strip().split(":")
        kind = parts[0]
        try:
            if kind == "fixed" and len(parts) == 2:
                return cls.fixed(float(parts[1]))
            if kind in ("optimal", "uniform") and len(parts) == 1:
                return cls(kind)
            if kind == "normal" and len(parts) == 3:
                mean = None if parts[1] in ("", "opt") else float(parts[1])
                return cls.normal(float(parts[2]), mean)
        except ValueError as exc:
            raise ValidationError(f"bad beta strategy {text!r}: {exc}") from exc
        raise ValidationError(f"bad beta strategy {text!r}")

    def label(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.value:g}"
        if self.kind == "normal":
            mean = "opt" if self.mean is None else f"{self.mean:g}"
            return f"normal:{mean}:{self.std:g}"
        return self.kind

    def is_random(self) -> bool:
        return self.kind in ("uniform", "normal")

    def draw(self, interval: IntervalPair | None, rng: np.random.Generator) -> float:
        if self.kind == "fixed":
            beta = self.value
            if interval is not None and not (interval.b < beta < interval.c):
                raise ValidationError(
                    f"fixed beta={beta!r} outside ({interval.b!r}, {interval.c!r})")
            return beta
        if interval is None:
            raise ValidationError(f"beta strategy {self.kind!r} needs an IntervalPair")
        b, c = interval.b, interval.c
        if self.kind == "optimal":
            return beta_opt(interval)
        for _ in range(RESAMPLE_CAP):
            if self.kind == "uniform":
                beta = b + (c - b) * rng.random()
            else:
                mean = beta_opt(interval) if self.mean is None else self.mean
                beta = rng.normal(mean, self.std)
            if b < beta < c:
                return float(beta)
        raise ValidationError(
            f"no beta inside ({b!r}, {c!r}) after {RESAMPLE_CAP} draws")


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 1000
    atol: float = 0.0
    residual_mode: str = TRUE_TNORM
    beta: BetaStrategy = field(default_factory=BetaStrategy)
    rng_seed: int = 0

    def __post_init__(self):
        if not self.tol >= 0:
            raise ValidationError("tol must be nonnegative")
        if not self.atol >= 0:
            raise ValidationError("atol must be nonnegative")
        if int(self.max_iter) < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.residual_mode not in (TRUE_TNORM, CHEAP_MAXABS):
            raise ValidationError(f"unknown residual_mode {self.residual_mode!r}")
        if isinstance(self.beta, str):
            object.__setattr__(self, "beta", BetaStrategy.parse(self.beta))

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.rng_seed))


@dataclass
class SolveReport:
    solution: np.ndarray
    trace: np.ndarray
    matvec_count: int
    prec_count: int
    inner_product_count: int
    monitoring_count: int
    termination: str
    setup_counts: tuple[int, int, int] = (1, 1, 0)
    betas: list[float] = field(default_factory=list)
    cycles: list[int] = field(default_factory=list)
    scalars: list["IterationScalars"] = field(default_factory=list)
    # cumulative (matvecs, precs, inner_products) aligned with trace
    count_trace: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1

    @property
    def converged(self) -> bool:
        return self.termination in (CONVERGED, BREAKDOWN)

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.matvec_count, self.prec_count, self.inner_product_count)

    def ratios(self) -> np.ndarray:
        """trace[i+1] / trace[i]."""
        t = self.trace
        return t[1:] / t[:-1]


@dataclass(frozen=True)
class IterationScalars:
    """xi = (w, Aw), nu = (As, TAs), mu = (w, As), eta = (s, As)."""

    xi: float
    nu: float
    mu: float
    eta: float

    @property
    def gram_det(self) -> float:
        return self.nu * self.mu - self.eta * self.eta


def _axpy(a: float, x: np.ndarray, y: np.ndarray) -> None:
    """y += a*x in place, no temporaries."""
    blas.daxpy(x, y, a=a)


def _maxabs(v: np.ndarray) -> float:
    return float(max(v.max(), -v.min()))


def _finite(*vals: float) -> None:
    if not all(math.isfinite(v) for v in vals):
        raise NumericalFailure("numerical failure: non-finite iteration scalar")


class _Setup:
    """r0, w0 = T r0 and the residual measure shared by the PSD-type solvers."""

    def __init__(self, A: SparseMatrix, T, f, x0, cfg: SolverConfig, cnt: Counters):
        n = A.n
        if T.dim != n:
            raise ValidationError(f"T has dimension {T.dim}, A has {n}")
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (n,):
            raise ValidationError(f"f has shape {f.shape}, expected ({n},)")
        if x0 is None:
            x = np.zeros(n)
        else:
            x = np.array(x0, dtype=np.float64)
            if x.shape != (n,):
                raise ValidationError(f"x0 has shape {x.shape}, expected ({n},)")
        self.true_mode = cfg.residual_mode == TRUE_TNORM
        buf = spmv(A, x, cnt)
        np.subtract(f, buf, out=buf)
        w = T.apply(buf, counters=cnt)
        self.x, self.w = x, w
        # r is kept only in true mode; otherwise its buffer is recycled as scratch.
        self.r = buf if self.true_mode else None
        self.scratch = None if self.true_mode else buf
        self.cnt = cnt
        self.setup_counts = cnt.snapshot()

    def measure(self) -> float:
        if self.true_mode:
            self.cnt.monitoring += 1
            return math.sqrt(max(float(np.dot(self.r, self.w)), 0.0))
        return _maxabs(self.w)

    def take_scratch(self, n: int) -> np.ndarray:
        if self.scratch is not None:
            buf, self.scratch = self.scratch, None
            return buf
        return np.empty(n)


def _report(setup: _Setup, trace, counts, termination, **extra) -> SolveReport:
    cnt = setup.cnt
    return SolveReport(
        solution=setup.x, trace=np.asarray(trace, dtype=np.float64),
        matvec_count=cnt.matvecs, prec_count=cnt.precs,
        inner_product_count=cnt.inner_products, monitoring_count=cnt.monitoring,
        termination=termination, setup_counts=setup.setup_counts,
        count_trace=counts, **extra)


def psdi(A: SparseMatrix, T, f, x0=None, cfg: SolverConfig | None = None,
         record_scalars: bool = False) -> SolveReport:
    """Two-dimensional residual T-norm minimization over span{Tr, TATr}.

    Each iteration costs 2 matvecs, 2 preconditioner applications and 4 inner
    products, with 5 working vectors (x, w, l, s, q) in cheap mode. True-mode
    tracking adds r and Aw.

    On a collinear pair (w, s) the Gram determinant nu*mu - eta^2 vanishes and
    x + (xi/mu) w is the exact solution, returned with termination
    ``exact_breakdown_solution``.
    """
    cfg = cfg or SolverConfig()
    cnt = Counters()
    st = _Setup(A, T, f, x0, cfg, cnt)
    n = A.n
    x, w = st.x, st.w
    l = st.take_scratch(n)
    s, q = np.empty(n), np.empty(n)
    aw = np.empty(n) if st.true_mode else l
    trace = [st.measure()]
    counts = [cnt.snapshot()]
    target = max(cfg.tol * trace[0], cfg.atol)
    scalars = []
    termination = MAX_ITER
    for _ in range(cfg.max_iter):
        if trace[-1] <= target:
            termination = CONVERGED
            break
        spmv(A, w, cnt, out=aw)
        T.apply(aw, out=s, counters=cnt)
        xi = float(np.dot(w, aw))
        spmv(A, s, cnt, out=l)
        T.apply(l, out=q, counters=cnt)
        nu = float(np.dot(l, q))
        mu = float(np.dot(w, l))
        eta = float(np.dot(s, l))
        cnt.inner_products += 4
        _finite(xi, nu, mu, eta)
        if record_scalars:
            scalars.append(IterationScalars(xi, nu, mu, eta))
        det = nu * mu - eta * eta
        if det > GRAM_EPS * nu * mu:
            beta = (xi * nu - mu * eta) / det
            alpha = (mu * mu - xi * eta) / det
        else:
            if mu == 0.0:
                termination = CONVERGED
                break
            # Collinear w, s: x + (xi/mu) w solves the system exactly.
            beta, alpha = xi / mu, 0.0
            termination = BREAKDOWN
        _finite(beta, alpha)
        _axpy(beta, w, x)
        _axpy(alpha, s, x)
        _axpy(-beta, s, w)
        _axpy(-alpha, q, w)
        if st.true_mode:
            _axpy(-beta, aw, st.r)
            _axpy(-alpha, l, st.r)
        trace.append(st.measure())
        counts.append(cnt.snapshot())
        if termination == BREAKDOWN:
            break
    else:
        if trace[-1] <= target:
            termination = CONVERGED
    return _report(st, trace, counts, termination, scalars=scalars)


def psdi_1d(A: SparseMatrix, T, f, x0=None, cfg: SolverConfig | None = None,
            interval: IntervalPair | None = None) -> SolveReport:
    """One-dimensional residual T-norm minimization along l = TAw - beta*w.

    beta is chosen per iteration by ``cfg.beta`` and must lie in (b, c);
    ``interval`` is required except for a fixed beta. Each iteration costs
    2 matvecs, 2 preconditioner applications and 2 inner products with 5
    working vectors (x, w, s, l, q) in cheap mode.
    """
    cfg = cfg or SolverConfig()
    strategy = cfg.beta
    if strategy.kind != "fixed" and interval is None:
        raise ValidationError(f"beta strategy {strategy.kind!r} needs an IntervalPair")
    rng = cfg.rng()
    cnt = Counters()
    st = _Setup(A, T, f, x0, cfg, cnt)
    n = A.n
    x, w = st.x, st.w
    l = st.take_scratch(n)
    s, q = np.empty(n), np.empty(n)
    trace = [st.measure()]
    counts = [cnt.snapshot()]
    target = max(cfg.tol * trace[0], cfg.atol)
    betas = []
    termination = MAX_ITER
    for _ in range(cfg.max_iter):
        if trace[-1] <= target:
            termination = CONVERGED
            break
        beta = strategy.draw(interval, rng)
        betas.append(beta)
        spmv(A, w, cnt, out=l)
        T.apply(l, out=s, counters=cnt)
        # l = s - beta*w
        np.copyto(l, s)
        _axpy(-beta, w, l)
        spmv(A, l, cnt, out=s)
        T.apply(s, out=q, counters=cnt)
        num = float(np.dot(w, s))
        den = float(np.dot(s, q))
        cnt.inner_products += 2
        _finite(num, den)
        if den <= 0.0:
            if _maxabs(w) == 0.0:
                termination = CONVERGED
                break
            raise NumericalFailure("numerical failure: direction annihilated (Al, TAl) = 0")
        alpha = num / den
        _axpy(alpha, l, x)
        _axpy(-alpha, q, w)
        if st.true_mode:
            _axpy(-alpha, s, st.r)
        trace.append(st.measure())
        counts.append(cnt.snapshot())
    else:
        if trace[-1] <= target:
            termination = CONVERGED
    return _report(st, trace, counts, termination, betas=betas)


def stationary_two_term(A: SparseMatrix, T, f, x0, alpha: float, beta: float,
                        max_iter: int, residual_mode: str = TRUE_TNORM) -> SolveReport:
    """Constant-parameter iteration x <- x + alpha*(TAw - beta*w), w = T(f - Ax).

    Contracts per step by rho_stationary(I, alpha, beta) when b < beta < c and
    0 < alpha < tau_beta; otherwise it may diverge, which is reported as is.
    """
    cfg = SolverConfig(tol=0.0, max_iter=max_iter, residual_mode=residual_mode)
    alpha, beta = float(alpha), float(beta)
    _finite(alpha, beta)
    cnt = Counters()
    st = _Setup(A, T, f, x0, cfg, cnt)
    n = A.n
    x, w = st.x, st.w
    l = st.take_scratch(n)
    s, q = np.empty(n), np.empty(n)
    trace = [st.measure()]
    counts = [cnt.snapshot()]
    termination = MAX_ITER
    for _ in range(cfg.max_iter):
        if trace[-1] == 0.0:
            termination = CONVERGED
            break
        spmv(A, w, cnt, out=l)
        T.apply(l, out=s, counters=cnt)
        np.copyto(l, s)
        _axpy(-beta, w, l)
        spmv(A, l, cnt, out=s)
        T.apply(s, out=q, counters=cnt)
        _axpy(alpha, l, x)
        _axpy(-alpha, q, w)
        if st.true_mode:
            _axpy(-alpha, s, st.r)
        trace.append(st.measure())
        counts.append(cnt.snapshot())
        if not math.isfinite(trace[-1]):
            raise NumericalFailure("numerical failure: residual overflow")
    return _report(st, trace, counts, termination)


def orthomin1(A: SparseMatrix, T, f, x0=None, max_iter: int = 100,
              residual_mode: str = TRUE_TNORM) -> SolveReport:
    """x <- x + alpha*T r with alpha minimizing ||r - alpha*ATr||_T.

    Equivalent to PMINRES restarted every step. Not convergent for indefinite
    A with SPD T in general; kept as a baseline.
    """
    cfg = SolverConfig(tol=0.0, max_iter=max_iter, residual_mode=residual_mode)
    cnt = Counters()
    st = _Setup(A, T, f, x0, cfg, cnt)
    n = A.n
    x, w = st.x, st.w
    aw = st.take_scratch(n)
    q = np.empty(n)
    trace = [st.measure()]
    counts = [cnt.snapshot()]
    termination = MAX_ITER
    for _ in range(cfg.max_iter):
        if trace[-1] == 0.0:
            termination = CONVERGED
            break
        spmv(A, w, cnt, out=aw)
        T.apply(aw, out=q, counters=cnt)
        num = float(np.dot(w, aw))
        den = float(np.dot(aw, q))
        cnt.inner_products += 2
        _finite(num, den)
        if den == 0.0:
            raise NumericalFailure("numerical failure: zero step denominator (Aw, TAw)")
        alpha = num / den
        _axpy(alpha, w, x)
        _axpy(-alpha, q, w)
        if st.true_mode:
            _axpy(-alpha, aw, st.r)
        trace.append(st.measure())
        counts.append(cnt.snapshot())
    return _report(st, trace, counts, termination)


def _pminres_cycle(A, T, f, x, cnt, max_steps, tol, atol, trace, counts):
    """Run up to ``max_steps`` preconditioned MINRES steps from x (in place).

    Lanczos in the T^{-1} inner product with Givens rotations. Appends
    ||r_j||_T after each step to ``trace``; on the first cycle also appends
    the initial norm (when ``trace`` is empty). Convergence is relative to
    trace[0]. Returns (steps taken, termination or None).
    """
    n = A.n
    v = spmv(A, x, cnt)
    np.subtract(f, v, out=v)
    z = T.apply(v, counters=cnt)
    g2 = float(np.dot(z, v))
    cnt.inner_products += 1
    _finite(g2)
    if g2 < 0.0:
        raise NumericalFailure("numerical failure: preconditioner not positive")
    gamma = math.sqrt(g2)
    if not trace:
        trace.append(gamma)
        counts.append(cnt.snapshot())
    target = max(tol * trace[0], atol)
    if gamma <= target or gamma == 0.0:
        return 0, CONVERGED
    v_prev = np.zeros(n)
    w_prev, w_cur = np.zeros(n), np.zeros(n)
    az = np.empty(n)
    gamma_prev = 1.0
    eta = gamma
    c_prev = c_cur = 1.0
    s_prev = s_cur = 0.0
    breakdown_tol = 1e-14 * gamma
    for step in range(1, max_steps + 1):
        z /= gamma
        spmv(A, z, cnt, out=az)
        delta = float(np.dot(az, z))
        # v_next = Az - (delta/gamma) v - (gamma/gamma_prev) v_prev, built in az
        _axpy(-delta / gamma, v, az)
        _axpy(-gamma / gamma_prev, v_prev, az)
        v_prev, v, az = v, az, v_prev
        z_next = T.apply(v, counters=cnt)
        g2 = float(np.dot(z_next, v))
        cnt.inner_products += 2
        _finite(delta, g2)
        if g2 < 0.0:
            raise NumericalFailure("numerical failure: preconditioner not positive")
        gamma_next = math.sqrt(g2)
        a0 = c_cur * delta - c_prev * s_cur * gamma
        a1 = math.hypot(a0, gamma_next)
        a2 = s_cur * delta + c_prev * c_cur * gamma
        a3 = s_prev * gamma
        if a1 == 0.0:
            raise NumericalFailure("numerical failure: singular projected system")
        c_next, s_next = a0 / a1, gamma_next / a1
        # w_next = (z - a3 w_prev - a2 w_cur) / a1, reusing w_prev's buffer
        w_prev *= -a3 / a1
        _axpy(-a2 / a1, w_cur, w_prev)
        _axpy(1.0 / a1, z, w_prev)
        w_prev, w_cur = w_cur, w_prev
        _axpy(c_next * eta, w_cur, x)
        eta = -s_next * eta
        trace.append(abs(eta))
        counts.append(cnt.snapshot())
        c_prev, c_cur = c_cur, c_next
        s_prev, s_cur = s_cur, s_next
        gamma_prev, gamma, z = gamma, gamma_next, z_next
        if abs(eta) <= target:
            return step, CONVERGED
        if gamma <= breakdown_tol:
            # Invariant Krylov subspace: the iterate is the exact minimizer.
            if abs(eta) <= max(target, breakdown_tol):
                return step, CONVERGED
            raise NumericalFailure("numerical failure: Lanczos breakdown with nonzero residual")
    return max_steps, None


def _prepare_pminres(A, T, f, x0):
    n = A.n
    if T.dim != n:
        raise ValidationError(f"T has dimension {T.dim}, A has {n}")
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (n,):
        raise ValidationError(f"f has shape {f.shape}, expected ({n},)")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise ValidationError(f"x0 has shape {x.shape}, expected ({n},)")
    return f, x


def pminres(A: SparseMatrix, T, f, x0=None, cfg: SolverConfig | None = None) -> SolveReport:
    """Preconditioned MINRES; minimizes ||r||_T over the preconditioned Krylov space.

    Per step: 1 matvec, 1 preconditioner application, 2 inner products; setup
    adds one inner product for ||r0||_T.
    """
    cfg = cfg or SolverConfig()
    f, x = _prepare_pminres(A, T, f, x0)
    cnt = Counters()
    trace: list[float] = []
    counts: list[tuple[int, int, int]] = []
    _, term = _pminres_cycle(A, T, f, x, cnt, cfg.max_iter, cfg.tol, cfg.atol, trace, counts)
    return SolveReport(
        solution=x, trace=np.asarray(trace), matvec_count=cnt.matvecs,
        prec_count=cnt.precs, inner_product_count=cnt.inner_products,
        monitoring_count=0, termination=term or MAX_ITER, setup_counts=(1, 1, 1),
        count_trace=counts)


def pminres_restarted(A: SparseMatrix, T, f, x0=None, k: int = 2,
                      cfg: SolverConfig | None = None) -> SolveReport:
    """PMINRES restarted every ``k`` steps.

    Every restart recomputes r = f - Ax, T r and ||r||_T, i.e. one extra
    matvec, preconditioner application and inner product per cycle. ``trace``
    holds one entry per step; ``cycles`` lists trace indices at cycle ends.
    ``cfg.max_iter`` bounds the total number of steps.
    """
    if int(k) < 1:
        raise ValidationError("restart length k must be >= 1")
    cfg = cfg or SolverConfig()
    f, x = _prepare_pminres(A, T, f, x0)
    cnt = Counters()
    trace: list[float] = []
    cycles: list[int] = []
    counts: list[tuple[int, int, int]] = []
    total = 0
    term = None
    while total < cfg.max_iter:
        steps, term = _pminres_cycle(A, T, f, x, cnt, min(int(k), cfg.max_iter - total),
                                     cfg.tol, cfg.atol, trace, counts)
        total += steps
        if steps:
            cycles.append(len(trace) - 1)
        if term is not None:
            break
    return SolveReport(
        solution=x, trace=np.asarray(trace), matvec_count=cnt.matvecs,
        prec_count=cnt.precs, inner_product_count=cnt.inner_products,
        monitoring_count=0, termination=term or MAX_ITER, setup_counts=(1, 1, 1),
        cycles=cycles, count_trace=counts)
