"""Experiment runner: problem descriptors, solver specs, trace CSV and summary JSON."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import problems, solvers, theory
from .core import SparseMatrix, ValidationError, read_matrix_market, write_matrix_market
from .precond import IdentityPreconditioner, inverse_spd_preconditioner
from .solvers import BetaStrategy, SolverConfig, SolveReport

__all__ = [
    "CSV_HEADER",
    "SolverSpec",
    "ExperimentSpec",
    "TraceRecord",
    "parse_problem",
    "build_problem",
    "parse_solver",
    "run_solver",
    "run_experiment",
    "spectrum_summary",
    "generate",
]

CSV_HEADER = ["solver", "iter", "res_tnorm", "matvecs", "precs", "inner_products", "bound"]
SOLVER_KINDS = ("psdi", "psdi1d", "pminres", "pminres_restarted", "orthomin1")


def _fmt(x: float) -> str:
    return "" if x is None else f"{x:.17g}"


def _coerce(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_problem(desc) -> dict:
    """``laplacian:m=63,sigma=100``, ``saddle:m=32,tau=0.01``,
    ``diagonal:-2,-1,1,2`` or ``mtx:path[,prec=path][,vectors=problem.json]`` -> dict.

    For ``mtx`` the preconditioner is T = B^{-1} with B read from ``prec``
    (identity when absent); ``vectors`` names a JSON file with ``f`` and
    ``x0`` such as the one written by :func:`generate`.
    Extra keys: ``seed``, ``perturb`` (x0 = x* + U[0, perturb]),
    ``perturb_seed``, ``rhs`` (saddle only).
    """
    if isinstance(desc, dict):
        return dict(desc)
    name, _, rest = desc.partition(":")
    out: dict = {"generator": name}
    spectrum = []
    for item in filter(None, rest.split(",")):
        if "=" in item:
            k, v = item.split("=", 1)
            out[k.strip()] = _coerce(v.strip())
        elif name == "diagonal":
            spectrum.append(float(item))
        elif name == "mtx" and "matrix" not in out:
            out["matrix"] = item
        else:
            raise ValidationError(f"cannot parse problem item {item!r}")
    if spectrum:
        out["spectrum"] = spectrum
    return out


def build_problem(desc) -> problems.ProblemInstance:
    d = parse_problem(desc)
    gen = d.get("generator")
    seed = int(d.get("seed", 0))
    if gen == "laplacian":
        P = problems.shifted_laplacian(int(d.get("m", 63)), float(d.get("sigma", 100.0)), seed)
    elif gen == "saddle":
        P = problems.control_saddle_problem(int(d.get("m", 32)), float(d.get("tau", 1e-2)),
                                            seed, str(d.get("rhs", "random")))
    elif gen == "diagonal":
        if "spectrum" not in d:
            raise ValidationError("diagonal problem needs a spectrum")
        P = problems.diagonal_model(d["spectrum"], seed)
    elif gen == "mtx":
        if "matrix" not in d:
            raise ValidationError("mtx problem needs a matrix path")
        A = read_matrix_market(d["matrix"])
        T = (inverse_spd_preconditioner(read_matrix_market(d["prec"]))
             if "prec" in d else IdentityPreconditioner(A.n))
        if "vectors" in d:
            vec = json.loads(Path(d["vectors"]).read_text())
            f, x0 = np.asarray(vec["f"], dtype=np.float64), np.asarray(vec["x0"], dtype=np.float64)
            if f.shape != (A.n,) or x0.shape != (A.n,):
                raise ValidationError(f"{d['vectors']}: vectors do not match n={A.n}")
        else:
            f = np.random.Generator(np.random.PCG64(seed)).uniform(-1.0, 1.0, A.n)
            x0 = np.zeros(A.n)
        P = problems.ProblemInstance(A, T, f, x0,
                                     f"mtx({Path(d['matrix']).name})",
                                     {"generator": "mtx", "n": A.n, "seed": seed,
                                      "matrix": str(d["matrix"]), "prec": d.get("prec")})
    else:
        raise ValidationError(f"unknown problem generator {gen!r}")
    if "perturb" in d:
        eps = float(d["perturb"])
        P = P.with_start(problems.perturbed_solution_start(P, eps, int(d.get("perturb_seed", seed))))
        P.metadata["perturb"] = eps
    return P


@dataclass(frozen=True)
class SolverSpec:
    kind: str
    config: SolverConfig = field(default_factory=SolverConfig)
    restart: int = 2

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValidationError(f"unknown solver {self.kind!r}; choose from {SOLVER_KINDS}")

    @property
    def label(self) -> str:
        if self.kind == "psdi1d":
            return f"psdi1d[{self.config.beta.label()}]"
        if self.kind == "pminres_restarted":
            return f"pminres({self.restart})"
        return self.kind

    @property
    def randomized(self) -> bool:
        return self.kind == "psdi1d" and self.config.beta.is_random()


def parse_solver(text, base: SolverConfig | None = None) -> SolverSpec:
    """``psdi``, ``psdi1d`` (uses base beta), ``psdi1d@uniform``,
    ``psdi1d@normal:opt:0.1``, ``pminres``, ``pminres_restarted:2``, ``orthomin1``.

    A dict ``{"solver": ..., "beta": ..., "tol": ..., "max_iter": ...}`` is
    also accepted.
    """
    base = base or SolverConfig()
    if isinstance(text, dict):
        d = dict(text)
        spec = parse_solver(d.pop("solver"), base)
        changes = {}
        if "beta" in d:
            changes["beta"] = BetaStrategy.parse(d.pop("beta"))
        for key in ("tol", "max_iter", "residual_mode", "rng_seed", "atol"):
            if key in d:
                changes[key] = d.pop(key)
        restart = int(d.pop("restart", spec.restart))
        if d:
            raise ValidationError(f"unknown solver options {sorted(d)}")
        return SolverSpec(spec.kind, spec.config.replace(**changes), restart)
    name, _, beta = text.partition("@")
    name, _, arg = name.partition(":")
    cfg = base
    if beta:
        if name != "psdi1d":
            raise ValidationError(f"beta strategy only applies to psdi1d, not {name!r}")
        cfg = cfg.replace(beta=BetaStrategy.parse(beta))
    restart = 2
    if name == "pminres_restarted" and arg:
        restart = int(arg)
    elif arg:
        raise ValidationError(f"unexpected solver argument in {text!r}")
    return SolverSpec(name, cfg, restart)


def run_solver(spec: SolverSpec, P: problems.ProblemInstance,
               interval: theory.IntervalPair | None = None,
               seed: int | None = None) -> SolveReport:
    cfg = spec.config if seed is None else spec.config.replace(rng_seed=seed)
    if spec.kind == "psdi":
        return solvers.psdi(P.A, P.T, P.f, P.x0, cfg)
    if spec.kind == "psdi1d":
        return solvers.psdi_1d(P.A, P.T, P.f, P.x0, cfg, interval)
    if spec.kind == "pminres":
        return solvers.pminres(P.A, P.T, P.f, P.x0, cfg)
    if spec.kind == "pminres_restarted":
        return solvers.pminres_restarted(P.A, P.T, P.f, P.x0, spec.restart, cfg)
    return solvers.orthomin1(P.A, P.T, P.f, P.x0, cfg.max_iter, cfg.residual_mode)


@dataclass
class ExperimentSpec:
    problem: object
    solvers: list[SolverSpec]
    repetitions: int = 1
    seed: int = 0
    bound_overlay: bool = False
    interval: theory.IntervalPair | None = None
    out_dir: Path | None = None
    name: str = "experiment"

    def __post_init__(self):
        if not self.solvers:
            raise ValidationError("experiment needs at least one solver")
        if int(self.repetitions) < 1:
            raise ValidationError("repetitions must be >= 1")

    @classmethod
    def from_json(cls, data: dict, base: SolverConfig | None = None) -> "ExperimentSpec":
        data = dict(data)
        base = base or SolverConfig()
        changes = {k: data.pop(k) for k in ("tol", "max_iter", "residual_mode", "atol")
                   if k in data}
        if "beta" in data:
            changes["beta"] = BetaStrategy.parse(data.pop("beta"))
        if "seed" in data:
            changes["rng_seed"] = int(data["seed"])
        base = base.replace(**changes)
        interval = data.pop("interval", None)
        if interval is not None:
            interval = theory.IntervalPair(**interval)
        out = data.pop("out", None)
        spec = cls(problem=data.pop("problem"),
                   solvers=[parse_solver(s, base) for s in data.pop("solvers", [])],
                   repetitions=int(data.pop("repetitions", 1)),
                   seed=int(data.pop("seed", 0)),
                   bound_overlay=bool(data.pop("bound_overlay", False)),
                   interval=interval, out_dir=Path(out) if out else None,
                   name=str(data.pop("name", "experiment")))
        if data:
            raise ValidationError(f"unknown experiment keys {sorted(data)}")
        return spec


@dataclass
class TraceRecord:
    solver: str
    iteration: int
    res_tnorm: float
    matvecs: int
    precs: int
    inner_products: int
    bound: float | None

    def row(self) -> list[str]:
        return [self.solver, str(self.iteration), _fmt(self.res_tnorm), str(self.matvecs),
                str(self.precs), str(self.inner_products), _fmt(self.bound)]


def _bound_fn(spec: SolverSpec, interval):
    """Per-index multiplier of trace[0], or None where no bound applies."""
    if interval is None:
        return None
    if spec.kind == "pminres":
        # PMINRES reports ||r||_T in either residual mode
        return lambda i: theory.pminres_bound(interval, i)
    if spec.config.residual_mode != solvers.TRUE_TNORM:
        return None
    if spec.kind == "psdi":
        rho = theory.rho_opt(interval)
        return lambda i: rho**i
    if spec.kind == "psdi1d":
        beta = spec.config.beta
        if beta.kind == "optimal":
            rho = theory.rho_opt(interval)
        elif beta.kind == "fixed":
            rho = theory.rho_opt_of_beta(interval, beta.value)
        else:
            return None
        return lambda i: rho**i
    return None


def _seeds(seed: int, reps: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(reps)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def _geometric_average(traces: list[np.ndarray]) -> np.ndarray:
    """Per-index geometric mean over runs that reached that index."""
    length = max(len(t) for t in traces)
    out = np.empty(length)
    for i in range(length):
        vals = [t[i] for t in traces if len(t) > i]
        out[i] = math.exp(sum(math.log(max(v, 1e-300)) for v in vals) / len(vals))
    return out


def run_experiment(spec: ExperimentSpec, problem: problems.ProblemInstance | None = None) -> dict:
    """Run every solver; write ``<name>.csv`` / ``<name>.json`` under ``out_dir``.

    Returns the summary dict (also the JSON content); ``summary["records"]``
    holds the TraceRecords and is not serialized.
    """
    P = problem if problem is not None else build_problem(spec.problem)
    interval = spec.interval
    spectrum = None
    needs_interval = any(s.kind == "psdi1d" and s.config.beta.kind != "fixed"
                         for s in spec.solvers)
    if interval is None and (spec.bound_overlay or needs_interval):
        spectrum = theory.spectrum_oracle(P.A, P.T)
        interval = theory.interval_from_spectrum(spectrum)
    records: list[TraceRecord] = []
    summary: dict = {
        "name": spec.name,
        "problem": {"label": P.label, **P.metadata},
        "seed": spec.seed,
        "repetitions": spec.repetitions,
        "solvers": [],
    }
    if interval is not None:
        summary["interval"] = interval.to_dict()
        summary["rho_opt"] = theory.rho_opt(interval)
        summary["beta_opt"] = theory.beta_opt(interval)
    if spectrum is not None:
        summary["spectrum"] = spectrum.to_dict()
    for sspec in spec.solvers:
        reps = spec.repetitions if sspec.randomized else 1
        seeds = _seeds(spec.seed, reps) if sspec.randomized else [sspec.config.rng_seed]
        reports = [run_solver(sspec, P, interval, s) for s in seeds]
        first = reports[0]
        trace = first.trace if reps == 1 else _geometric_average([r.trace for r in reports])
        # counts are deterministic per index for every solver; take the longest run
        longest = max(reports, key=lambda r: len(r.count_trace))
        bound = _bound_fn(sspec, interval) if spec.bound_overlay or spec.interval is not None else None
        for i, val in enumerate(trace):
            mv, pc, ip = longest.count_trace[i]
            records.append(TraceRecord(sspec.label, i, float(val), mv, pc, ip,
                                       None if bound is None else trace[0] * bound(i)))
        entry = {
            "solver": sspec.label,
            "final_residual": float(trace[-1]),
            "relative_residual": float(trace[-1] / trace[0]) if trace[0] else 0.0,
            "iterations": [r.iterations for r in reports] if reps > 1 else first.iterations,
            "termination": [r.termination for r in reports] if reps > 1 else first.termination,
            "matvecs": first.matvec_count,
            "precs": first.prec_count,
            "inner_products": first.inner_product_count,
            "monitoring_inner_products": first.monitoring_count,
            "tol": sspec.config.tol,
            "max_iter": sspec.config.max_iter,
            "residual_mode": sspec.config.residual_mode,
            "seeds": seeds,
        }
        summary["solvers"].append(entry)
    if spec.out_dir is not None:
        out = Path(spec.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / f"{spec.name}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for rec in records:
                writer.writerow(rec.row())
        (out / f"{spec.name}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    summary["records"] = records
    return summary


def spectrum_summary(P: problems.ProblemInstance, cap: int = theory.ORACLE_CAP) -> dict:
    S = theory.spectrum_oracle(P.A, P.T, cap)
    I = theory.interval_from_spectrum(S)
    return {**S.to_dict(), **I.to_dict(), "rho_opt": theory.rho_opt(I),
            "beta_opt": theory.beta_opt(I), "alpha_opt": theory.alpha_opt(I),
            "problem": P.label}


def generate(desc, out_dir) -> dict:
    """Write A.mtx (plus preconditioner source matrices) and ``problem.json``."""
    P = build_problem(desc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"A": "A.mtx"}
    write_matrix_market(P.A, out / "A.mtx", P.label)
    for key, mat in P.parts.items():
        if isinstance(mat, SparseMatrix):
            files[key] = f"{key}.mtx"
            write_matrix_market(mat, out / files[key], f"{P.label} {key}")
    meta = {"label": P.label, "metadata": P.metadata, "files": files,
            "f": P.f.tolist(), "x0": P.x0.tolist()}
    (out / "problem.json").write_text(json.dumps(meta, indent=1) + "\n")
    return meta
