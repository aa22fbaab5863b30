"""SOLVE -> ESTIMATE -> MARK -> REFINE loops, uniform studies and observed rates."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .assembly import Context, assemble_dg_matrix, assemble_gram, assemble_load, restrict_to_trial, SaddleSystem
from .estimate import ErrorReport, dorfler_mark, error_norms, local_indicators
from .mesh import MeshTopology, bisect, build_structured, refine_uniform, write_vtk
from .problem import ProblemSpec
from .solver import SolveResult, SolverError, solve_direct, solve_iterative
from .spaces import CgSpace, DgSpace, make_quadrature, reference_basis

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "level", "elements", "dofs_trial", "dofs_test", "estimator",
    "err_L2", "err_Vh", "err_Vh_beta", "effectivity",
    "rate_estimator", "rate_err_L2", "rate_err_Vh", "rate_err_Vh_beta",
)
SOLVER_COLUMNS = ("level", "dofs", "backend", "outer_iterations", "inner_iterations",
                  "residual_1", "residual_2", "seconds")


class StudyError(RuntimeError):
    """A level failed; ``records`` holds the levels completed before it."""

    def __init__(self, message: str, records: list):
        super().__init__(message)
        self.records = records


@dataclass
class SolverOptions:
    backend: str = "direct"  # direct | iterative
    tol: float = 1e-10
    outer_tol: float = 1e-8
    max_outer: int = 20
    inner_tol: float = 1e-10
    krylov_restart: int = 30
    augment: int = 3
    warm_start: bool = True


@dataclass
class AdaptRecord:
    level: int
    elements: int
    dofs_trial: int
    dofs_test: int
    h: float
    estimator: float
    err_L2: float | None = None
    err_Vh: float | None = None
    err_Vh_beta: float | None = None
    effectivity: float | None = None
    marked: int = 0
    outer_iterations: int = 0
    inner_iterations: int = 0
    residual_1: float = 0.0
    residual_2: float = 0.0
    seconds: float = 0.0

    @property
    def total_dofs(self) -> int:
        return self.dofs_trial + self.dofs_test


@dataclass
class LevelState:
    """Everything computed on one level; handed to ``on_level`` observers."""

    level: int
    mesh: MeshTopology
    trial: CgSpace
    test: DgSpace
    system: SaddleSystem
    result: SolveResult
    report: ErrorReport
    marked: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))


def prolong_dg(old: MeshTopology, new: MeshTopology, coeffs: np.ndarray, p: int) -> np.ndarray:
    """Transfer a broken polynomial field to a refinement of its mesh (exact)."""
    parent = new.parent
    c = np.asarray(coeffs).reshape(old.n_elements, -1)
    X = DgSpace(new, p).node_coordinates()
    inv = np.linalg.inv(old.jacobians[parent])
    v0 = old.vertices[old.elements[parent, 0]]
    xi = np.einsum("eab,enb->ena", inv, X - v0[:, None, :])
    phi, _ = reference_basis(p, xi)
    return np.einsum("eni,ei->en", phi, c[parent]).ravel()


def prolong_cg(old_space: CgSpace, new_space: CgSpace, coeffs: np.ndarray) -> np.ndarray:
    dg = prolong_dg(old_space.mesh, new_space.mesh, old_space.E @ coeffs, old_space.p)
    out = np.empty(new_space.dim)
    out[new_space.dofmap.ravel()] = dg
    return out


def element_means(space: DgSpace, coeffs: np.ndarray) -> np.ndarray:
    """Per-element mean values of a broken polynomial field."""
    rule = make_quadrature(space.p)
    phi, _ = reference_basis(space.p, rule.points)
    c = np.asarray(coeffs).reshape(space.mesh.n_elements, -1)
    return 2.0 * (c @ (rule.weights @ phi))


def write_level_vtk(path, state: LevelState) -> None:
    """u_h at vertices, element means of eps_h and the indicators E_T."""
    write_vtk(path, state.mesh,
              point_data={"u_h": state.trial.vertex_values(state.result.u)},
              cell_data={"eps_h_mean": element_means(state.test, state.result.eps),
                         "E_T": state.report.indicators},
              title=f"resmin level {state.level}")


def assemble_level(mesh: MeshTopology, problem: ProblemSpec, p: int, q: int | None = None):
    """Saddle system with trial degree ``p`` and test degree ``q`` (default ``p``)."""
    q = p if q is None else q
    test = DgSpace(mesh, q)
    trial = CgSpace(mesh, p)
    E = trial.embedding(q)
    ctx = Context(mesh, test, problem, make_quadrature(q))
    B_full = assemble_dg_matrix(mesh, test, problem, _ctx=ctx)
    G = assemble_gram(mesh, test, problem, _ctx=ctx)
    L = assemble_load(mesh, test, problem, _ctx=ctx)
    system = SaddleSystem(G, restrict_to_trial(B_full, E), B_full, L, E,
                          {"test": test.dim, "trial": trial.dim, "elements": mesh.n_elements})
    return test, trial, ctx, system


def solve_level(system: SaddleSystem, opts: SolverOptions, warm=None) -> SolveResult:
    if opts.backend == "direct":
        return solve_direct(system, tol=opts.tol)
    if opts.backend == "iterative":
        return solve_iterative(system, outer_tol=opts.outer_tol, max_outer=opts.max_outer,
                               inner_tol=opts.inner_tol, krylov_restart=opts.krylov_restart,
                               augment=opts.augment, warm_start=warm)
    raise ValueError(f"unknown solver backend {opts.backend!r}")


def _run(problem: ProblemSpec, p: int, levels: int, opts: SolverOptions,
         refine: Callable[[MeshTopology, LevelState], tuple[MeshTopology, np.ndarray]],
         mesh: MeshTopology | None, n: int | None,
         on_level: Callable[[LevelState], None] | None,
         stop_below: float | None = None, max_dofs: int | None = None,
         q: int | None = None) -> list[AdaptRecord]:
    if levels < 1:
        raise ValueError("levels must be >= 1")
    q = p if q is None else q
    if q != p:
        log.warning("test degree %d differs from trial degree %d (experimental)", q, p)
    if mesh is None:
        mesh = build_structured(problem.domain, n or problem.initial_n, problem.interfaces)
    records: list[AdaptRecord] = []
    warm = None
    prev_trial = None
    for level in range(levels):
        t0 = time.perf_counter()
        test, trial, ctx, system = assemble_level(mesh, problem, p, q)
        guess = None
        if warm is not None and opts.warm_start:
            guess = (prolong_dg(prev_trial.mesh, mesh, warm.eps, q),
                     prolong_cg(prev_trial, trial, warm.u))
        try:
            result = solve_level(system, opts, guess)
        except SolverError as exc:
            raise StudyError(f"level {level}: {exc}", records) from exc
        if opts.backend == "iterative" and not result.converged:
            raise StudyError(f"level {level}: iterative solver stagnated at "
                             f"{result.relative_residual:.2e}", records)
        report = local_indicators(mesh, test, problem, result.eps, ctx=ctx)
        rec = AdaptRecord(level, mesh.n_elements, trial.dim, test.dim, mesh.h, report.estimator)
        if problem.exact is not None:
            errs = error_norms(mesh, trial, result.u, problem)
            report.true_errors = errs
            rec.err_L2, rec.err_Vh, rec.err_Vh_beta = errs["L2"], errs["Vh"], errs["Vh_beta"]
            rec.effectivity = report.estimator / errs["Vh"] if errs["Vh"] > 0 else math.nan
            report.effectivity = rec.effectivity
        r1, r2 = result.residuals(system)
        rec.outer_iterations = result.iterations
        rec.inner_iterations = int(sum(result.inner_iterations))
        rec.residual_1, rec.residual_2 = r1, r2
        state = LevelState(level, mesh, trial, test, system, result, report)
        last = (level == levels - 1
                or (stop_below is not None and rec.estimator <= stop_below)
                or (max_dofs is not None and rec.total_dofs >= max_dofs))
        if not last:
            new_mesh, marked = refine(mesh, state)
            state.marked = marked
            rec.marked = len(marked)
        rec.seconds = time.perf_counter() - t0
        records.append(rec)
        log.info("level %d: %d elements, %d dofs, estimator %.4e", level, rec.elements,
                 rec.total_dofs, rec.estimator)
        if on_level is not None:
            on_level(state)
        if last:
            break
        if len(state.marked) == 0:
            break
        warm, prev_trial, mesh = result, trial, new_mesh
    return records


def run_adaptive(problem: ProblemSpec, p: int, levels: int, theta: float = 0.5,
                 solver: SolverOptions | None = None, mesh: MeshTopology | None = None,
                 n: int | None = None, squared: bool = False,
                 on_level: Callable[[LevelState], None] | None = None,
                 stop_below: float | None = None, max_dofs: int | None = None,
                 test_degree: int | None = None) -> list[AdaptRecord]:
    """Adaptive loop driven by the residual representative.

    Each level bisects the Doerfler set of the indicators ``E_T``; the loop
    ends after ``levels`` solves, once every indicator vanishes or once the
    estimator drops to ``stop_below`` or once a level reaches ``max_dofs``
    total degrees of freedom.
    """
    def refine(mesh, state):
        marked = dorfler_mark(state.report.indicators, theta, squared=squared)
        return bisect(mesh, marked), marked

    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    return _run(problem, p, levels, solver or SolverOptions(), refine, mesh, n, on_level,
                stop_below, max_dofs, test_degree)


def run_uniform(problem: ProblemSpec, p: int, levels: int, solver: SolverOptions | None = None,
                mesh: MeshTopology | None = None, n: int | None = None,
                on_level: Callable[[LevelState], None] | None = None,
                test_degree: int | None = None) -> list[AdaptRecord]:
    """Uniform study: every level halves h (mark all, bisect twice)."""
    def refine(mesh, state):
        return refine_uniform(mesh), np.arange(mesh.n_elements)

    return _run(problem, p, levels, solver or SolverOptions(), refine, mesh, n, on_level,
                q=test_degree)


_X = {"dofs": lambda r: r.total_dofs, "h": lambda r: r.h}
_Y = {
    "errL2": "err_L2", "err_L2": "err_L2",
    "errVh": "err_Vh", "err_Vh": "err_Vh",
    "errVhBeta": "err_Vh_beta", "err_Vh_beta": "err_Vh_beta",
    "estimator": "estimator",
}


def observed_rates(records: list[AdaptRecord], x: str = "dofs", y: str = "errVh") -> list:
    """Slopes log(y_{k+1}/y_k) / log(x_{k+1}/x_k); ``None`` where undefined.

    In 2D, optimal decay of the V_h error corresponds to a DOF slope of -p/2
    and to an h slope of p.
    """
    if len(records) < 2:
        raise ValueError("need at least two records")
    fx = _X[x]
    attr = _Y[y]
    out = []
    for a, b in zip(records[:-1], records[1:]):
        ya, yb = getattr(a, attr), getattr(b, attr)
        xa, xb = fx(a), fx(b)
        if ya is None or yb is None or ya <= 0 or yb <= 0 or xa <= 0 or xb <= 0 or xa == xb:
            out.append(None)
            continue
        out.append(math.log(yb / ya) / math.log(xb / xa))
    return out


def fitted_rate(records: list[AdaptRecord], x: str = "dofs", y: str = "errVh") -> float:
    """Least-squares slope of log y against log x over the given records."""
    xs = np.log([_X[x](r) for r in records])
    ys = np.log([getattr(r, _Y[y]) for r in records])
    return float(np.polyfit(xs, ys, 1)[0])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_convergence_csv(path, records: list[AdaptRecord]) -> None:
    """One row per level; rates are DOF slopes against the previous level."""
    rates = {}
    for key in ("estimator", "err_L2", "err_Vh", "err_Vh_beta"):
        rates[key] = [None] + (observed_rates(records, "dofs", key) if len(records) > 1 else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i, r in enumerate(records):
            row = asdict(r)
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS[:9]]
                       + [_fmt(rates[k][i]) for k in ("estimator", "err_L2", "err_Vh", "err_Vh_beta")])


def write_solver_csv(path, records: list[AdaptRecord], backend: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SOLVER_COLUMNS)
        for r in records:
            w.writerow([r.level, r.total_dofs, backend, r.outer_iterations, r.inner_iterations,
                        f"{r.residual_1:.3e}", f"{r.residual_2:.3e}", f"{r.seconds:.3f}"])
