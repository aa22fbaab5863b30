"""Command-line entry point: ``resmin list-problems | solve | study``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import (CSV_COLUMNS, StudyError, assemble_level, run_adaptive, run_uniform,
                    solve_level, write_convergence_csv, write_level_vtk, write_solver_csv,
                    LevelState)
from .assembly import write_matrix_market
from .config import SCHEMA, ConfigError, RunConfig, load_config
from .estimate import error_norms, local_indicators
from .expr import ExpressionError
from .mesh import MeshError, build_structured
from .problem import CATALOG, catalog
from .solver import SolverError

log = logging.getLogger("resmin")


def cmd_list_problems(out=None) -> int:
    out = out or sys.stdout
    width = max(len(name) for name in CATALOG)
    for name in CATALOG:
        out.write(f"{name:<{width}}  {catalog(name).description}\n")
    return 0


def _prepare(args) -> tuple[RunConfig, Path]:
    overrides = {k: getattr(args, k, None) for k in ("levels", "degree", "theta", "mode", "n")}
    overrides["backend"] = getattr(args, "solver", None)
    if getattr(args, "vtk", False):
        overrides["vtk"] = True
    if getattr(args, "output", None):
        overrides["output"] = args.output
    cfg = load_config(args.config, overrides)
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    return cfg, outdir


def _metadata(cfg: RunConfig, problem, extra: dict) -> dict:
    return {"resmin_version": __version__, "config": cfg.to_dict(), "problem": problem.name,
            "description": problem.description, "csv_columns": list(CSV_COLUMNS), **extra}


def _dump_system(outdir: Path, state: LevelState) -> None:
    write_matrix_market(outdir / "G.mtx", state.system.G, "Gram matrix")
    write_matrix_market(outdir / "B.mtx", state.system.B, "trial-restricted dG matrix")
    np.savetxt(outdir / "L.txt", state.system.L)


def cmd_study(args) -> int:
    cfg, outdir = _prepare(args)
    problem = cfg.build_problem(Path(args.config).resolve().parent)
    states = []

    def on_level(state):
        if cfg.vtk:
            write_level_vtk(outdir / f"level_{state.level:03d}.vtk", state)
        states[:] = [state]

    status = 0
    try:
        if cfg.mode == "adaptive":
            records = run_adaptive(problem, cfg.degree, cfg.levels, cfg.theta, cfg.solver,
                                   n=cfg.n, squared=cfg.squared_marking, on_level=on_level,
                                   stop_below=cfg.stop_below, test_degree=cfg.test_degree)
        else:
            records = run_uniform(problem, cfg.degree, cfg.levels, cfg.solver, n=cfg.n,
                                  on_level=on_level, test_degree=cfg.test_degree)
    except StudyError as exc:
        records = exc.records
        log.error("study aborted: %s", exc)
        status = 3
    write_convergence_csv(outdir / "convergence.csv", records)
    write_solver_csv(outdir / "solver.csv", records, cfg.solver.backend)
    if cfg.matrix_market and states:
        _dump_system(outdir, states[0])
    meta = _metadata(cfg, problem, {"levels_completed": len(records),
                                    "status": "ok" if status == 0 else "aborted"})
    (outdir / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for r in records:
        err = "" if r.err_Vh is None else f"  err_Vh={r.err_Vh:.4e}"
        print(f"level {r.level:3d}  elements={r.elements:7d}  dofs={r.total_dofs:8d}  "
              f"estimator={r.estimator:.4e}{err}")
    return status


def cmd_solve(args) -> int:
    cfg, outdir = _prepare(args)
    problem = cfg.build_problem(Path(args.config).resolve().parent)
    mesh = build_structured(problem.domain, cfg.n or problem.initial_n, problem.interfaces)
    test, trial, ctx, system = assemble_level(mesh, problem, cfg.degree, cfg.test_degree)
    result = solve_level(system, cfg.solver)
    report = local_indicators(mesh, test, problem, result.eps, ctx=ctx)
    uvals = system.E @ result.u
    summary = {"elements": mesh.n_elements, "dofs_trial": trial.dim, "dofs_test": test.dim,
               "dofs": trial.dim + test.dim, "estimator": report.estimator,
               "u_min": float(uvals.min()), "u_max": float(uvals.max()),
               "outer_iterations": result.iterations}
    if problem.exact is not None:
        errs = error_norms(mesh, trial, result.u, problem)
        summary.update(err_L2=errs["L2"], err_Vh=errs["Vh"], err_Vh_beta=errs["Vh_beta"])
    state = LevelState(0, mesh, trial, test, system, result, report)
    write_level_vtk(outdir / "solution.vtk", state)
    if cfg.matrix_market:
        _dump_system(outdir, state)
    meta = _metadata(cfg, problem, {"summary": summary})
    (outdir / "solve.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print("  ".join(f"{k}={v:.6e}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in summary.items()))
    return 0


def cmd_schema(args) -> int:
    width = max(len(k) for k in SCHEMA)
    for key, text in SCHEMA.items():
        print(f"{key:<{width}}  {text}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resmin",
        description="Adaptive residual minimization on dual discontinuous Galerkin norms.")
    parser.add_argument("--version", action="version", version=f"resmin {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list-problems", help="list catalog problems")
    sub.add_parser("schema", help="describe the configuration keys")

    def common(p):
        p.add_argument("-c", "--config", required=True, help="JSON run configuration")
        p.add_argument("-o", "--output", help="output directory (overrides the config)")
        p.add_argument("--degree", type=int)
        p.add_argument("--n", type=int, help="initial mesh resolution")
        p.add_argument("--solver", choices=("direct", "iterative"))

    solve = sub.add_parser("solve", help="one mesh, one solve")
    common(solve)
    study = sub.add_parser("study", help="uniform or adaptive convergence study")
    common(study)
    study.add_argument("--levels", type=int)
    study.add_argument("--theta", type=float)
    study.add_argument("--mode", choices=("uniform", "adaptive"))
    study.add_argument("--vtk", action="store_true", help="write one VTK file per level")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-problems":
        return cmd_list_problems()
    if args.command == "schema":
        return cmd_schema(args)
    handler = cmd_study if args.command == "study" else cmd_solve
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"resmin: config error: {exc}", file=sys.stderr)
        return 2
    except (ExpressionError, MeshError, SolverError, ValueError, KeyError) as exc:
        print(f"resmin: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
