"""Run configuration: JSON loading and validation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .adapt import SolverOptions
from .problem import CATALOG, ProblemSpec, catalog, custom_problem


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""


@dataclass
class RunConfig:
    problem: str | None = "lshape"
    custom: dict | None = None
    custom_file: str | None = None
    degree: int = 1
    test_degree: int | None = None
    mode: str = "adaptive"
    levels: int = 8
    theta: float = 0.5
    squared_marking: bool = False
    n: int | None = None
    stop_below: float | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    output: str = "resmin-out"
    vtk: bool = False
    matrix_market: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def build_problem(self, base: Path | None = None) -> ProblemSpec:
        if self.custom is not None:
            return custom_problem(self.custom)
        if self.custom_file is not None:
            path = Path(self.custom_file)
            if base is not None and not path.is_absolute():
                path = base / path
            return custom_problem(_load_json(path), name=path.stem)
        return catalog(self.problem)


SCHEMA = {
    "problem": "catalog name (see `resmin list-problems`) or {custom: {...}}",
    "custom": "inline custom problem: domain, K, b, sigma, f, gD, regions, exact, exact_grad, n",
    "custom_file": "path to a JSON file holding a custom problem block",
    "degree": "polynomial degree p, 1..4",
    "test_degree": "experimental: test-space degree >= degree (default: degree)",
    "mode": "uniform | adaptive",
    "levels": "number of solves, >= 1",
    "theta": "Doerfler parameter in (0, 1)",
    "refinement": "optional block {mode, levels, dorfler} in place of the top-level keys",
    "squared_marking": "apply the bulk criterion to E_T^2 instead of E_T",
    "n": "cells per unit length of the initial structured mesh (default: catalog value)",
    "stop_below": "stop an adaptive run once the estimator is at or below this value",
    "solver": "backend (direct | iterative), tol, outer_tol, max_outer, inner_tol, "
              "krylov_restart, augment, warm_start",
    "output": "output directory",
    "vtk": "write one legacy VTK file per level",
    "matrix_market": "dump G, B and L of the last level in Matrix Market format",
}


def _load_json(path: Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def _int(name, v, lo=None, hi=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name}: expected an integer, got {v!r}")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(f"{name}: {v} out of range [{lo}, {hi if hi is not None else 'inf'}]")
    return v


def _float(name, v, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{name}: must be positive, got {v}")
    return float(v)


def _bool(name, v):
    if not isinstance(v, bool):
        raise ConfigError(f"{name}: expected true or false, got {v!r}")
    return v


def _solver(data) -> SolverOptions:
    if not isinstance(data, dict):
        raise ConfigError(f"solver: expected an object, got {data!r}")
    known = set(SolverOptions.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"solver.{unknown[0]}: unknown key")
    opts = SolverOptions()
    for key, value in data.items():
        name = f"solver.{key}"
        if key == "backend":
            if value not in ("direct", "iterative"):
                raise ConfigError(f"{name}: expected 'direct' or 'iterative', got {value!r}")
        elif key in ("max_outer", "krylov_restart", "augment"):
            value = _int(name, value, 1 if key != "augment" else 0)
        elif key == "warm_start":
            value = _bool(name, value)
        else:
            value = _float(name, value, positive=True)
        setattr(opts, key, value)
    return opts


_REFINEMENT = {"mode": "mode", "levels": "levels", "dorfler": "theta", "theta": "theta",
               "squared_marking": "squared_marking"}


def _flatten(data: dict) -> dict:
    """Accept the nested forms ``problem: {custom: ...}`` and ``refinement: {...}``."""
    data = dict(data)
    if isinstance(data.get("problem"), dict):
        block = data.pop("problem")
        extra = sorted(set(block) - {"custom", "custom_file"})
        if extra:
            raise ConfigError(f"problem.{extra[0]}: unknown key")
        data.update(block)
    if "refinement" in data:
        block = data.pop("refinement")
        if not isinstance(block, dict):
            raise ConfigError("refinement: expected an object")
        for key, value in block.items():
            if key not in _REFINEMENT:
                raise ConfigError(f"refinement.{key}: unknown key")
            if _REFINEMENT[key] in data:
                raise ConfigError(f"refinement.{key}: also given at top level")
            data[_REFINEMENT[key]] = value
    return data


def validate(data: dict) -> RunConfig:
    """Turn a parsed JSON object into a RunConfig, rejecting anything unexpected."""
    data = _flatten(data)
    unknown = sorted(set(data) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    cfg = RunConfig()
    sources = [k for k in ("custom", "custom_file") if data.get(k) is not None]
    if len(sources) > 1 or (sources and data.get("problem") is not None):
        raise ConfigError("problem: give exactly one of problem, custom, custom_file")
    if sources:
        cfg.problem = None
    for key, value in data.items():
        if key == "problem":
            if value is not None and value not in CATALOG:
                raise ConfigError(f"problem: unknown catalog entry {value!r}; "
                                  f"choose from {sorted(CATALOG)}")
            cfg.problem = value
        elif key == "custom":
            if value is not None and not isinstance(value, dict):
                raise ConfigError("custom: expected an object")
            cfg.custom = value
        elif key == "custom_file":
            if value is not None and not isinstance(value, str):
                raise ConfigError("custom_file: expected a path string")
            cfg.custom_file = value
        elif key == "degree":
            cfg.degree = _int(key, value, 1, 4)
        elif key == "test_degree":
            cfg.test_degree = None if value is None else _int(key, value, 1, 4)
        elif key == "mode":
            if value not in ("uniform", "adaptive"):
                raise ConfigError(f"mode: expected 'uniform' or 'adaptive', got {value!r}")
            cfg.mode = value
        elif key == "levels":
            cfg.levels = _int(key, value, 1)
        elif key == "theta":
            cfg.theta = _float(key, value)
            if not 0.0 < cfg.theta < 1.0:
                raise ConfigError(f"theta: must lie in (0, 1), got {value}")
        elif key == "n":
            cfg.n = None if value is None else _int(key, value, 1)
        elif key == "stop_below":
            cfg.stop_below = None if value is None else _float(key, value, positive=True)
        elif key == "solver":
            cfg.solver = _solver(value)
        elif key == "output":
            if not isinstance(value, str) or not value:
                raise ConfigError("output: expected a non-empty path string")
            cfg.output = value
        else:  # boolean flags
            setattr(cfg, key, _bool(key, value))
    if cfg.test_degree is not None and cfg.test_degree < cfg.degree:
        raise ConfigError(f"test_degree: {cfg.test_degree} is below degree {cfg.degree}")
    if cfg.problem is None and not sources:
        raise ConfigError("problem: no problem selected")
    return cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read, apply command-line overrides to top-level scalars, then validate."""
    data = _flatten(_load_json(Path(path)))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "backend":
            solver = dict(data.get("solver") or {})
            solver["backend"] = value
            data["solver"] = solver
        else:
            data[key] = value
    return validate(data)
