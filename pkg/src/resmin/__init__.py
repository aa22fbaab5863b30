"""Adaptive residual minimization on dual discontinuous Galerkin norms."""
import os

__version__ = "0.1.0"

# RESMIN_THREADS caps BLAS/OpenMP worker threads; 1 is the deterministic reference mode.
_threads = os.environ.get("RESMIN_THREADS", "1")
if not _threads.isdigit() or int(_threads) < 1:
    raise RuntimeError(f"RESMIN_THREADS must be a positive integer, got {_threads!r}")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

from .adapt import AdaptRecord, SolverOptions, observed_rates, run_adaptive, run_uniform  # noqa: E402
from .mesh import MeshTopology, bisect, build_structured, refine_uniform  # noqa: E402
from .problem import CATALOG, ProblemSpec, catalog, custom_problem  # noqa: E402

__all__ = [
    "AdaptRecord", "CATALOG", "MeshTopology", "ProblemSpec", "SolverOptions", "bisect",
    "build_structured", "catalog", "custom_problem", "observed_rates", "refine_uniform",
    "run_adaptive", "run_uniform",
]
