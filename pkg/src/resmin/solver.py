"""Direct and iterative solvers for the residual-minimization saddle system

    [ G   B ] [eps]   [L]
    [ B^T 0 ] [ u ] = [0]
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SaddleSystem

log = logging.getLogger(__name__)

try:  # CHOLMOD through scikit-sparse when available
    from sksparse.cholmod import cholesky as _cholmod
except ImportError:  # pragma: no cover - depends on the environment
    _cholmod = None


class SolverError(RuntimeError):
    pass


class SpdFactor:
    """Sparse Cholesky factor ``P A P^T = L L^T`` of an SPD matrix.

    Uses CHOLMOD when scikit-sparse is importable, otherwise SuperLU in
    symmetric mode (same fill-reducing ordering on rows and columns, no
    pivoting), which yields ``A = P^T L D L^T P``.
    """

    def __init__(self, A: sp.spmatrix, backend: str | None = None):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise SolverError("matrix must be square")
        self.n = A.shape[0]
        self.backend = backend or ("cholmod" if _cholmod is not None else "superlu")
        if self.backend == "cholmod":
            if _cholmod is None:
                raise SolverError("scikit-sparse is not installed")
            try:
                with warnings.catch_warnings():
                    # CHOLMOD reports a failed pivot as a warning
                    warnings.simplefilter("error")
                    self._f = _cholmod(A)
                    # a simplicial factor may be LDL^T, which tolerates indefinite input
                    positive = np.all(self._f.D() > 0)
            except Exception as exc:  # CholmodNotPositiveDefiniteError and friends
                raise SolverError(f"Cholesky factorization failed: {exc}") from exc
            if not positive:
                raise SolverError("matrix is not positive definite")
        else:
            self._f = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
            if np.any(self._f.U.diagonal() <= 0):
                raise SolverError("matrix is not positive definite")

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._f(b) if self.backend == "cholmod" else self._f.solve(b)

    __call__ = solve

    def reconstruct(self) -> sp.csc_matrix:
        """Product of the stored factors, for verification."""
        if self.backend == "cholmod":
            L = self._f.L()
            P = sp.eye(self.n, format="csc")[self._f.P()]
            return (P.T @ (L @ L.T) @ P).tocsc()
        f = self._f
        Pr = sp.csc_matrix((np.ones(self.n), (f.perm_r, np.arange(self.n))))
        Pc = sp.csc_matrix((np.ones(self.n), (np.arange(self.n), f.perm_c)))
        return (Pr.T @ (f.L @ f.U) @ Pc.T).tocsc()

    def as_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator((self.n, self.n), matvec=self.solve, dtype=float)


@dataclass
class SolveResult:
    u: np.ndarray
    eps: np.ndarray
    iterations: int = 0
    relative_residual: float = 0.0
    seconds: float = 0.0
    converged: bool = True
    inner_iterations: list = field(default_factory=list)

    def residuals(self, system: SaddleSystem) -> tuple[float, float]:
        """Relative block residuals (first row, second row) w.r.t. ||L||."""
        nL = np.linalg.norm(system.L) or 1.0
        r1 = system.L - system.G @ self.eps - system.B @ self.u
        r2 = system.B.T @ self.eps
        return float(np.linalg.norm(r1) / nL), float(np.linalg.norm(r2) / nL)


def _relative_residual(system: SaddleSystem, eps, u) -> float:
    nL = np.linalg.norm(system.L)
    r1 = system.L - system.G @ eps - system.B @ u
    r2 = system.B.T @ eps
    res = np.sqrt(np.linalg.norm(r1) ** 2 + np.linalg.norm(r2) ** 2)
    return float(res / nL) if nL > 0 else float(res)


def solve_direct(system: SaddleSystem, tol: float = 1e-10, refine: int = 10,
                 regularization: float = 1e-10) -> SolveResult:
    """Direct solve of the full indefinite system.

    With CHOLMOD available the quasi-definite matrix
    ``[[G, B], [B^T, -delta I]]`` (``delta`` relative to ``max diag G``) is
    factored by a simplicial LDL^T and used as the preconditioner of an
    iterative refinement against the exact saddle matrix.  Without it,
    SuperLU factors the exact matrix.
    """
    t0 = time.perf_counter()
    nv, nu = system.B.shape
    if nu == 0:
        raise SolverError("trial space is empty")
    if not np.any(system.L):
        return SolveResult(np.zeros(nu), np.zeros(nv), 0, 0.0, time.perf_counter() - t0)
    A = system.matrix().tocsc()
    if _cholmod is not None:
        delta = regularization * float(np.abs(system.G.diagonal()).max())
        Kreg = sp.bmat([[system.G, system.B], [system.B.T, -delta * sp.eye(nu)]], format="csc")
        try:
            f = _cholmod(Kreg, mode="simplicial")
        except Exception as exc:
            raise SolverError(f"saddle-point factorization failed: {exc}") from exc
        apply = f.solve_A
    else:
        try:
            lu = spla.splu(A, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"saddle-point matrix is singular: {exc}") from exc
        apply = lu.solve
    rhs = np.concatenate([system.L, np.zeros(nu)])
    x = apply(rhs)
    steps = 0
    for steps in range(1, refine + 1):
        r = rhs - A @ x
        if np.linalg.norm(r) <= 1e-3 * tol * np.linalg.norm(rhs):
            steps -= 1
            break
        x += apply(r)
    eps, u = x[:nv], x[nv:]
    if not np.all(np.isfinite(x)):
        raise SolverError("saddle-point solve produced non-finite values")
    res = _relative_residual(system, eps, u)
    return SolveResult(u, eps, steps, res, time.perf_counter() - t0, res <= tol)


def schur_preconditioner(system: SaddleSystem) -> SpdFactor:
    """Factor of B^T diag(G)^{-1} B."""
    d = 1.0 / system.G.diagonal()
    S_hat = (system.B.T @ sp.diags(d) @ system.B).tocsc()
    return SpdFactor(S_hat)


def solve_iterative(system: SaddleSystem, outer_tol: float = 1e-8, max_outer: int = 20,
                    inner_tol: float = 1e-10, krylov_restart: int = 30, augment: int = 3,
                    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
                    G_factor: SpdFactor | None = None) -> SolveResult:
    """Block iteration with an exact Gram factor and a Krylov Schur solve.

    Each outer step computes ``r = L - G eps - B u``, ``s = -B^T eps`` and

        eta   = S^{-1} (B^T G^{-1} r - s)
        delta = G^{-1} (r - B eta)

    where ``S = B^T G^{-1} B`` is applied matrix-free and inverted with
    LGMRES preconditioned by the factor of ``B^T diag(G)^{-1} B``.
    """
    t0 = time.perf_counter()
    nv, nu = system.B.shape
    Gf = G_factor or SpdFactor(system.G)
    Sf = schur_preconditioner(system)
    B, BT = system.B, system.B.T.tocsr()
    S = spla.LinearOperator((nu, nu), matvec=lambda x: BT @ Gf.solve(B @ x), dtype=float)

    if warm_start is None:
        eps, u = np.zeros(nv), np.zeros(nu)
    else:
        eps, u = np.array(warm_start[0], dtype=float), np.array(warm_start[1], dtype=float)

    nL = np.linalg.norm(system.L)
    if nL == 0 and warm_start is None:
        return SolveResult(u, eps, 0, 0.0, time.perf_counter() - t0)
    inner = []
    res = _relative_residual(system, eps, u)
    best = (res, eps.copy(), u.copy())
    it = 0
    while res > outer_tol and it < max_outer:
        it += 1
        r = system.L - system.G @ eps - B @ u
        s = -(BT @ eps)
        rhs = BT @ Gf.solve(r) - s
        count = [0]

        def cb(_x):
            count[0] += 1

        eta, info = spla.lgmres(S, rhs, M=Sf.as_operator(), rtol=inner_tol, atol=0.0,
                                inner_m=krylov_restart, outer_k=augment, maxiter=200,
                                callback=cb)
        if info < 0:
            raise SolverError(f"LGMRES breakdown (info={info})")
        inner.append(count[0])
        delta = Gf.solve(r - B @ eta)
        u = u + eta
        eps = eps + delta
        new = _relative_residual(system, eps, u)
        log.debug("outer %d: residual %.3e (inner %d)", it, new, count[0])
        if new < best[0]:
            best = (new, eps.copy(), u.copy())
        elif new >= res:
            break  # stagnation
        res = new
    res, eps, u = best
    return SolveResult(u, eps, it, res, time.perf_counter() - t0, res <= outer_tol, inner)


def solve_dg(B_full: sp.spmatrix, L: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Solve the square dG system B_full x = L."""
    A = sp.csc_matrix(B_full)
    if A.shape[0] != A.shape[1]:
        raise SolverError("dG matrix must be square")
    if not np.any(L):
        return np.zeros(A.shape[0])
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"dG matrix is singular: {exc}") from exc
    x = lu.solve(L)
    for _ in range(3):
        r = L - A @ x
        if np.linalg.norm(r) <= tol * np.linalg.norm(L):
            break
        x += lu.solve(r)
    if np.linalg.norm(L - A @ x) > max(tol, 1e-6) * np.linalg.norm(L):
        raise SolverError("dG solve did not reach the requested tolerance")
    return x
