"""Discrete norms, true errors, element indicators and Doerfler marking."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import Context, spd_sqrt
from .mesh import MeshTopology
from .problem import ProblemSpec
from .spaces import DgSpace, make_quadrature


@dataclass
class FieldTerms:
    """Per-element and per-face pieces of the squared V_h norm."""

    l2: np.ndarray  # (ne,)
    diff: np.ndarray  # (ne,) ||kappa grad w||^2_T
    beta: np.ndarray  # (ne,) h_T ||b . grad w||^2_T
    face_adv: np.ndarray  # (nf,) 1/2 (|b.n| [[w]], [[w]])_F
    face_diff: np.ndarray  # (nf,) gamma_F ([[w]], [[w]])_F
    interior: np.ndarray  # (nf,) bool
    face_elem: np.ndarray  # (nf, 2)

    def components(self) -> dict:
        adv = self.l2.sum() + self.beta.sum() + self.face_adv.sum()
        diff = self.diff.sum() + self.face_diff.sum()
        return {
            "l2": float(np.sqrt(self.l2.sum())),
            "adv": float(np.sqrt(adv)),
            "diff": float(np.sqrt(diff)),
            "beta": float(np.sqrt(self.beta.sum())),
            "total": float(np.sqrt(adv + diff)),
        }


def _context(mesh, space, problem, ctx, extra=0):
    if ctx is not None:
        return ctx
    return Context(mesh, space, problem, make_quadrature(space.p, extra))


def field_terms(mesh: MeshTopology, space: DgSpace, problem: ProblemSpec, w: np.ndarray,
                exact: bool = False, ctx: Context | None = None) -> FieldTerms:
    """Evaluate the squared-norm pieces of ``w`` (or of ``u - w`` with ``exact``).

    For the error ``u - w`` the volume terms use the analytic gradient of
    ``u``, interior jumps reduce to ``-[[w]]`` since ``u`` is continuous and
    boundary traces use ``u`` at the face quadrature points.
    """
    ctx = _context(mesh, space, problem, ctx, extra=2 if exact else 0)
    vol, fq, coef = ctx.vol, ctx.fq, ctx.coef
    c = np.asarray(w, dtype=float).reshape(mesh.n_elements, space.nloc)

    val = np.einsum("qi,ei->eq", vol.phi, c)
    grad = np.einsum("eqia,ei->eqa", vol.grad, c)
    if exact:
        val = vol.field(problem.exact.value) - val
        grad = vol.field(problem.exact.gradient) - grad
    kappa = spd_sqrt(vol.field(problem.K))
    kg = np.einsum("eqab,eqb->eqa", kappa, grad)
    bg = np.einsum("eqa,eqa->eq", vol.field(problem.b), grad)
    l2 = np.einsum("eq,eq->e", vol.w, val ** 2)
    diff = np.einsum("eq,eqa->e", vol.w, kg ** 2)
    beta = mesh.diameters * np.einsum("eq,eq->e", vol.w, bg ** 2)

    interior = ctx.interior
    elem = fq.elem
    cm = c[elem[:, 0]]
    cp = c[np.where(interior, elem[:, 1], elem[:, 0])]
    jump = np.einsum("fqi,fi->fq", fq.phi[:, 0], cm)
    jump -= np.where(interior[:, None], np.einsum("fqi,fi->fq", fq.phi[:, 1], cp), 0.0)
    if exact:
        ub = fq.field(problem.exact.value, 0)
        jump = np.where(interior[:, None], -jump, ub - jump)
    face_adv = 0.5 * np.einsum("fq,fq,fq->f", fq.w, np.abs(ctx.bn), jump ** 2)
    face_diff = coef.gamma_F[fq.faces] * np.einsum("fq,fq->f", fq.w, jump ** 2)
    return FieldTerms(l2, diff, beta, face_adv, face_diff, interior, elem)


def norm_Vh(mesh: MeshTopology, space: DgSpace, problem: ProblemSpec, w: np.ndarray,
            ctx: Context | None = None) -> dict:
    """||w||_{V_h} of a V_h function with its adv/diff/beta breakdown."""
    return field_terms(mesh, space, problem, w, ctx=ctx).components()


def error_norms(mesh: MeshTopology, space, coeffs: np.ndarray, problem: ProblemSpec,
                trial: bool = True, ctx: Context | None = None) -> dict:
    """L2, V_h and V_{h,beta} norms of ``u - u_h`` for an attached exact solution.

    ``coeffs`` are CgSpace coefficients when ``trial`` is true (``space``
    is then the CgSpace), otherwise DgSpace coefficients.
    """
    if problem.exact is None:
        raise ValueError(f"problem {problem.name!r} has no exact solution attached")
    if trial:
        dg = space.dg
        w = space.E @ coeffs
    else:
        dg, w = space, coeffs
    comps = field_terms(mesh, dg, problem, w, exact=True, ctx=ctx).components()
    return {"L2": comps["l2"], "Vh": comps["total"], "Vh_beta": comps["beta"],
            "adv": comps["adv"], "diff": comps["diff"]}


@dataclass
class ErrorReport:
    indicators: np.ndarray  # E_T
    estimator: float  # ||eps_h||_{V_h}
    true_errors: dict | None = None
    effectivity: float | None = None
    components: dict = field(default_factory=dict)


def local_indicators(mesh: MeshTopology, space: DgSpace, problem: ProblemSpec, eps: np.ndarray,
                     ctx: Context | None = None) -> ErrorReport:
    """E_T^2 = ||eps||^2_{loc,T} + 1/2 |eps|^2_{loc,S}.

    Boundary faces belong entirely to their element; every interior face
    contributes half of its jump term to each neighbour, so the squares of
    the indicators sum to the squared V_h norm.
    """
    t = field_terms(mesh, space, problem, eps, ctx=ctx)
    local = t.l2 + t.diff + t.beta
    face = t.face_adv + t.face_diff
    bnd = ~t.interior
    np.add.at(local, t.face_elem[bnd, 0], face[bnd])
    half = 0.5 * face[t.interior]
    np.add.at(local, t.face_elem[t.interior, 0], half)
    np.add.at(local, t.face_elem[t.interior, 1], half)
    local = np.maximum(local, 0.0)
    comps = t.components()
    return ErrorReport(np.sqrt(local), comps["total"], components=comps)


def dorfler_mark(E, theta: float = 0.5, squared: bool = False) -> np.ndarray:
    """Smallest set of largest indicators carrying a ``theta`` share of the total.

    Elements are sorted by decreasing indicator, ties by increasing id.  With
    ``squared`` the bulk criterion is applied to ``E**2``.
    """
    E = np.asarray(E, dtype=float)
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if np.any(E < 0):
        raise ValueError("indicators must be non-negative")
    vals = E ** 2 if squared else E
    total = vals.sum()
    if total <= 0:
        return np.array([], dtype=int)
    order = np.lexsort((np.arange(len(vals)), -vals))
    cum = np.cumsum(vals[order])
    k = int(np.searchsorted(cum, theta * total * (1 - 1e-14), side="left")) + 1
    return np.sort(order[:min(k, len(order))])
