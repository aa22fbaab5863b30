"""Sparse operators of the SWIP + upwind discontinuous Galerkin form.

Conventions on a face F with owner T- and neighbour T+:

* ``n_F`` points from T- to T+ (outward on the boundary);
* ``[[v]] = v- - v+`` on interior faces and ``[[v]] = v`` on the boundary;
* ``{{K grad v}}_w = w- K- grad v- + w+ K+ grad v+`` (diffusive weights);
* ``{{v}} = (v- + v+) / 2`` in the advective terms.

Rows of every matrix index test functions, columns trial functions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import LOCAL_EDGES, MeshTopology
from .problem import ProblemSpec
from .spaces import CgSpace, DgSpace, QuadratureRule, make_quadrature, n_local, reference_basis


class AssemblyError(ValueError):
    pass


def negative_part(x):
    """x^- = (|x| - x) / 2."""
    return 0.5 * (np.abs(x) - x)


def spd_sqrt(K: np.ndarray) -> np.ndarray:
    """Symmetric square root of SPD 2x2 tensors, shape (..., 2, 2)."""
    K = np.asarray(K, dtype=float)
    a, b, c = K[..., 0, 0], K[..., 0, 1], K[..., 1, 1]
    det = a * c - b * b
    if np.any(det <= 0) or np.any(a <= 0):
        raise AssemblyError("diffusion tensor is not positive definite")
    s = np.sqrt(det)
    t = np.sqrt(a + c + 2.0 * s)
    out = np.empty_like(K)
    out[..., 0, 0] = (a + s) / t
    out[..., 1, 1] = (c + s) / t
    out[..., 0, 1] = out[..., 1, 0] = b / t
    return out


# ------------------------------------------------------------- quadrature data

@dataclass
class VolumeQuad:
    X: np.ndarray  # (ne, nq, 2)
    w: np.ndarray  # (ne, nq) weights including |det J|
    phi: np.ndarray  # (nq, nloc)
    grad: np.ndarray  # (ne, nq, nloc, 2)
    region: np.ndarray  # (ne,)

    def field(self, coeff, region=True):
        reg = np.broadcast_to(self.region[:, None], self.X.shape[:2]) if region else None
        return coeff(self.X[..., 0], self.X[..., 1], reg)


def volume_quadrature(mesh: MeshTopology, p: int, rule: QuadratureRule, region) -> VolumeQuad:
    J = mesh.jacobians
    invT = np.transpose(np.linalg.inv(J), (0, 2, 1))
    phi, dphi = reference_basis(p, rule.points)
    G = np.einsum("eab,qib->eqia", invT, dphi)
    v0 = mesh.vertices[mesh.elements[:, 0]]
    X = v0[:, None, :] + np.einsum("eab,qb->eqa", J, rule.points)
    w = rule.weights[None, :] * (2.0 * mesh.areas)[:, None]
    return VolumeQuad(X, w, phi, G, np.asarray(region))


@dataclass
class FaceQuad:
    faces: np.ndarray  # (nf,) skeleton indices
    elem: np.ndarray  # (nf, 2), -1 for a missing + side
    X: np.ndarray  # (nf, nqe, 2)
    w: np.ndarray  # (nf, nqe) weights including |F|
    normal: np.ndarray  # (nf, 2)
    phi: np.ndarray  # (nf, 2, nqe, nloc), zero on a missing side
    grad: np.ndarray  # (nf, 2, nqe, nloc, 2)
    region: np.ndarray  # (nf, 2)

    def field(self, coeff, side=0):
        reg = np.broadcast_to(self.region[:, side, None], self.X.shape[:2])
        return coeff(self.X[..., 0], self.X[..., 1], reg)


def face_quadrature(mesh: MeshTopology, p: int, rule: QuadratureRule, region,
                    which: str = "all") -> FaceQuad:
    sk = mesh.skeleton
    sel = {"all": np.ones(len(sk), bool), "interior": sk.interior, "boundary": sk.boundary}[which]
    faces = np.flatnonzero(sel)
    elem = sk.elements[faces]
    a = mesh.vertices[sk.vertices[faces, 0]]
    b = mesh.vertices[sk.vertices[faces, 1]]
    s = rule.edge_points
    X = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    w = rule.edge_weights[None, :] * sk.h[faces][:, None]
    nf, nqe, nloc = len(faces), len(s), n_local(p)
    phi = np.zeros((nf, 2, nqe, nloc))
    grad = np.zeros((nf, 2, nqe, nloc, 2))
    region = np.asarray(region)
    reg = np.zeros((nf, 2), dtype=int)
    J = mesh.jacobians
    invJ = np.linalg.inv(J)
    for side in (0, 1):
        has = elem[:, side] >= 0
        e = elem[has, side]
        v0 = mesh.vertices[mesh.elements[e, 0]]
        xi = np.einsum("eab,eqb->eqa", invJ[e], X[has] - v0[:, None, :])
        val, dref = reference_basis(p, xi)
        phi[has, side] = val
        grad[has, side] = np.einsum("eba,eqib->eqia", invJ[e], dref)
        reg[has, side] = region[e]
    reg[elem[:, 1] < 0, 1] = reg[elem[:, 1] < 0, 0]
    return FaceQuad(faces, elem, X, w, sk.normals[faces], phi, grad, reg)


# --------------------------------------------------------- face coefficients

@dataclass
class FaceCoefficients:
    """Per-face SWIP weights and penalties, indexed like the skeleton."""

    omega_minus: np.ndarray
    omega_plus: np.ndarray
    delta_minus: np.ndarray
    delta_plus: np.ndarray
    gamma_K: np.ndarray
    eta: np.ndarray
    gamma_F: np.ndarray


def swip_weights(delta_minus, delta_plus):
    """(omega-, omega+, gamma_K) from the normal diffusivities of both sides."""
    dm = np.asarray(delta_minus, dtype=float)
    dp = np.asarray(delta_plus, dtype=float)
    total = dm + dp
    zero = total <= 0
    safe = np.where(zero, 1.0, total)
    om = np.where(zero, 0.5, dp / safe)
    op = np.where(zero, 0.5, dm / safe)
    gk = np.where(zero, 0.0, dm * dp / safe)
    return om, op, gk


def face_coefficients(mesh: MeshTopology, problem: ProblemSpec, p: int,
                      region=None) -> FaceCoefficients:
    """SWIP weights, harmonic normal diffusivity and penalty for every face.

    ``eta`` uses the perimeter/area ratio of the adjacent elements scaled by
    (p+1)(p+2)/2; the normal diffusivities are sampled at the face midpoint
    from each side.
    """
    sk = mesh.skeleton
    if region is None:
        region = problem.element_regions(mesh)
    mid = 0.5 * (mesh.vertices[sk.vertices[:, 0]] + mesh.vertices[sk.vertices[:, 1]])
    n = sk.normals
    em, ep = sk.elements[:, 0], sk.elements[:, 1]
    interior = ep >= 0
    Km = problem.K(mid[:, 0], mid[:, 1], region[em])
    Kp = problem.K(mid[:, 0], mid[:, 1], region[np.where(interior, ep, em)])
    dm = np.einsum("fa,fab,fb->f", n, Km, n)
    dp = np.einsum("fa,fab,fb->f", n, Kp, n)
    om, op, gk = swip_weights(dm, dp)
    dp = np.where(interior, dp, 0.0)
    om = np.where(interior, om, 1.0)
    op = np.where(interior, op, 0.0)
    gk = np.where(interior, gk, dm)
    ratio = mesh.perimeters / mesh.areas
    scale = (p + 1) * (p + 2) / 2.0
    eta = np.where(interior, 0.5 * scale * (ratio[em] + ratio[np.where(interior, ep, em)]),
                   scale * ratio[em])
    return FaceCoefficients(om, op, dm, dp, gk, eta, eta * gk)


# --------------------------------------------------------------- assembly

def _check_rule(rule: QuadratureRule, p: int) -> QuadratureRule:
    if rule is None:
        return make_quadrature(p)
    if rule.degree < 2 * p + 2:
        raise AssemblyError(
            f"quadrature degree {rule.degree} below the required {2 * p + 2} for p={p}"
        )
    return rule


def _scatter(blocks: list[tuple[np.ndarray, np.ndarray, np.ndarray]], shape) -> sp.csr_matrix:
    rows = np.concatenate([r.ravel() for r, _, _ in blocks])
    cols = np.concatenate([c.ravel() for _, c, _ in blocks])
    vals = np.concatenate([v.ravel() for _, _, v in blocks])
    A = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _element_block(dofs, local):
    rows = np.broadcast_to(dofs[:, :, None], local.shape)
    cols = np.broadcast_to(dofs[:, None, :], local.shape)
    return rows, cols, local


class Context:
    """Quadrature data shared by the assemblers for one (mesh, problem, p)."""

    def __init__(self, mesh, space: DgSpace, problem, rule=None):
        self.mesh = mesh
        self.space = space
        self.p = space.p
        self.rule = _check_rule(rule, space.p)
        self.region = problem.element_regions(mesh)
        self.vol = volume_quadrature(mesh, space.p, self.rule, self.region)
        self.fq = face_quadrature(mesh, space.p, self.rule, self.region)
        self.coef = face_coefficients(mesh, problem, space.p, self.region)
        self.interior = self.fq.elem[:, 1] >= 0
        fq = self.fq
        # K on both sides of every face quadrature point
        self.K_face = np.stack([fq.field(problem.K, 0), fq.field(problem.K, 1)], axis=1)
        self.bn = np.einsum("fqa,fa->fq", fq.field(problem.b, 0), fq.normal)
        self.flux = np.einsum("fa,fsqab,fsqib->fsqi", fq.normal, self.K_face, fq.grad)

    def face_dofs(self):
        d = self.space.dofs
        e = self.fq.elem
        minus = d[e[:, 0]]
        plus = d[np.where(e[:, 1] >= 0, e[:, 1], e[:, 0])]
        return np.concatenate([minus, plus], axis=1)

    def face_arrays(self):
        """Jump, weighted flux average and arithmetic average per local face DOF."""
        fq, coef = self.fq, self.coef
        g = fq.faces
        interior = self.interior[:, None, None]
        jump_m = fq.phi[:, 0]
        jump_p = np.where(interior, -fq.phi[:, 1], 0.0)
        jump = np.concatenate([jump_m, jump_p], axis=2)  # (nf, nqe, 2 nloc)
        wm = coef.omega_minus[g][:, None, None]
        wp = coef.omega_plus[g][:, None, None]
        avg_flux = np.concatenate([wm * self.flux[:, 0], np.where(interior, wp * self.flux[:, 1], 0.0)], axis=2)
        half = np.where(interior, 0.5, 1.0)
        avg = np.concatenate([half * fq.phi[:, 0], np.where(interior, 0.5 * fq.phi[:, 1], 0.0)], axis=2)
        return jump, avg_flux, avg


def assemble_dg_matrix(mesh: MeshTopology, space: DgSpace, problem: ProblemSpec,
                       rule: QuadratureRule | None = None, parts: str = "all",
                       _ctx: Context | None = None) -> sp.csr_matrix:
    """Matrix of b_h = b_h^diff + b_h^adv on V_h x V_h.

    ``parts`` selects ``"all"``, ``"diffusion"`` or ``"advection"`` (the
    latter including the reaction term).
    """
    ctx = _ctx or Context(mesh, space, problem, rule)
    vol, fq, coef = ctx.vol, ctx.fq, ctx.coef
    diff = parts in ("all", "diffusion")
    adv = parts in ("all", "advection")

    local = np.zeros((mesh.n_elements, space.nloc, space.nloc))
    if diff:
        K = vol.field(problem.K)
        local += np.einsum("eq,eqia,eqab,eqjb->eij", vol.w, vol.grad, K, vol.grad)
    if adv:
        b = vol.field(problem.b)
        sigma = vol.field(problem.sigma)
        bgrad = np.einsum("eqa,eqja->eqj", b, vol.grad)
        local += np.einsum("eq,qi,eqj->eij", vol.w, vol.phi, bgrad)
        local += np.einsum("eq,eq,qi,qj->eij", vol.w, sigma, vol.phi, vol.phi)
    blocks = [_element_block(space.dofs, local)]

    jump, avg_flux, avg = ctx.face_arrays()
    gamma = coef.gamma_F[fq.faces][:, None]
    interior = ctx.interior[:, None]
    w = fq.w
    M = np.zeros((len(fq.faces), 2 * space.nloc, 2 * space.nloc))
    if diff:
        M -= np.einsum("fq,fqa,fqb->fab", w, avg_flux, jump)
        M -= np.einsum("fq,fqa,fqb->fab", w, jump, avg_flux)
        M += np.einsum("fq,fqa,fqb->fab", w * gamma, jump, jump)
    if adv:
        bn = ctx.bn
        upw = np.where(interior, 0.5 * np.abs(bn), negative_part(bn))
        M += np.einsum("fq,fqa,fqb->fab", w * upw, jump, jump)
        M -= np.einsum("fq,fqa,fqb->fab", w * np.where(interior, bn, 0.0), avg, jump)
    fd = ctx.face_dofs()
    blocks.append(_element_block(fd, M))
    return _scatter(blocks, (space.dim, space.dim))


def assemble_gram(mesh: MeshTopology, space: DgSpace, problem: ProblemSpec,
                  rule: QuadratureRule | None = None, faces: bool = True,
                  _ctx: Context | None = None) -> sp.csr_matrix:
    """Gram matrix of the V_h inner product (adv + diff parts of the norm)."""
    ctx = _ctx or Context(mesh, space, problem, rule)
    vol, fq, coef = ctx.vol, ctx.fq, ctx.coef
    K = vol.field(problem.K)
    b = vol.field(problem.b)
    bgrad = np.einsum("eqa,eqja->eqj", b, vol.grad)
    hT = mesh.diameters[:, None]
    local = np.einsum("eq,qi,qj->eij", vol.w, vol.phi, vol.phi)
    local += np.einsum("eq,eqi,eqj->eij", vol.w * hT, bgrad, bgrad)
    local += np.einsum("eq,eqia,eqab,eqjb->eij", vol.w, vol.grad, K, vol.grad)
    blocks = [_element_block(space.dofs, local)]
    if faces:
        jump, _, _ = ctx.face_arrays()
        weight = fq.w * (0.5 * np.abs(ctx.bn) + coef.gamma_F[fq.faces][:, None])
        M = np.einsum("fq,fqa,fqb->fab", weight, jump, jump)
        blocks.append(_element_block(ctx.face_dofs(), M))
    G = _scatter(blocks, (space.dim, space.dim))
    # exact symmetry
    return ((G + G.T) * 0.5).tocsr()


def assemble_load(mesh: MeshTopology, space: DgSpace, problem: ProblemSpec,
                  rule: QuadratureRule | None = None, _ctx: Context | None = None) -> np.ndarray:
    """Right-hand side with the Dirichlet datum imposed weakly."""
    ctx = _ctx or Context(mesh, space, problem, rule)
    vol, fq, coef = ctx.vol, ctx.fq, ctx.coef
    f = vol.field(problem.f)
    L = np.zeros(space.dim)
    np.add.at(L, space.dofs, np.einsum("eq,eq,qi->ei", vol.w, f, vol.phi))
    bnd = ~ctx.interior
    if bnd.any():
        g = fq.field(problem.gD, 0)[bnd]
        w = fq.w[bnd]
        gamma = coef.gamma_F[fq.faces[bnd]][:, None]
        weight = gamma + negative_part(ctx.bn[bnd])
        vals = -np.einsum("fq,fq,fqi->fi", w, g, ctx.flux[bnd, 0])
        vals += np.einsum("fq,fq,fqi->fi", w * weight, g, fq.phi[bnd, 0])
        np.add.at(L, space.dofs[fq.elem[bnd, 0]], vals)
    return L


def restrict_to_trial(B_full: sp.spmatrix, E: sp.spmatrix) -> sp.csr_matrix:
    if B_full.shape[1] != E.shape[0]:
        raise AssemblyError(f"cannot compose {B_full.shape} with injection {E.shape}")
    B = (sp.csr_matrix(B_full) @ sp.csr_matrix(E)).tocsr()
    B.sort_indices()
    return B


@dataclass
class SaddleSystem:
    G: sp.csr_matrix
    B: sp.csr_matrix
    B_full: sp.csr_matrix
    L: np.ndarray
    E: sp.csr_matrix
    dims: dict

    def matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.G, self.B], [self.B.T, None]], format="csr")


def assemble_system(mesh: MeshTopology, problem: ProblemSpec, p: int,
                    trial: CgSpace | None = None, rule: QuadratureRule | None = None) -> SaddleSystem:
    space = DgSpace(mesh, p)
    trial = trial or CgSpace(mesh, p)
    ctx = Context(mesh, space, problem, rule)
    B_full = assemble_dg_matrix(mesh, space, problem, _ctx=ctx)
    G = assemble_gram(mesh, space, problem, _ctx=ctx)
    L = assemble_load(mesh, space, problem, _ctx=ctx)
    B = restrict_to_trial(B_full, trial.E)
    return SaddleSystem(G, B, B_full, L, trial.E,
                        {"test": space.dim, "trial": trial.dim, "elements": mesh.n_elements})


def write_matrix_market(path, A: sp.spmatrix, comment: str = "") -> None:
    from scipy.io import mmwrite

    mmwrite(str(path), sp.coo_matrix(A), comment=comment)
