"""Quadrature, nodal Lagrange bases and the broken/continuous spaces.

The reference triangle is (0,0), (1,0), (0,1).  Local nodes are ordered
vertices, then edge nodes (edge 0, 1, 2, each listed from its first to its
second vertex), then interior nodes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .mesh import LOCAL_EDGES, MeshTopology

MAX_DEGREE = 4


def n_local(p: int) -> int:
    return (p + 1) * (p + 2) // 2


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) reference triangle
    weights: np.ndarray  # (nq,)
    edge_points: np.ndarray  # (nqe,) on [0, 1]
    edge_weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def _rule(degree: int) -> QuadratureRule:
    n = degree // 2 + 1  # Gauss rules with n points are exact to 2n - 1
    s, ws = np.polynomial.legendre.leggauss(n)
    t, wt = roots_jacobi(n, 1.0, 0.0)
    # collapsed (Duffy) coordinates
    y = 0.5 * (1.0 + t)
    S, Y = np.meshgrid(s, y, indexing="ij")
    X = 0.5 * (1.0 + S) * (1.0 - Y)
    W = np.outer(ws, wt) / 8.0
    pts = np.column_stack([X.ravel(), Y.ravel()])
    edge = 0.5 * (1.0 + s)
    rule = QuadratureRule(pts, W.ravel(), edge, 0.5 * ws, degree)
    for arr in (rule.points, rule.weights, rule.edge_points, rule.edge_weights):
        arr.setflags(write=False)
    return rule


def make_quadrature(p: int, extra: int = 0) -> QuadratureRule:
    """Rule exact to degree ``2p + 2 + extra`` on the triangle and on edges."""
    if p < 1:
        raise ValueError(f"degree must be >= 1, got {p}")
    return _rule(2 * p + 2 + extra)


@lru_cache(maxsize=None)
def reference_nodes(p: int) -> np.ndarray:
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [v for v in verts]
    for a, b in LOCAL_EDGES:
        for i in range(1, p):
            nodes.append(verts[a] + i / p * (verts[b] - verts[a]))
    for j in range(1, p):
        for i in range(1, p - j):
            nodes.append(np.array([i / p, j / p]))
    out = np.array(nodes)
    out.setflags(write=False)
    return out


def _exponents(p: int) -> np.ndarray:
    return np.array([(a, d - a) for d in range(p + 1) for a in range(d, -1, -1)])


@lru_cache(maxsize=None)
def _inverse_vandermonde(p: int) -> np.ndarray:
    V = _monomials(p, reference_nodes(p))
    return np.linalg.inv(V)


def _monomials(p: int, pts: np.ndarray) -> np.ndarray:
    e = _exponents(p)
    x = pts[..., 0, None]
    y = pts[..., 1, None]
    return x ** e[:, 0] * y ** e[:, 1]


def _monomial_grads(p: int, pts: np.ndarray) -> np.ndarray:
    e = _exponents(p)
    x = pts[..., 0, None]
    y = pts[..., 1, None]
    ex, ey = e[:, 0], e[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        dx = np.where(ex > 0, ex * x ** np.maximum(ex - 1, 0) * y ** ey, 0.0)
        dy = np.where(ey > 0, ey * x ** ex * y ** np.maximum(ey - 1, 0), 0.0)
    return np.stack([dx, dy], axis=-1)


def reference_basis(p: int, points) -> tuple[np.ndarray, np.ndarray]:
    """Values (..., nloc) and gradients (..., nloc, 2) of the degree-p nodal basis."""
    if p not in range(1, MAX_DEGREE + 1):
        raise ValueError(f"unsupported degree {p}; supported 1..{MAX_DEGREE}")
    pts = np.asarray(points, dtype=float)
    inv = _inverse_vandermonde(p)
    values = _monomials(p, pts) @ inv
    grads = np.einsum("...mk,mi->...ik", _monomial_grads(p, pts), inv)
    return values, grads


class DgSpace:
    """Broken space V_h: element-local nodal DOFs, ``e * nloc + i``."""

    def __init__(self, mesh: MeshTopology, p: int):
        if p not in range(1, MAX_DEGREE + 1):
            raise ValueError(f"unsupported degree {p}; supported 1..{MAX_DEGREE}")
        self.mesh = mesh
        self.p = p
        self.nloc = n_local(p)

    @property
    def dim(self) -> int:
        return self.mesh.n_elements * self.nloc

    @property
    def dofs(self) -> np.ndarray:
        return np.arange(self.dim).reshape(self.mesh.n_elements, self.nloc)

    def node_coordinates(self) -> np.ndarray:
        """(ne, nloc, 2) physical positions of every element's nodes."""
        m = self.mesh
        v0 = m.vertices[m.elements[:, 0]]
        return v0[:, None, :] + np.einsum("eab,nb->ena", m.jacobians, reference_nodes(self.p))

    def interpolate(self, fn) -> np.ndarray:
        """Nodal interpolant of ``fn(x, y, element_ids)``."""
        X = self.node_coordinates()
        elem = np.broadcast_to(np.arange(self.mesh.n_elements)[:, None], X.shape[:2])
        return np.asarray(fn(X[..., 0], X[..., 1], elem), dtype=float).reshape(-1)

    def evaluate(self, coeffs: np.ndarray, elements: np.ndarray, ref_points: np.ndarray):
        """Values of a V_h function at reference points of given elements."""
        phi, _ = reference_basis(self.p, ref_points)
        c = np.asarray(coeffs).reshape(self.mesh.n_elements, self.nloc)[elements]
        return np.einsum("...i,...i->...", phi, c)


class CgSpace:
    """Continuous subspace U_h with injection ``E`` into DgSpace coefficients."""

    def __init__(self, mesh: MeshTopology, p: int):
        if p not in range(1, MAX_DEGREE + 1):
            raise ValueError(f"unsupported degree {p}; supported 1..{MAX_DEGREE}")
        self.mesh = mesh
        self.p = p
        self.nloc = n_local(p)
        self.dofmap = self._number()
        self.dim = int(self.dofmap.max()) + 1
        self.dg = DgSpace(mesh, p)
        rows = np.arange(self.dg.dim)
        self.E = sp.csr_matrix(
            (np.ones(self.dg.dim), (rows, self.dofmap.ravel())), shape=(self.dg.dim, self.dim)
        )

    def _number(self) -> np.ndarray:
        m, p = self.mesh, self.p
        ne, nv = m.n_elements, m.n_vertices
        sk = m.skeleton
        dofmap = np.empty((ne, self.nloc), dtype=int)
        dofmap[:, :3] = m.elements
        # only vertices actually used by elements are numbered
        used = np.unique(m.elements)
        vmap = np.full(nv, -1, dtype=int)
        vmap[used] = np.arange(len(used))
        dofmap[:, :3] = vmap[m.elements]
        offset = len(used)
        ne_int = p - 1
        if ne_int > 0:
            for k, (a, b) in enumerate(LOCAL_EDGES):
                face = sk.element_faces[:, k]
                base = offset + face * ne_int
                forward = m.elements[:, a] < m.elements[:, b]
                loc = 3 + k * ne_int + np.arange(ne_int)
                step = np.arange(ne_int)
                idx = np.where(forward[:, None], step[None, :], ne_int - 1 - step[None, :])
                dofmap[:, loc] = base[:, None] + idx
            offset += len(sk) * ne_int
        nb = self.nloc - 3 - 3 * ne_int
        if nb > 0:
            dofmap[:, self.nloc - nb:] = offset + np.arange(ne * nb).reshape(ne, nb)
        return dofmap

    def embedding(self, q: int) -> sp.csr_matrix:
        """Injection into the broken space of degree ``q >= p``."""
        if q == self.p:
            return self.E
        if q < self.p:
            raise ValueError(f"test degree {q} is below the trial degree {self.p}")
        phi, _ = reference_basis(self.p, reference_nodes(q))
        ne = self.mesh.n_elements
        local = sp.kron(sp.identity(ne, format="csr"), sp.csr_matrix(phi), format="csr")
        local.eliminate_zeros()
        return (local @ self.E).tocsr()

    def interpolate(self, fn) -> np.ndarray:
        X = self.dg.node_coordinates()
        elem = np.broadcast_to(np.arange(self.mesh.n_elements)[:, None], X.shape[:2])
        vals = np.asarray(fn(X[..., 0], X[..., 1], elem), dtype=float)
        out = np.empty(self.dim)
        out[self.dofmap.ravel()] = vals.ravel()
        return out

    def vertex_values(self, coeffs: np.ndarray) -> np.ndarray:
        """Values at mesh vertices (zero for vertices not used by any element)."""
        out = np.zeros(self.mesh.n_vertices)
        out[self.mesh.elements.ravel()] = coeffs[self.dofmap[:, :3].ravel()]
        return out
