"""Conforming triangular meshes with an oriented face skeleton.

Elements are stored counterclockwise and rotated so that the refinement
edge of every element joins local vertices 0 and 1 (local edge 2, the
edge opposite vertex 2).  Newest-vertex bisection then always splits
local edge 2 and the new vertex becomes local vertex 2 of both children.

Local edge ``k`` is the edge opposite local vertex ``k``::

    edge 0 = (v1, v2),  edge 1 = (v2, v0),  edge 2 = (v0, v1)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class MeshError(ValueError):
    """Raised for invalid mesh construction requests or broken topology."""


@dataclass(frozen=True)
class Face:
    """One edge of the skeleton.

    ``minus`` is the owner element T-, ``plus`` the neighbour T+ (``None`` on
    the boundary).  ``normal`` points from T- to T+, i.e. outward on the
    boundary.
    """

    vertices: tuple[int, int]
    minus: int
    plus: int | None
    normal: tuple[float, float]
    h: float
    boundary: bool


@dataclass(frozen=True)
class Skeleton:
    """Array form of the face list; this is what assembly consumes."""

    vertices: np.ndarray  # (nf, 2) sorted vertex pairs
    elements: np.ndarray  # (nf, 2) [T-, T+], T+ = -1 on the boundary
    local_edge: np.ndarray  # (nf, 2) local edge index in T- and T+ (-1)
    normals: np.ndarray  # (nf, 2)
    h: np.ndarray  # (nf,)
    element_faces: np.ndarray  # (ne, 3) face of local edge k

    @property
    def boundary(self) -> np.ndarray:
        return self.elements[:, 1] < 0

    @property
    def interior(self) -> np.ndarray:
        return self.elements[:, 1] >= 0

    def __len__(self) -> int:
        return len(self.h)


def compute_skeleton(vertices: np.ndarray, elements: np.ndarray) -> Skeleton:
    """Collect every edge once and orient it from the lower to the higher element id."""
    ne = len(elements)
    local = np.tile(np.arange(3), ne)
    owner = np.repeat(np.arange(ne), 3)
    pairs = elements[:, LOCAL_EDGES].reshape(-1, 2)
    keys = np.sort(pairs, axis=1)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        bad = uniq[counts > 2][0]
        raise MeshError(f"edge {tuple(bad)} is shared by more than two elements")

    nf = len(uniq)
    # stable sort keeps the lower element id first for every face
    order = np.argsort(inverse, kind="stable")
    start = np.zeros(nf + 1, dtype=int)
    np.cumsum(counts, out=start[1:])
    face_elems = np.full((nf, 2), -1, dtype=int)
    face_local = np.full((nf, 2), -1, dtype=int)
    first = order[start[:-1]]
    face_elems[:, 0] = owner[first]
    face_local[:, 0] = local[first]
    two = counts == 2
    second = order[start[:-1][two] + 1]
    face_elems[two, 1] = owner[second]
    face_local[two, 1] = local[second]

    element_faces = inverse.reshape(ne, 3)

    # outward normal of T- across its local edge (elements are counterclockwise)
    ab = elements[face_elems[:, 0][:, None], LOCAL_EDGES[face_local[:, 0]]]
    tangent = vertices[ab[:, 1]] - vertices[ab[:, 0]]
    h = np.hypot(tangent[:, 0], tangent[:, 1])
    normals = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / h[:, None]
    return Skeleton(uniq, face_elems, face_local, normals, h, element_faces)


def _orient_ccw(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p = vertices[elements]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    out = elements.copy()
    flip = area < 0
    out[flip, 0], out[flip, 1] = elements[flip, 1], elements[flip, 0]
    return out


def _rotate_longest_edge_last(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Cyclically rotate each element so its longest edge becomes local edge 2."""
    p = vertices[elements]
    lengths = np.stack(
        [np.linalg.norm(p[:, b] - p[:, a], axis=1) for a, b in LOCAL_EDGES], axis=1
    )
    # ties resolved towards the lowest local edge id, deterministic
    k = np.argmax(lengths, axis=1)
    shift = (k + 1) % 3  # vertex that must become local vertex 0
    idx = (shift[:, None] + np.arange(3)) % 3
    return np.take_along_axis(elements, idx, axis=1)


@dataclass(frozen=True, eq=False)
class MeshTopology:
    """Immutable conforming triangulation.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array, counterclockwise, refinement edge = local edge 2
    generation : (ne,) refinement depth of each element
    parent : (ne,) index of the ancestor element in the previous mesh, -1 if none
    """

    vertices: np.ndarray
    elements: np.ndarray
    generation: np.ndarray = field(default=None)  # type: ignore[assignment]
    parent: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        ne = len(self.elements)
        if self.generation is None:
            object.__setattr__(self, "generation", np.zeros(ne, dtype=int))
        if self.parent is None:
            object.__setattr__(self, "parent", np.full(ne, -1, dtype=int))
        for name in ("vertices", "elements", "generation", "parent"):
            getattr(self, name).setflags(write=False)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def refinement_edge(self) -> np.ndarray:
        return np.full(self.n_elements, 2, dtype=int)

    @cached_property
    def skeleton(self) -> Skeleton:
        return compute_skeleton(self.vertices, self.elements)

    @cached_property
    def faces(self) -> list[Face]:
        sk = self.skeleton
        out = []
        for i in range(len(sk)):
            plus = int(sk.elements[i, 1])
            out.append(Face(
                vertices=(int(sk.vertices[i, 0]), int(sk.vertices[i, 1])),
                minus=int(sk.elements[i, 0]),
                plus=None if plus < 0 else plus,
                normal=(float(sk.normals[i, 0]), float(sk.normals[i, 1])),
                h=float(sk.h[i]),
                boundary=plus < 0,
            ))
        return out

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(ne, 2, 2) affine map Jacobians, columns v1-v0 and v2-v0."""
        p = self.vertices[self.elements]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.det(self.jacobians)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.elements]
        return np.stack(
            [np.linalg.norm(p[:, b] - p[:, a], axis=1) for a, b in LOCAL_EDGES], axis=1
        )

    @cached_property
    def diameters(self) -> np.ndarray:
        """h_T, the longest edge of each element."""
        return self.edge_lengths.max(axis=1)

    @cached_property
    def perimeters(self) -> np.ndarray:
        return self.edge_lengths.sum(axis=1)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    def min_angle(self) -> float:
        p = self.vertices[self.elements]
        angles = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))

    def check_conformity(self) -> None:
        """Raise MeshError on orientation problems or hanging vertices."""
        if np.any(self.areas <= 0):
            raise MeshError("element with non-positive signed area")
        sk = self.skeleton  # raises on edges shared by > 2 elements
        # a hanging vertex sits in the interior of some boundary-flagged edge
        bnd = sk.vertices[sk.boundary]
        a = self.vertices[bnd[:, 0]]
        b = self.vertices[bnd[:, 1]]
        used = np.unique(self.elements)
        for v in used:
            x = self.vertices[v]
            t = np.einsum("ij,ij->i", x - a, b - a) / np.einsum("ij,ij->i", b - a, b - a)
            inside = (t > 1e-12) & (t < 1 - 1e-12)
            if not inside.any():
                continue
            proj = a[inside] + t[inside, None] * (b - a)[inside]
            if np.any(np.linalg.norm(proj - x, axis=1) < 1e-12):
                raise MeshError(f"hanging vertex {v}")

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Element index containing each point (-1 if outside); brute force."""
        points = np.atleast_2d(points)
        inv = np.linalg.inv(self.jacobians)
        v0 = self.vertices[self.elements[:, 0]]
        out = np.full(len(points), -1, dtype=int)
        for i, x in enumerate(points):
            xi = np.einsum("eab,eb->ea", inv, x - v0)
            ok = (xi[:, 0] >= -1e-12) & (xi[:, 1] >= -1e-12) & (xi.sum(axis=1) <= 1 + 1e-12)
            hits = np.flatnonzero(ok)
            if len(hits):
                out[i] = hits[0]
        return out


def from_arrays(vertices: Sequence, elements: Sequence) -> MeshTopology:
    """Build a mesh from raw arrays, fixing orientation and refinement edges."""
    vertices = np.asarray(vertices, dtype=float)
    elements = np.asarray(elements, dtype=int)
    elements = _orient_ccw(vertices, elements)
    elements = _rotate_longest_edge_last(vertices, elements)
    mesh = MeshTopology(vertices, elements)
    mesh.check_conformity()
    return mesh


def _grid(x0: float, x1: float, y0: float, y1: float, nx: int, ny: int, lines=()):
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    for axis, value in lines:
        _snap(xs if axis == "x" else ys, axis, value)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


def _snap(ticks: np.ndarray, axis: str, value: float) -> None:
    """Move the grid line nearest to ``value`` onto it (shift at most h/2)."""
    n = len(ticks) - 1
    t = (value - ticks[0]) / (ticks[-1] - ticks[0]) * n
    k = int(np.floor(t + 0.5))
    if abs(ticks[k] - value) <= 1e-12 * (ticks[-1] - ticks[0]):
        ticks[k] = value
        return
    if not 0 < k < n:
        raise MeshError(f"interface {axis}={value:g} lies too close to the boundary "
                        f"for {n} subdivisions")
    uniform = ticks[0] + k * (ticks[-1] - ticks[0]) / n
    if ticks[k] != uniform:
        raise MeshError(f"interfaces {axis}={value:g} and {axis}={ticks[k]:g} need more "
                        f"than {n} subdivisions")
    ticks[k] = value


def _check_interfaces(lines: Iterable[tuple[str, float]], bounds, n_cells) -> None:
    for axis, value in lines:
        lo, hi, n = bounds[axis]
        t = (value - lo) / (hi - lo) * n
        if abs(t - round(t)) > 1e-9:
            raise MeshError(
                f"interface {axis}={value:g} is not representable with {n} "
                f"subdivisions on [{lo:g}, {hi:g}]"
            )


def build_structured(domain, n: int, interfaces: Iterable[tuple[str, float]] = ()) -> MeshTopology:
    """Structured triangulation of a rectangle or of the L-shape.

    Parameters
    ----------
    domain : str or tuple
        ``"lshape"`` for (-1,1)^2 minus (-1,0]^2, ``"unit_square"``, or a
        rectangle ``(x0, x1, y0, y1)``.
    n : int
        Subdivisions per axis (per unit length for the L-shape).
    interfaces : iterable of (axis, value)
        Lines ``x = value`` / ``y = value`` the mesh must resolve.  On
        rectangles the nearest grid line is moved onto each interface when
        it does not fall on the uniform grid.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise MeshError(f"number of subdivisions must be a positive integer, got {n!r}")
    if isinstance(domain, str) and domain == "lshape":
        return _lshape(n, interfaces)
    if isinstance(domain, str) and domain == "unit_square":
        domain = (0.0, 1.0, 0.0, 1.0)
    if isinstance(domain, dict):
        domain = tuple(domain["bounds"])
    x0, x1, y0, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {domain}")
    for axis, value in interfaces:
        lo, hi = (x0, x1) if axis == "x" else (y0, y1)
        if not lo < value < hi:
            raise MeshError(f"interface {axis}={value:g} outside [{lo:g}, {hi:g}]")
    verts = _grid(x0, x1, y0, y1, n, n, tuple(interfaces))
    elems = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            # diagonal from lower-left to upper-right
            elems.append((a, b, c))
            elems.append((a, c, d))
    return from_arrays(verts, elems)


def _lshape(n: int, interfaces) -> MeshTopology:
    _check_interfaces(interfaces, {"x": (-1.0, 1.0, 2 * n), "y": (-1.0, 1.0, 2 * n)}, 2 * n)
    verts = _grid(-1.0, 1.0, -1.0, 1.0, 2 * n, 2 * n)
    m = 2 * n + 1
    elems = []
    for j in range(2 * n):
        for i in range(2 * n):
            cx = -1.0 + (i + 0.5) / n
            cy = -1.0 + (j + 0.5) / n
            if cx < 0 and cy < 0:
                continue
            a = j * m + i
            b, c, d = a + 1, a + m + 1, a + m
            # diagonals run along the rays from the reentrant corner
            if cx * cy > 0:
                elems.append((a, b, c))
                elems.append((a, c, d))
            else:
                elems.append((a, b, d))
                elems.append((b, c, d))
    used = np.unique(np.array(elems))
    remap = np.full(len(verts), -1, dtype=int)
    remap[used] = np.arange(len(used))
    return from_arrays(verts[used], remap[np.array(elems)])


def bisect(mesh: MeshTopology, marked: Iterable[int]) -> MeshTopology:
    """Newest-vertex bisection of the marked elements with conformity closure.

    Unrefined elements keep their relative order and come first; the
    descendants of each refined element follow in parent order.  The
    ``parent`` array of the result maps every element to its ancestor in
    ``mesh``.
    """
    marked = np.unique(np.asarray(list(marked), dtype=int))
    ne = mesh.n_elements
    if len(marked) == 0:
        return MeshTopology(mesh.vertices.copy(), mesh.elements.copy(),
                            mesh.generation.copy(), np.arange(ne))
    if marked.min() < 0 or marked.max() >= ne:
        raise MeshError("marked element id out of range")

    sk = mesh.skeleton
    ef = sk.element_faces
    face_marked = np.zeros(len(sk), dtype=bool)
    face_marked[ef[marked, 2]] = True
    while True:
        touched = face_marked[ef].any(axis=1)
        need = touched & ~face_marked[ef[:, 2]]
        if not need.any():
            break
        face_marked[ef[need, 2]] = True

    mf = np.flatnonzero(face_marked)
    fv = sk.vertices[mf]
    mid_index = np.full(len(sk), -1, dtype=int)
    mid_index[mf] = mesh.n_vertices + np.arange(len(mf))
    vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[fv[:, 0]] + mesh.vertices[fv[:, 1]])])

    refined = face_marked[ef[:, 2]]
    keep = np.flatnonzero(~refined)
    new_elems = [mesh.elements[keep]]
    new_gen = [mesh.generation[keep]]
    new_parent = [keep]

    for e in np.flatnonzero(refined):
        a, b, c = mesh.elements[e]
        m = mid_index[ef[e, 2]]
        g = mesh.generation[e] + 1
        # first child (c, a, m): refinement edge c-a = old local edge 1
        # second child (b, c, m): refinement edge b-c = old local edge 0
        kids = []
        for child, face in (((c, a, m), ef[e, 1]), ((b, c, m), ef[e, 0])):
            if face_marked[face]:
                p, q, r = child
                mm = mid_index[face]
                kids.append(((r, p, mm), g + 1))
                kids.append(((q, r, mm), g + 1))
            else:
                kids.append((child, g))
        new_elems.append(np.array([k for k, _ in kids], dtype=int))
        new_gen.append(np.array([gg for _, gg in kids], dtype=int))
        new_parent.append(np.full(len(kids), e, dtype=int))

    return MeshTopology(vertices, np.vstack(new_elems), np.concatenate(new_gen),
                        np.concatenate(new_parent))


def refine_uniform(mesh: MeshTopology) -> MeshTopology:
    """Mark every element and bisect twice: one full h/2 refinement."""
    once = bisect(mesh, range(mesh.n_elements))
    twice = bisect(once, range(once.n_elements))
    return MeshTopology(twice.vertices, twice.elements, twice.generation,
                        once.parent[twice.parent])


def write_vtk(path, mesh: MeshTopology, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "resmin") -> None:
    """Legacy ASCII VTK unstructured grid."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.16e} {y:.16e} 0.0\n")
        ne = mesh.n_elements
        fh.write(f"CELLS {ne} {4 * ne}\n")
        for a, b, c in mesh.elements:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {ne}\n")
        fh.write("5\n" * ne)
        if point_data:
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            for name, values in point_data.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{v:.16e}\n" for v in np.asarray(values, dtype=float))
        if cell_data:
            fh.write(f"CELL_DATA {ne}\n")
            for name, values in cell_data.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{v:.16e}\n" for v in np.asarray(values, dtype=float))
