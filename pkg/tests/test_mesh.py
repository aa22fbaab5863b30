import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resmin.mesh import (MeshError, MeshTopology, bisect, build_structured, compute_skeleton,
                         from_arrays, refine_uniform, write_vtk)


def signed_areas(mesh):
    P = mesh.vertices[mesh.elements]
    a, b, c = P[:, 0], P[:, 1], P[:, 2]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


def hanging_nodes(mesh):
    """Vertices lying strictly inside some element edge."""
    found = 0
    V = mesh.vertices
    for a, b in mesh.skeleton.vertices:
        d = V[b] - V[a]
        rel = V - V[a]
        cross = np.abs(d[0] * rel[:, 1] - d[1] * rel[:, 0])
        t = rel @ d / (d @ d)
        inside = (cross < 1e-12) & (t > 1e-12) & (t < 1 - 1e-12)
        found += int(inside.sum())
    return found


def test_unit_square_n1_counts():
    m = build_structured("unit_square", 1)
    sk = m.skeleton
    assert m.n_elements == 2
    assert len(sk) == 5
    assert sk.boundary.sum() == 4 and sk.interior.sum() == 1


def test_unit_square_n2_counts():
    m = build_structured("unit_square", 2)
    assert m.n_elements == 8
    assert len(m.skeleton) == 16


def test_lshape_n1():
    m = build_structured("lshape", 1)
    assert m.n_elements == 6
    assert m.areas.sum() == pytest.approx(3.0)
    # no element inside the removed quadrant
    c = m.centroids
    assert not np.any((c[:, 0] < 0) & (c[:, 1] < 0))
    sk = m.skeleton
    assert 2 * sk.interior.sum() + sk.boundary.sum() == 3 * m.n_elements
    assert sk.boundary.sum() == 8  # perimeter 8 split into unit edges


def test_diagonal_normal_fixed_by_owner_rule():
    m = build_structured("unit_square", 1)
    sk = m.skeleton
    f = np.flatnonzero(sk.interior)[0]
    assert sk.elements[f, 0] < sk.elements[f, 1]
    n = sk.normals[f]
    assert abs(abs(n[0]) - 1 / np.sqrt(2)) < 1e-15 and n[0] * n[1] < 0
    # points from T- into T+
    c = m.centroids
    assert n @ (c[sk.elements[f, 1]] - c[sk.elements[f, 0]]) > 0


@pytest.mark.parametrize("domain,n", [("unit_square", 3), ("lshape", 2), ((0, 2, -1, 1), 4)])
def test_skeleton_invariants(domain, n):
    m = build_structured(domain, n)
    sk = m.skeleton
    assert np.sum(np.where(sk.boundary, 1, 2)) == 3 * m.n_elements
    assert np.allclose(np.linalg.norm(sk.normals, axis=1), 1.0)
    assert np.all(signed_areas(m) > 0)
    L = m.edge_lengths
    assert np.allclose(m.diameters, L.max(axis=1))
    # boundary normals point outward: midpoint + small step leaves the domain
    mid = 0.5 * (m.vertices[sk.vertices[:, 0]] + m.vertices[sk.vertices[:, 1]])
    outside = mid[sk.boundary] + 1e-6 * sk.normals[sk.boundary]
    assert np.all(m.locate(outside) < 0)
    inside = mid[sk.boundary] - 1e-6 * sk.normals[sk.boundary]
    assert np.all(m.locate(inside) >= 0)


def test_face_objects_match_arrays():
    m = build_structured("unit_square", 2)
    faces = m.faces
    assert len(faces) == len(m.skeleton)
    for f in faces:
        assert f.boundary == (f.plus is None)
        assert abs(np.hypot(*f.normal) - 1) < 1e-14


def test_edge_shared_by_three_elements_rejected():
    V = np.array([[0, 0], [1, 0], [0.5, 1], [0.5, -1], [1.5, 0.5]], dtype=float)
    E = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    with pytest.raises(MeshError):
        compute_skeleton(V, E)


@pytest.mark.parametrize("n", [0, -2])
def test_nonpositive_n_rejected(n):
    with pytest.raises(MeshError):
        build_structured("unit_square", n)


def test_interface_lines_are_mesh_lines():
    m = build_structured("unit_square", 4, [("x", 0.5)])
    assert np.any(np.isclose(m.vertices[:, 0], 0.5))
    m = build_structured("unit_square", 8, [("x", 2 / 3), ("y", 2 / 3)])
    xs = np.unique(np.round(m.vertices[:, 0], 14))
    assert np.any(np.isclose(xs, 2 / 3, atol=1e-15))
    # no element straddles an interface
    P = m.vertices[m.elements]
    for axis in (0, 1):
        lo, hi = P[..., axis].min(axis=1), P[..., axis].max(axis=1)
        assert not np.any((lo < 2 / 3 - 1e-12) & (hi > 2 / 3 + 1e-12))


def test_interface_not_representable():
    with pytest.raises(MeshError, match="interface"):
        build_structured("unit_square", 1, [("x", 2 / 3)])
    with pytest.raises(MeshError, match="interface"):
        build_structured("lshape", 1, [("x", 0.3)])


def test_bisect_both_elements():
    m = bisect(build_structured("unit_square", 1), [0, 1])
    assert m.n_elements == 4
    assert np.allclose(m.areas, 0.25)


def test_bisect_nothing_is_identity():
    m = build_structured("unit_square", 2)
    r = bisect(m, [])
    assert r.n_elements == m.n_elements
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.elements, m.elements)


def test_bisect_closure_reaches_neighbour():
    m = build_structured("unit_square", 1)
    # refinement edge of element 0 is the shared diagonal
    e = m.elements[0]
    ref = {int(e[0]), int(e[1])}
    diag = {int(v) for v in m.skeleton.vertices[m.skeleton.interior][0]}
    assert ref == diag
    r = bisect(m, [0])
    assert r.n_elements == 4
    r.check_conformity()
    assert hanging_nodes(r) == 0


def test_refine_uniform_quadruples():
    m = build_structured("lshape", 1)
    for _ in range(3):
        r = refine_uniform(m)
        assert r.n_elements == 4 * m.n_elements
        assert r.h == pytest.approx(m.h / 2)
        m = r


def test_genealogy_points_to_ancestors():
    m0 = build_structured("unit_square", 2)
    m1 = bisect(m0, [0, 3, 5])
    assert m1.parent.shape == (m1.n_elements,)
    # each child lies inside its parent
    for child, parent in enumerate(m1.parent):
        loc = m0.locate(m1.centroids[child][None, :])
        assert loc[0] == parent
    assert np.all(m1.generation >= 0)
    assert m1.generation.max() >= 1


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.integers(0, 10_000), max_size=6), min_size=1, max_size=6),
       st.sampled_from(["unit_square", "lshape"]))
def test_random_bisection_sequences_stay_conforming(marks, domain):
    m0 = build_structured(domain, 1)
    m = m0
    area = m.areas.sum()
    for picks in marks:
        m = bisect(m, sorted({p % m.n_elements for p in picks}))
        m.check_conformity()
        sk = m.skeleton
        assert np.sum(np.where(sk.boundary, 1, 2)) == 3 * m.n_elements
        assert abs(m.areas.sum() - area) <= 1e-12 * area
        assert np.all(signed_areas(m) > 0)
        assert m.min_angle() >= m0.min_angle() / 2 - 1e-12
    assert hanging_nodes(m) == 0


def test_from_arrays_orients_and_tags_longest_edge():
    V = [[0, 0], [0, 1], [1, 0]]  # clockwise
    m = from_arrays(V, [[0, 1, 2]])
    assert signed_areas(m)[0] > 0
    L = m.edge_lengths[0]
    assert L[2] == pytest.approx(L.max())
    assert isinstance(m, MeshTopology)


def test_write_vtk(tmp_path):
    m = build_structured("unit_square", 2)
    path = tmp_path / "m.vtk"
    write_vtk(path, m, point_data={"x": m.vertices[:, 0]}, cell_data={"a": m.areas})
    text = path.read_text()
    assert text.startswith("# vtk DataFile")
    assert f"CELLS {m.n_elements} {4 * m.n_elements}" in text
    assert "POINT_DATA 9" in text and "CELL_DATA 8" in text
