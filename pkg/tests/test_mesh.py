import numpy as np
import pytest

from maxhdg.mesh import build_cube_mesh, build_lshape_mesh, dissection_face_order, shape_metrics


def test_cube_counts_n1():
    m = build_cube_mesh(1)
    assert m.n_elements == 6 and len(m.vertices) == 8
    assert m.n_faces == 18
    assert int(m.boundary.sum()) == 12


@pytest.mark.parametrize("n", [1, 2, 3])
def test_cube_invariants(n):
    m = build_cube_mesh(n)
    assert m.n_elements == 6 * n**3 and len(m.vertices) == (n + 1) ** 3
    assert abs(m.volumes.sum() - 1.0) < 1e-12
    assert np.isclose(m.h, np.sqrt(3) / n)
    counts = np.bincount(m.tet_faces.ravel(), minlength=m.n_faces)
    assert np.all(counts[m.boundary] == 1) and np.all(counts[~m.boundary] == 2)


def test_lshape_counts():
    m = build_lshape_mesh(2)
    assert m.n_elements == 18 * 8
    assert abs(m.volumes.sum() - 3.0) < 1e-12
    # no vertex inside the removed quadrant
    x, y = m.vertices[:, 0], m.vertices[:, 1]
    assert not np.any((x < -1e-12) & (y < -1e-12))


def test_positive_orientation_and_normals():
    m = build_lshape_mesh(1)
    p = m.vertices[m.tets]
    vol = np.einsum("ij,ij->i", p[:, 1] - p[:, 0], np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]))
    assert np.all(vol > 0)
    for j in range(m.n_faces):
        f = m.face(j)
        owner = f.elements[0]
        opposite = m.vertices[m.tets[owner]].mean(axis=0)
        assert f.normal @ (f.centroid - opposite) > 0
        frame = np.column_stack([f.t1, f.t2, f.normal])
        assert np.allclose(frame.T @ frame, np.eye(3), atol=1e-14)
        assert np.linalg.det(frame) > 0
    # the two sides of an interior face see opposite orientation signs
    interior = np.flatnonzero(~m.boundary)
    for j in interior[:10]:
        signs = m.tet_face_sign[m.tet_faces == j]
        assert sorted(signs) == [-1, 1]


def test_digest_deterministic():
    assert build_cube_mesh(2).digest() == build_cube_mesh(2).digest()
    assert build_cube_mesh(2).digest() != build_cube_mesh(3).digest()


def test_shape_metrics():
    m = build_cube_mesh(2)
    s = shape_metrics(m, 0)
    assert s.diameter > s.inradius > 0
    assert s.diameter >= 2 * s.inradius
    assert s.area_ratio >= 1


@pytest.mark.parametrize("mesh", [build_cube_mesh(3), build_lshape_mesh(2)], ids=["cube", "lshape"])
def test_dissection_order_is_interior_permutation(mesh):
    order = dissection_face_order(mesh, leaf=4)
    assert np.array_equal(np.sort(order), np.flatnonzero(~mesh.boundary))
