import numpy as np
import pytest

from pharmap.errors import UsageError
from pharmap.mesh import TriMesh, build_annulus, build_polar, build_rect, load_mesh, refine, save_mesh


def test_build_annulus_counts_and_flags():
    m = build_annulus(1.0, 2.0, 2, 8)
    assert m.num_vertices == 24
    assert m.num_triangles == 32
    radii = np.linalg.norm(m.vertices, axis=1)
    assert np.array_equal(m.boundary, (np.abs(radii - 1) < 1e-12) | (np.abs(radii - 2) < 1e-12))
    assert np.all(m.areas > 0)
    assert m.euler_characteristic() == 0  # annulus


def test_build_rect_counts_and_flags():
    m = build_rect(1.0, 1.0, 2, 2)
    assert m.num_vertices == 9
    assert m.num_triangles == 8
    assert m.boundary.sum() == 2 * (2 + 2)
    assert m.euler_characteristic() == 1  # disk-like
    assert np.all(m.areas > 0)


def test_build_validation():
    with pytest.raises(UsageError):
        build_annulus(2.0, 2.0, 2, 8)
    with pytest.raises(UsageError):
        build_annulus(1.0, 2.0, 0, 8)
    with pytest.raises(UsageError):
        build_annulus(1.0, 2.0, 2, 2)
    with pytest.raises(UsageError):
        build_rect(1.0, 1.0, 0, 2)


def test_reference_gradients_sum_to_zero():
    for m in (build_rect(1.5, 0.7, 3, 2), build_annulus(0.5, 2.0, 3, 12)):
        assert np.max(np.abs(m.grads.sum(axis=1))) < 1e-12
        # gradients reproduce affine functions exactly: grad of f(x)=a.x is a
        a = np.array([0.3, -1.1])
        f = m.vertices @ a
        per_tri = np.einsum("tva,tv->ta", m.grads, f[m.triangles])
        assert np.allclose(per_tri, a, atol=1e-12)


def test_refine_counts_areas_flags():
    m = build_rect(1.0, 1.0, 1, 1)
    r = refine(m)
    assert m.num_triangles == 2 and r.num_triangles == 8
    assert r.areas.sum() == pytest.approx(m.areas.sum(), abs=1e-14)
    assert r.boundary_edge_count() == 2 * m.boundary_edge_count()

    a = build_annulus(1.0, 2.0, 2, 8)
    twice = refine(refine(a))
    assert twice.euler_characteristic() == 0
    assert twice.num_triangles == 16 * a.num_triangles
    assert twice.areas.sum() == pytest.approx(a.areas.sum(), abs=1e-13)


def test_refine_boundary_flags_follow_topology():
    m = refine(build_annulus(1.0, 2.0, 2, 6))
    flags = TriMesh._boundary_from_edges(m.triangles, m.num_vertices)
    assert np.array_equal(m.boundary, flags)


def test_duplicate_vertex_detection():
    verts = [(0, 0), (1, 0), (1e-13, 1e-13), (0, 1)]
    with pytest.raises(UsageError):
        TriMesh(verts, [(0, 1, 3), (1, 2, 3)])


def test_orientation_validation():
    verts = [(0, 0), (1, 0), (0, 1)]
    with pytest.raises(UsageError):
        TriMesh(verts, [(0, 2, 1)])  # clockwise


def test_boundary_flag_mismatch_rejected():
    m = build_rect(1.0, 1.0, 2, 2)
    bad = m.boundary.copy()
    bad[~bad] = True
    with pytest.raises(UsageError):
        TriMesh(m.vertices, m.triangles, boundary=bad)


def test_mesh_file_round_trip(tmp_path):
    m = build_annulus(1.0, 2.0, 2, 8)
    path = tmp_path / "mesh.txt"
    save_mesh(path, m)
    loaded = load_mesh(path)
    assert np.array_equal(loaded.vertices, m.vertices)
    assert np.array_equal(loaded.triangles, m.triangles)
    assert np.array_equal(loaded.boundary, m.boundary)
    # byte determinism of the writer
    path2 = tmp_path / "mesh2.txt"
    save_mesh(path2, m)
    assert path.read_bytes() == path2.read_bytes()


def test_build_polar_custom_radii():
    radii = np.geomspace(0.01, 2.0, 12)
    m = build_polar(radii, 16)
    assert m.num_vertices == 12 * 16
    assert np.all(m.areas > 0)
    with pytest.raises(UsageError):
        build_polar([0.0, 1.0], 8)


def test_mesh_size():
    m = build_rect(2.0, 1.0, 2, 1)
    assert m.mesh_size() == pytest.approx(np.hypot(1.0, 1.0))
