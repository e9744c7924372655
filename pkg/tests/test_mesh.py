import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgmhd.mesh import (MeshError, build_structured_tet_mesh, face_trace_frames,
                        load_ascii_mesh, mesh_from_arrays, write_ascii_mesh)


def test_unit_cube_counts():
    m = build_structured_tet_mesh(1)
    assert len(m.vertices) == 8
    assert m.n_elements == 6
    assert m.n_faces == 18
    assert m.boundary_flags.sum() == 12
    assert len(m.interior_faces) == 6


def test_two_cells_per_axis():
    m = build_structured_tet_mesh(2)
    assert m.n_elements == 48
    assert m.h == pytest.approx(np.sqrt(3) / 2, rel=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_volume_orientation_and_face_sharing(n):
    m = build_structured_tet_mesh(n)
    assert m.volumes.sum() == pytest.approx(1.0, rel=1e-12)
    v = m.vertices[m.tets]
    signed = np.einsum("ij,ij->i", v[:, 1] - v[:, 0], np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]))
    assert np.all(signed > 0)
    # every face appears in exactly one (boundary) or two (interior) element face lists
    counts = np.bincount(m.elem_faces.ravel(), minlength=m.n_faces)
    assert np.all(counts == np.where(m.boundary_flags, 1, 2))
    assert np.all((m.face_neighbor < 0) == m.boundary_flags)


@pytest.mark.parametrize("n", [1, 2])
def test_normals_unit_and_outward_from_owner(n):
    m = build_structured_tet_mesh(n)
    assert np.abs(np.linalg.norm(m.normals, axis=1) - 1).max() < 1e-14
    centroid = m.vertices[m.tets].mean(axis=1)[m.face_owner]
    face_c = m.vertices[m.faces].mean(axis=1)
    assert np.all(np.einsum("fa,fa->f", face_c - centroid, m.normals) > 0)


def test_refinement_nesting_and_shape_regularity():
    for k in (1, 2):
        assert build_structured_tet_mesh(2 * k).h == build_structured_tet_mesh(k).h / 2
    m = build_structured_tet_mesh(3)
    ratio = m.h_K / m.inradii()
    assert np.ptp(ratio) < 1e-12 * ratio.max()


def test_h_F_is_longest_face_edge():
    m = build_structured_tet_mesh(1)
    fv = m.vertices[m.faces]
    edges = np.stack([fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 1], fv[:, 0] - fv[:, 2]], axis=1)
    assert np.allclose(m.h_F, np.linalg.norm(edges, axis=2).max(axis=1), atol=1e-15)


def test_zero_subdivisions_rejected():
    with pytest.raises((ValueError, MeshError)):
        build_structured_tet_mesh(0)


def test_ascii_round_trip(tmp_path):
    ref = build_structured_tet_mesh(1)
    path = tmp_path / "cube.mesh"
    write_ascii_mesh(ref, path)
    m = load_ascii_mesh(path)
    assert np.array_equal(m.tets, ref.tets)
    assert np.array_equal(m.faces, ref.faces)
    assert np.array_equal(m.boundary_flags, ref.boundary_flags)


def test_ascii_comments_allowed(tmp_path):
    ref = build_structured_tet_mesh(1)
    path = tmp_path / "c.mesh"
    write_ascii_mesh(ref, path)
    text = "# cube\n" + path.read_text().replace("\n", "  # trailing\n", 1)
    path.write_text(text)
    assert load_ascii_mesh(path).n_elements == 6


def test_ascii_duplicate_element(tmp_path):
    ref = build_structured_tet_mesh(1)
    path = tmp_path / "dup.mesh"
    lines = [f"{len(ref.vertices)} 7"] + [" ".join(repr(float(c)) for c in x) for x in ref.vertices]
    lines += [" ".join(map(str, t)) for t in ref.tets] + [" ".join(map(str, ref.tets[0]))]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MeshError, match="duplicate element"):
        load_ascii_mesh(path)


def test_ascii_empty_file(tmp_path):
    path = tmp_path / "empty.mesh"
    path.write_text("")
    with pytest.raises(MeshError, match="empty"):
        load_ascii_mesh(path)


def test_ascii_bad_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("4 1\n0 0 0\n1 0 0\n0 1 oops\n0 0 1\n0 1 2 3\n")
    with pytest.raises(MeshError, match=":4:"):
        load_ascii_mesh(path)


def test_inverted_element_rejected():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    with pytest.raises(MeshError, match="inverted"):
        mesh_from_arrays(v, np.array([[0, 2, 1, 3]]))


@pytest.mark.parametrize("n", [1, 2])
def test_face_frames_match_physical_points(n):
    m = build_structured_tet_mesh(n)
    fr = face_trace_frames(m)
    J = m.jacobians()
    x0 = m.vertices[m.tets[:, 0]]
    own = np.einsum("fij,fqj->fqi", J[m.face_owner], fr.owner_xi) + x0[m.face_owner][:, None]
    assert np.abs(own - fr.points).max() < 1e-13
    I = m.interior_faces
    nb = m.face_neighbor[I]
    oth = np.einsum("fij,fqj->fqi", J[nb], fr.neighbor_xi[I]) + x0[nb][:, None]
    assert np.abs(oth - fr.points[I]).max() < 1e-13
    t = fr.tangents
    assert np.abs(np.einsum("fa,fa->f", t[:, 0], m.normals)).max() < 1e-14
    assert np.abs(np.einsum("fa,fa->f", t[:, 1], m.normals)).max() < 1e-14


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_continuous_linear_field_agrees_across_faces(c):
    m = build_structured_tet_mesh(2)
    fr = face_trace_frames(m)
    I = m.interior_faces
    J = m.jacobians()
    x0 = m.vertices[m.tets[:, 0]]

    def lin(x):
        return c[0] + c[1] * x[..., 0] + c[2] * x[..., 1] + c[3] * x[..., 2]

    a = lin(np.einsum("fij,fqj->fqi", J[m.face_owner[I]], fr.owner_xi[I]) + x0[m.face_owner[I]][:, None])
    b = lin(np.einsum("fij,fqj->fqi", J[m.face_neighbor[I]], fr.neighbor_xi[I])
            + x0[m.face_neighbor[I]][:, None])
    assert np.abs(a - b).max() < 1e-12
