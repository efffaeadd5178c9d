import numpy as np
import pytest

from boundfem.mesh import (CHARACTERISTIC, INFLOW, OUTFLOW,
                           bisect_marked, build_structured_mesh,
                           classify_boundary_faces, read_mesh,
                           refine_uniform_red, write_mesh)


def edge_set(mesh):
    pairs = set()
    for a, b, c in mesh.elements:
        for u, v in ((a, b), (b, c), (c, a)):
            pairs.add((min(u, v), max(u, v)))
    return pairs


def check_invariants(mesh, area):
    # areas sum to the domain area
    assert abs(mesh.element_area.sum() - area) <= 1e-12 * area
    # all faces unit-normal; interior normal consistent with the plus side
    for normals in (mesh.iface_normals, mesh.bface_normals):
        if len(normals):
            np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0,
                                       atol=1e-13)
    v = mesh.vertices
    for (a, b), (em, ep), n in zip(mesh.iface_vertices, mesh.iface_elements,
                                   mesh.iface_normals):
        tri = mesh.elements[ep]
        for k in range(3):
            u, w = tri[k], tri[(k + 1) % 3]
            if {u, w} == {a, b}:
                t = v[w] - v[u]
                outward_plus = np.array([t[1], -t[0]]) / np.linalg.norm(t)
                np.testing.assert_allclose(outward_plus, -n, atol=1e-12)
    # conformity: every element edge appears as a face, each exactly once
    faces = [tuple(sorted(p)) for p in mesh.iface_vertices] + \
            [tuple(sorted(p)) for p in mesh.bface_vertices]
    assert len(faces) == len(set(faces))
    assert set(faces) == edge_set(mesh)
    # vertices are exactly the element corners
    assert set(np.unique(mesh.elements)) == set(range(mesh.n_vertices))


def test_structured_counts_4x4_rectangle():
    mesh = build_structured_mesh(4, 4, (0.0, 1.0, -1.0, 1.0))
    assert mesh.n_elements == 32
    assert mesh.n_vertices == 25
    check_invariants(mesh, 2.0)


def test_structured_smallest_case():
    mesh = build_structured_mesh(1, 1)
    assert mesh.n_elements == 2
    assert mesh.n_vertices == 4
    assert len(mesh.iface_vertices) == 1
    check_invariants(mesh, 1.0)


def test_structured_2x2_faces():
    mesh = build_structured_mesh(2, 2)
    assert mesh.n_elements == 8
    # 16 total unique edges on a 2x2 criss-cross grid: 8 boundary, 8 interior
    assert len(mesh.bface_vertices) == 8
    assert len(mesh.iface_vertices) == 8
    check_invariants(mesh, 1.0)


def test_structured_rejects_bad_input():
    with pytest.raises(ValueError):
        build_structured_mesh(0, 3)
    with pytest.raises(ValueError):
        build_structured_mesh(2, 2, (0.0, 0.0, 0.0, 1.0))


def test_classify_unit_square_diagonal_velocity():
    mesh = build_structured_mesh(3, 3)
    beta = (3.0 / np.sqrt(10.0), 1.0 / np.sqrt(10.0))
    cls = classify_boundary_faces(mesh, beta)
    mids = 0.5 * (mesh.vertices[mesh.bface_vertices[:, 0]]
                  + mesh.vertices[mesh.bface_vertices[:, 1]])
    for mid, label in zip(mids, cls.face_labels):
        if np.isclose(mid[0], 0.0) or np.isclose(mid[1], 0.0):
            assert label == INFLOW
        else:
            assert label == OUTFLOW
    assert np.array_equal(np.sign(cls.b_dot_n).astype(np.int8), cls.labels)


def test_classify_zero_velocity_is_characteristic():
    mesh = build_structured_mesh(2, 2)
    cls = classify_boundary_faces(mesh, (0.0, 0.0))
    assert np.all(cls.labels == CHARACTERISTIC)
    assert np.all(cls.face_labels == CHARACTERISTIC)


def test_classify_rotating_flow_left_edge_split():
    mesh = build_structured_mesh(2, 4, (0.0, 1.0, -1.0, 1.0))
    cls = classify_boundary_faces(mesh, lambda x: np.stack([-x[..., 1], x[..., 0]], axis=-1))
    mids = 0.5 * (mesh.vertices[mesh.bface_vertices[:, 0]]
                  + mesh.vertices[mesh.bface_vertices[:, 1]])
    on_left = np.isclose(mids[:, 0], 0.0)
    assert np.all(cls.face_labels[on_left & (mids[:, 1] < 0)] == INFLOW)
    assert np.all(cls.face_labels[on_left & (mids[:, 1] > 0)] == OUTFLOW)


def test_red_refinement_counts_and_h():
    mesh = build_structured_mesh(1, 1)
    fine = refine_uniform_red(mesh)
    assert fine.n_elements == 8
    assert fine.h == pytest.approx(0.5 * mesh.h, abs=0.0)
    assert np.max(fine.h_elem) == pytest.approx(0.5 * np.max(mesh.h_elem))
    check_invariants(fine, 1.0)

    m32 = build_structured_mesh(4, 4, (0.0, 1.0, -1.0, 1.0))
    m128 = refine_uniform_red(m32)
    assert m128.n_elements == 128
    check_invariants(m128, 2.0)


def test_bisect_all_elements():
    mesh = build_structured_mesh(2, 2)
    fine = bisect_marked(mesh, range(mesh.n_elements))
    assert fine.n_elements >= 2 * mesh.n_elements
    assert np.all(np.bincount(fine.parent_elements,
                              minlength=mesh.n_elements) >= 2)
    check_invariants(fine, 1.0)


def test_bisect_single_element_closure():
    mesh = build_structured_mesh(2, 2)
    fine = bisect_marked(mesh, [0])
    # the marked element is split; closure splits only what conformity needs
    assert np.sum(fine.parent_elements == 0) >= 2
    assert fine.n_elements > mesh.n_elements
    assert fine.n_elements < 4 * mesh.n_elements
    check_invariants(fine, 1.0)
    # untouched elements keep their diameter
    untouched = [e for e in range(mesh.n_elements)
                 if np.sum(fine.parent_elements == e) == 1]
    for e in untouched:
        child = int(np.nonzero(fine.parent_elements == e)[0][0])
        assert fine.h_elem[child] == pytest.approx(mesh.h_elem[e], abs=0.0)


def test_bisect_empty_marks_returns_mesh():
    mesh = build_structured_mesh(2, 2)
    assert bisect_marked(mesh, []) is mesh


def test_bisect_rejects_bad_marks():
    mesh = build_structured_mesh(2, 2)
    with pytest.raises(ValueError):
        bisect_marked(mesh, [99])


def test_repeated_bisection_shape_regularity():
    # bisection of right isosceles triangles cycles between two similarity
    # classes, so angles stay in {45, 90} degrees
    mesh = build_structured_mesh(2, 2)
    angles = set()
    for _ in range(20):
        mesh = bisect_marked(mesh, [0])
        tri = mesh.vertices[mesh.elements]
        for corner in range(3):
            a = tri[:, corner] - tri[:, (corner + 1) % 3]
            b = tri[:, (corner + 2) % 3] - tri[:, (corner + 1) % 3]
            cosang = np.einsum("ed,ed->e", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.update(np.round(np.degrees(np.arccos(cosang)), 6))
    assert angles <= {45.0, 90.0}
    assert min(angles) >= 45.0 - 1e-6
    check_invariants(mesh, 1.0)


def test_area_preserved_over_refinement_sequences():
    mesh = build_structured_mesh(3, 2, (0.0, 2.0, 0.0, 1.0))
    rng = np.random.default_rng(7)
    for _ in range(4):
        marks = rng.choice(mesh.n_elements, size=max(1, mesh.n_elements // 5),
                           replace=False)
        mesh = bisect_marked(mesh, marks)
        assert abs(mesh.element_area.sum() - 2.0) <= 2e-12
    mesh = refine_uniform_red(mesh)
    assert abs(mesh.element_area.sum() - 2.0) <= 2e-12
    check_invariants(mesh, 2.0)


def test_text_roundtrip(tmp_path):
    mesh = build_structured_mesh(3, 2, (0.0, 1.0, -1.0, 1.0))
    path = tmp_path / "mesh.txt"
    write_mesh(mesh, path)
    back = read_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.elements, mesh.elements)


def test_locate_points():
    mesh = build_structured_mesh(4, 4)
    rng = np.random.default_rng(3)
    pts = rng.random((50, 2))
    elems, refs = mesh.locate(pts)
    assert np.all(elems >= 0)
    B, b0, _, _ = mesh.affine()
    back = b0[elems] + np.einsum("pij,pj->pi", B[elems], refs)
    np.testing.assert_allclose(back, pts, atol=1e-12)
    outside, _ = mesh.locate(np.array([[2.0, 2.0]]))
    assert outside[0] == -1
