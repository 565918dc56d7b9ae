import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshflow.errors import DegenerateElement, IndexOutOfRange, UnresolvedVertex
from meshflow.mesh import (FIXED, INTERIOR, SLIDING, BoundaryGeometry, EdgeMatrix, MeshTriple,
                           SimplicialMesh, affine_jacobian, assemble_rows, box_constraints,
                           build_patches, classify_boundary, constrain_velocity, edge_matrix,
                           element_volume, plane_constraint, project_sliding)
from meshflow.meshgen import criss_cross, interval_mesh, random_mesh, tet_grid


def tri(*pts):
    return SimplicialMesh(np.array(pts, dtype=float), np.array([[0, 1, 2]]))


class TestEdgeMatrix:
    def test_unit_right_triangle(self):
        E = edge_matrix(tri((0, 0), (1, 0), (0, 1)), 0)
        np.testing.assert_array_equal(E.matrix, np.eye(2))
        assert E.det == 1.0

    def test_scaled_triangle(self):
        E = edge_matrix(tri((0, 0), (2, 0), (0, 2)), 0)
        np.testing.assert_array_equal(E.matrix, 2 * np.eye(2))
        assert E.det == 4.0

    def test_collinear_is_degenerate(self):
        with pytest.raises(DegenerateElement):
            edge_matrix(tri((0, 0), (1, 1), (2, 2)), 0)

    def test_columns_are_edges_from_first_vertex(self):
        m = tri((1, 1), (3, 2), (0, 4))
        E = edge_matrix(m, 0).matrix
        np.testing.assert_array_equal(E[:, 0], [2, 1])
        np.testing.assert_array_equal(E[:, 1], [-1, 3])


class TestVolume:
    @pytest.mark.parametrize("d,expected", [(2, 0.5), (3, 1.0 / 6.0)])
    def test_unit_simplex(self, d, expected):
        assert element_volume(EdgeMatrix.from_matrix(np.eye(d))) == pytest.approx(expected, rel=1e-15)

    def test_against_shoelace(self, rng):
        assert element_volume(EdgeMatrix.from_matrix(2 * np.eye(2))) == 2.0
        for _ in range(20):
            p = rng.standard_normal((3, 2))
            shoelace = 0.5 * abs(sum(p[i, 0] * p[(i + 1) % 3, 1] - p[(i + 1) % 3, 0] * p[i, 1]
                                     for i in range(3)))
            E = EdgeMatrix.from_matrix((p[1:] - p[0]).T)
            assert element_volume(E) == pytest.approx(shoelace, rel=1e-12)

    def test_volumes_sum_to_domain(self):
        assert criss_cross(7).volumes().sum() == pytest.approx(1.0, rel=1e-13)
        assert tet_grid(4).volumes().sum() == pytest.approx(64.0, rel=1e-13)


class TestAffineJacobian:
    def test_identical(self):
        E = EdgeMatrix.from_matrix(np.array([[1.0, 0.3], [0.2, 2.0]]))
        F, Finv, r = affine_jacobian(E, E)
        np.testing.assert_allclose(F, np.eye(2), atol=1e-15)
        assert r == pytest.approx(1.0)

    def test_scaling(self):
        F, Finv, r = affine_jacobian(EdgeMatrix.from_matrix(2 * np.eye(2)), EdgeMatrix.from_matrix(np.eye(2)))
        np.testing.assert_allclose(F, 2 * np.eye(2))
        np.testing.assert_allclose(Finv, 0.5 * np.eye(2))
        assert r == pytest.approx(0.25)

    def test_multiply_back(self, rng):
        for d in (1, 2, 3):
            E = EdgeMatrix.from_matrix(rng.standard_normal((d, d)) + 3 * np.eye(d))
            Eh = EdgeMatrix.from_matrix(rng.standard_normal((d, d)) + 3 * np.eye(d))
            F, Finv, _ = affine_jacobian(E, Eh)
            np.testing.assert_allclose(F @ Finv, np.eye(d), atol=1e-12)


class TestValidation:
    def test_bad_index(self):
        with pytest.raises(IndexOutOfRange):
            SimplicialMesh(np.zeros((3, 2)), np.array([[0, 1, 3]]))

    def test_repeated_vertex(self):
        with pytest.raises(ValueError):
            SimplicialMesh(np.eye(3)[:, :2], np.array([[0, 1, 1]]))

    def test_wrong_arity(self):
        with pytest.raises(ValueError):
            SimplicialMesh(np.zeros((4, 2)), np.array([[0, 1, 2, 3]]))

    def test_check_nondegenerate(self):
        with pytest.raises(DegenerateElement):
            tri((0, 0), (1, 1), (2, 2)).check_nondegenerate()
        assert criss_cross(5).is_oriented()
        assert tet_grid(3).is_oriented()


class TestPatches:
    def test_single_triangle(self):
        assert [len(p) for p in build_patches(tri((0, 0), (1, 0), (0, 1)))] == [1, 1, 1]

    def test_two_triangle_square(self, unit_square):
        sizes = [len(p) for p in build_patches(unit_square)]
        assert sizes == [2, 1, 2, 1]

    def test_incidence_count(self, grid11):
        patches = build_patches(grid11)
        assert sum(len(p) for p in patches) == 3 * grid11.n_elements
        scan = np.zeros(grid11.n_vertices, dtype=int)
        for e in grid11.elements:
            for v in e:
                scan[v] += 1
        assert [len(p) for p in patches] == scan.tolist()
        for p in patches:
            for k, j in p.entries:
                assert grid11.elements[k, j] == p.vertex

    def test_assemble_rows_matches_patch_loop(self, rng, jittered2d):
        m = jittered2d
        rows = rng.standard_normal((m.n_elements, 3, 2))
        fast = assemble_rows(m.elements, rows, m.n_vertices)
        slow = np.array([sum((rows[k, j] for k, j in p.entries), np.zeros(2)) for p in build_patches(m)])
        np.testing.assert_allclose(fast, slow, atol=1e-13)


class TestTopology:
    def test_boundary_vertices_of_grid(self):
        m = criss_cross(5)
        b = m.boundary_vertices()
        on_edge = np.flatnonzero(np.isclose(m.vertices, 0).any(axis=1) | np.isclose(m.vertices, 1).any(axis=1))
        np.testing.assert_array_equal(b, on_edge)

    def test_neighbors_symmetric(self, small_tets):
        nb = small_tets.neighbors()
        for k, row in enumerate(nb):
            for j in row[row >= 0]:
                assert k in nb[j]

    def test_interval_boundary(self):
        np.testing.assert_array_equal(interval_mesh(5).boundary_vertices(), [0, 4])


class TestBoundary:
    def test_all_fixed(self):
        m = criss_cross(4)
        tags = classify_boundary(m, BoundaryGeometry.all_fixed())
        b = m.boundary_vertices()
        assert set(tags.fixed) == set(b)
        assert np.all(tags.kind[np.setdiff1d(np.arange(m.n_vertices), b)] == INTERIOR)

    def test_sliding_edges_fixed_corners(self):
        m = criss_cross(4)
        cons = box_constraints([0, 0], [1, 1])
        tags = classify_boundary(m, BoundaryGeometry(cons))
        corners = [0, 3, 12, 15]
        assert np.all(tags.kind[corners] == FIXED)
        # bottom edge interior vertices slide on y = 0
        for v in (1, 2):
            assert tags.kind[v] == SLIDING
            assert cons[tags.constraint[v]].phi(m.vertices[[v]])[0] == 0.0
            np.testing.assert_allclose(np.abs(cons[tags.constraint[v]].grad(m.vertices[[v]])[0]), [0, 1])

    def test_interior_untouched(self):
        m = criss_cross(4)
        tags = classify_boundary(m, BoundaryGeometry(box_constraints([0, 0], [1, 1])))
        centre = m.n_vertices - 1
        assert tags.kind[centre] == INTERIOR and tags.constraint[centre] == -1

    def test_unresolved(self):
        m = criss_cross(3)
        with pytest.raises(UnresolvedVertex):
            classify_boundary(m, BoundaryGeometry([plane_constraint([0, 1], 0.0)]))

    def test_velocity_projection_on_line(self):
        m = criss_cross(3)
        cons = box_constraints([0, 0], [1, 1])
        tags = classify_boundary(m, BoundaryGeometry(cons))
        v = np.ones((m.n_vertices, 2))
        out = constrain_velocity(v, m.vertices, tags, cons)
        np.testing.assert_array_equal(out[1], [1.0, 0.0])  # bottom edge midpoint
        np.testing.assert_array_equal(out[0], [0.0, 0.0])  # corner
        np.testing.assert_array_equal(out[-1], [1.0, 1.0])  # interior

    def test_projection_onto_circle(self):
        from meshflow.mesh import BoundaryTags, Constraint

        circle = Constraint(lambda p: (p ** 2).sum(axis=1) - 1.0, lambda p: 2 * p)
        tags = BoundaryTags(np.array([SLIDING], dtype=np.int8), np.array([0]))
        y = np.array([[1.001, 0.002]])
        for _ in range(3):
            y = project_sliding(y, tags, [circle])
        assert abs(np.linalg.norm(y) - 1) < 1e-12


@given(st.integers(0, 10_000))
def test_triple_shares_connectivity(seed):
    a = random_mesh(2, 4, seed)
    b = random_mesh(2, 4, seed + 1)
    t = MeshTriple.from_meshes(a, b)
    assert t.mesh("physical").n_elements == t.mesh("reference").n_elements
    np.testing.assert_array_equal(t.computational, a.vertices)
    with pytest.raises(ValueError):
        MeshTriple.from_meshes(a, random_mesh(2, 5, seed))
