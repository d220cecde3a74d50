"""Tests for the hierarchical quadrilateral hp-FEM."""
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from hp_vem.analysis import skeleton_l2_error
from hp_vem.errors import InvalidParameter
from hp_vem.fem_quad import (FemSolution, LobattoShapeSet, fem_assemble, fem_assemble_solve, fem_boundary_values,
                             fem_edge_degrees, graded_square_rule, lobatto, tensor_gauss)
from hp_vem.mesh import build_graded_mesh
from hp_vem.polyquad import gauss_lobatto_1d


def harmonic(points):
    return points[:, 0] ** 2 - points[:, 1] ** 2


def harmonic_grad(points):
    return np.column_stack([2.0 * points[:, 0], -2.0 * points[:, 1]])


class TestLobatto(unittest.TestCase):

    def test_vertex_functions_partition_unity(self):
        s = np.linspace(-1.0, 1.0, 9)
        np.testing.assert_allclose(lobatto(0, s)[0] + lobatto(1, s)[0], 1.0)

    def test_bubbles_vanish_at_endpoints(self):
        for k in range(2, 9):
            np.testing.assert_allclose(lobatto(k, np.array([-1.0, 1.0]))[0], 0.0, atol=1e-14)

    def test_derivative(self):
        s = np.array([-0.7, 0.1, 0.55])
        eps = 1e-6
        for k in range(0, 7):
            fd = (lobatto(k, s + eps)[0] - lobatto(k, s - eps)[0]) / (2 * eps)
            np.testing.assert_allclose(lobatto(k, s)[1], fd, atol=1e-7)

    def test_bubble_derivatives_are_orthonormal(self):
        points, weights = np.polynomial.legendre.leggauss(12)
        derivs = np.array([lobatto(k, points)[1] for k in range(2, 8)])
        np.testing.assert_allclose(derivs @ (weights[:, None] * derivs.T), np.eye(6), atol=1e-13)


class TestShapesAndQuadrature(unittest.TestCase):

    def test_mode_count(self):
        self.assertEqual(len(LobattoShapeSet(3, (3, 3, 3, 3))), 4 + 8 + 4)
        self.assertEqual(len(LobattoShapeSet(1, (1, 1, 1, 1))), 4)
        self.assertEqual(len(LobattoShapeSet(3, (2, 3, 1, 3))), 4 + 1 + 2 + 0 + 2 + 4)

    def test_reversed_edge_flips_odd_modes(self):
        ref = np.array([[0.3, -1.0]])
        plain, _ = LobattoShapeSet(3, (3, 3, 3, 3)).evaluate(ref)
        flipped, _ = LobattoShapeSet(3, (3, 3, 3, 3), (True, False, False, False)).evaluate(ref)
        np.testing.assert_allclose(flipped[0, 4], plain[0, 4])
        np.testing.assert_allclose(flipped[0, 5], -plain[0, 5])

    def test_tensor_gauss(self):
        points, weights = tensor_gauss(3)
        self.assertAlmostEqual(weights.sum(), 4.0)
        self.assertAlmostEqual(weights @ (points[:, 0] ** 4 * points[:, 1] ** 2), 0.4 * 2.0 / 3.0)

    def test_graded_square_rule(self):
        for corner in range(4):
            points, weights = graded_square_rule(4, corner, levels=3)
            self.assertAlmostEqual(weights.sum(), 4.0, places=13)
            self.assertAlmostEqual(weights @ (points[:, 0] ** 2 * points[:, 1] ** 2), 4.0 / 9.0, places=13)


class TestFemPatch(unittest.TestCase):

    def test_min_rule(self):
        mesh = build_graded_mesh('d', 2, 0.5)
        cell_degrees = [2 + cell.layer for cell in mesh.cells]
        for edge, d in zip(mesh.edges, fem_edge_degrees(mesh, cell_degrees)):
            self.assertEqual(d, min(cell_degrees[c] for c in edge.cells))

    def test_quadratic_is_reproduced(self):
        mesh = build_graded_mesh('d', 2, 0.5)
        for cell_degrees in ([2] * mesh.n_cells, [2 + cell.layer for cell in mesh.cells]):
            solution = fem_assemble_solve(mesh, cell_degrees, harmonic)
            self.assertLess(solution.energy_error(harmonic_grad), 1e-9)
            self.assertLess(skeleton_l2_error(solution, harmonic), 1e-10)

    def test_bilinear_elements(self):
        mesh = build_graded_mesh('d', 1, 0.5)
        solution = fem_assemble_solve(mesh, [1] * mesh.n_cells, lambda x: x[:, 0] * x[:, 1] + x[:, 0])
        grad = lambda x: np.column_stack([x[:, 1] + 1.0, x[:, 0]])
        self.assertLess(solution.energy_error(grad), 1e-10)
        self.assertEqual(solution.system.n_dofs, len(mesh.vertices))

    def test_boundary_values_interpolate_at_gll_nodes(self):
        mesh = build_graded_mesh('d', 1, 0.5)
        system = fem_assemble(mesh, [3] * mesh.n_cells)
        g = lambda x: np.exp(x[:, 0]) * np.cos(2.0 * x[:, 1])
        solution = FemSolution(system=system, values=fem_boundary_values(system, g))
        for e in mesh.boundary_edges():
            a, b = (mesh.vertices[v] for v in mesh.edges[e].vertices)
            s = gauss_lobatto_1d(system.edge_degrees[e]).points
            np.testing.assert_allclose(solution.edge_trace(e, s), g(a + np.outer((s + 1.0) / 2.0, b - a)),
                                       atol=1e-12)

    def test_rejects_polygons(self):
        mesh = build_graded_mesh('a', 2, 0.5)
        with self.assertRaises(InvalidParameter):
            fem_assemble(mesh, [2] * mesh.n_cells)


if __name__ == '__main__':
    unittest.main()
