"""Tests for quadrature rules and polynomial bases."""
import math
import os
import sys
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial.legendre import legval

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from hp_vem.errors import InvalidParameter
from hp_vem.mesh import CellGeometry
from hp_vem.polyquad import (basis_size, default_basis, dubiner_basis, gauss_jacobi_1d, gauss_lobatto_1d,
                             graded_fan_rule, lagrange_matrix, legendre_eval, monomial_exponents,
                             polygon_rule, scaled_monomials, triangle_rule)

UNIT_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
CORNER_HEXAGON = [[0.0, 0.0], [0.0, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [-0.5, 0.0]]


class TestGaussLobatto(unittest.TestCase):

    def test_two_points(self):
        rule = gauss_lobatto_1d(1)
        np.testing.assert_allclose(rule.points, [-1.0, 1.0])
        np.testing.assert_allclose(rule.weights, [1.0, 1.0])

    def test_symmetric_nodes_and_unit_weight_sum(self):
        rule = gauss_lobatto_1d(7)
        np.testing.assert_allclose(rule.points, -rule.points[::-1], atol=1e-15)
        self.assertAlmostEqual(rule.weights.sum(), 2.0, places=14)
        self.assertTrue(np.all(np.diff(rule.points) > 0))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=1, max_value=20), st.data())
    def test_exact_up_to_degree_2p_minus_1(self, p, data):
        k = data.draw(st.integers(min_value=0, max_value=2 * p - 1))
        rule = gauss_lobatto_1d(p)
        expected = 0.0 if k % 2 else 2.0 / (k + 1)
        self.assertAlmostEqual(rule.integrate(rule.points ** k), expected, places=12)

    def test_rejects_degree_zero(self):
        with self.assertRaises(InvalidParameter):
            gauss_lobatto_1d(0)


class TestOneDimensional(unittest.TestCase):

    def test_legendre_matches_numpy(self):
        x = np.linspace(-1.0, 1.0, 17)
        for k in range(9):
            values, _ = legendre_eval(k, x)
            coeffs = np.zeros(k + 1)
            coeffs[k] = 1.0
            np.testing.assert_allclose(values, legval(x, coeffs), atol=1e-13)

    def test_legendre_derivative_at_one(self):
        for k in range(1, 10):
            _, d = legendre_eval(k, np.array([1.0]))
            self.assertAlmostEqual(d[0], k * (k + 1) / 2.0, places=10)

    def test_jacobi_weight_sum(self):
        rule = gauss_jacobi_1d(5, 1.0, 1.0)
        self.assertAlmostEqual(rule.weights.sum(), 4.0 / 3.0, places=13)

    def test_lagrange_identity_at_nodes(self):
        nodes = gauss_lobatto_1d(6).points
        np.testing.assert_allclose(lagrange_matrix(nodes, nodes), np.eye(7), atol=1e-14)

    def test_lagrange_reproduces_polynomials(self):
        nodes = gauss_lobatto_1d(6).points
        x = np.linspace(-1.0, 1.0, 23)
        f = lambda t: t ** 6 - 3.0 * t ** 2 + t
        np.testing.assert_allclose(lagrange_matrix(nodes, x) @ f(nodes), f(x), atol=1e-12)


class TestTriangleAndPolygonRules(unittest.TestCase):

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=16), st.data())
    def test_triangle_rule_exactness(self, order, data):
        a = data.draw(st.integers(min_value=0, max_value=order))
        b = data.draw(st.integers(min_value=0, max_value=order - a))
        rule = triangle_rule(order)
        x, y = rule.points[:, 0], rule.points[:, 1]
        expected = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
        self.assertAlmostEqual(rule.integrate(x ** a * y ** b), expected, places=13)

    def test_polygon_rule_square_fan_and_ear_clip(self):
        coords = np.array(UNIT_SQUARE)
        for center in ([0.5, 0.5], None):
            rule = polygon_rule(coords, 6, center)
            x, y = rule.points[:, 0], rule.points[:, 1]
            self.assertAlmostEqual(rule.weights.sum(), 1.0, places=14)
            self.assertAlmostEqual(rule.integrate(x ** 3 * y ** 3), 1.0 / 16.0, places=13)

    def test_polygon_rule_nonconvex(self):
        coords = np.array(CORNER_HEXAGON)
        rule = polygon_rule(coords, 4, None)
        self.assertAlmostEqual(rule.weights.sum(), 0.75, places=14)
        # the hexagon is the square [-1/2, 1/2]^2 without its lower left quarter
        x = rule.points[:, 0]
        self.assertAlmostEqual(rule.integrate(x ** 2), 1.0 / 12.0 - 1.0 / 48.0, places=13)

    def test_graded_fan_rule_is_exact(self):
        coords = np.array(UNIT_SQUARE)
        rule = graded_fan_rule(coords, 0, 4, levels=3)
        x, y = rule.points[:, 0], rule.points[:, 1]
        self.assertAlmostEqual(rule.weights.sum(), 1.0, places=14)
        self.assertAlmostEqual(rule.integrate(x ** 2 * y), 1.0 / 6.0, places=13)

    def test_graded_fan_rule_resolves_corner_singularity(self):
        coords = np.array(UNIT_SQUARE)
        f = lambda pts: np.hypot(pts[:, 0], pts[:, 1]) ** (-2.0 / 3.0)

        def integral(levels):
            rule = graded_fan_rule(coords, 0, 8, levels)
            return rule.integrate(f(rule.points))

        coarse, fine, exact = integral(0), integral(6), integral(12)
        self.assertLess(abs(fine - exact), abs(coarse - exact))


class TestBases(unittest.TestCase):

    def test_monomial_order(self):
        self.assertEqual([tuple(e) for e in monomial_exponents(2)],
                         [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)])
        self.assertEqual(basis_size(4), 15)
        self.assertEqual(basis_size(-1), 0)

    def test_scaled_monomial_values(self):
        geom = CellGeometry.from_coords(UNIT_SQUARE)
        basis = scaled_monomials(geom, 2)
        values = basis.values(np.array([[1.0, 0.5]]))[0]
        h = math.sqrt(2.0)
        np.testing.assert_allclose(values, [1.0, 0.5 / h, 0.0, 0.25 / 2.0, 0.0, 0.0], atol=1e-15)

    def test_laplacian_in_lower_basis(self):
        geom = CellGeometry.from_coords(UNIT_SQUARE)
        basis = scaled_monomials(geom, 3)
        target = scaled_monomials(geom, 1)
        lap = basis.laplacian_in(target)
        h2 = 2.0
        self.assertEqual(lap.shape, (3, 10))
        self.assertAlmostEqual(lap[0, 3], 2.0 / h2)
        self.assertAlmostEqual(lap[0, 5], 2.0 / h2)
        self.assertAlmostEqual(lap[1, 6], 6.0 / h2)
        self.assertAlmostEqual(lap[0, 4], 0.0)

    def test_orthonormal_basis_has_identity_mass(self):
        geom = CellGeometry.from_coords(CORNER_HEXAGON)
        basis = default_basis(geom, 6)
        rule = polygon_rule(geom.coords, 12, None)
        values = basis.values(rule.points)
        mass = values.T @ (rule.weights[:, None] * values)
        np.testing.assert_allclose(mass, np.eye(basis.size), atol=1e-10)
        self.assertLess(np.ptp(values[:, 0]), 1e-10)

    def test_low_degree_basis_stays_monomial(self):
        geom = CellGeometry.from_coords(UNIT_SQUARE)
        basis = default_basis(geom, 3)
        np.testing.assert_array_equal(basis.change, np.eye(10))

    def test_dubiner_orthonormal(self):
        basis = dubiner_basis(7)
        rule = triangle_rule(14)
        values = basis.values(rule.points)
        mass = values.T @ (rule.weights[:, None] * values)
        np.testing.assert_allclose(mass, np.eye(basis.size), atol=1e-11)

    def test_dubiner_gradients_match_finite_differences(self):
        basis = dubiner_basis(4, orthonormal=False)
        point = np.array([[0.2, 0.3]])
        eps = 1e-6
        grads = basis.gradients(point)[0]
        for axis in range(2):
            shift = np.zeros((1, 2))
            shift[0, axis] = eps
            fd = (basis.values(point + shift) - basis.values(point - shift))[0] / (2 * eps)
            np.testing.assert_allclose(grads[:, axis], fd, atol=1e-6)


if __name__ == '__main__':
    unittest.main()
