"""Tests for the graded mesh families, polygon geometry and mesh diagnostics.

Family expectations are data-driven from fixtures/mesh/families.json.
"""
import json
import math
import os
import sys
import unittest
from collections import Counter

import numpy as np
from deepdiff import DeepDiff
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from hp_vem.errors import InvalidParameter, NonConforming, NotStarShaped
from hp_vem.mesh import (FAMILIES, build_graded_mesh, chebyshev_center, check_origin_star, compute_layers,
                         diagnose, ear_clip, fan_triangles, is_convex, largest_angle, mesh_from_polygons,
                         resolve_family, signed_area)

CORNER_HEXAGON = np.array([[0.0, 0.0], [0.0, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [-0.5, 0.0]])


def mesh_summary(mesh):
    layers = Counter(c.layer for c in mesh.cells)
    sizes = Counter(len(c.vertex_ids) for c in mesh.cells)
    return {
        "family": mesh.family,
        "n_cells": mesh.n_cells,
        "cells_per_layer": [layers[j] for j in range(mesh.n_layers)],
        "polygon_sizes": {str(k): v for k, v in sorted(sizes.items())},
    }


class TestMeshFamiliesFromFixtures(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        path = os.path.join(os.path.dirname(__file__), 'fixtures', 'mesh', 'families.json')
        with open(path, 'r', encoding='utf-8') as f:
            cls.test_cases = json.load(f)

    def test_fixtures_loaded(self):
        self.assertGreater(len(self.test_cases), 0, "No mesh fixtures found")

    def test_family_structure(self):
        for case in self.test_cases:
            with self.subTest(case=case['name']):
                mesh = build_graded_mesh(case['family'], case['n'], case['sigma'])
                diff = DeepDiff(case['expected'], mesh_summary(mesh))
                self.assertFalse(diff, f"{case['name']}: {diff}")


class TestMeshInvariants(unittest.TestCase):

    def test_area_and_boundary_length(self):
        for family in FAMILIES:
            for n in range(4):
                with self.subTest(family=family, n=n):
                    mesh = build_graded_mesh(family, n, 0.5)
                    self.assertAlmostEqual(mesh.total_area(), 3.0, places=12)
                    length = sum(np.hypot(*(mesh.vertices[mesh.edges[e].vertices[1]]
                                            - mesh.vertices[mesh.edges[e].vertices[0]]))
                                 for e in mesh.boundary_edges())
                    self.assertAlmostEqual(length, 8.0, places=12)

    def test_cells_counter_clockwise_and_edges_shared_at_most_twice(self):
        mesh = build_graded_mesh("c", 3, math.sqrt(2.0) - 1.0)
        for c in range(mesh.n_cells):
            self.assertGreater(signed_area(mesh.cell_coords(c)), 0.0)
            self.assertEqual(mesh.cells[c].vertex_ids[0], min(mesh.cells[c].vertex_ids))
        self.assertTrue(all(len(e.cells) in (1, 2) for e in mesh.edges))
        self.assertTrue(all(e.vertices[0] < e.vertices[1] for e in mesh.edges))

    def test_vertices_sorted_and_unique(self):
        mesh = build_graded_mesh("a", 3, 0.5)
        keys = [tuple(v) for v in mesh.vertices]
        self.assertEqual(keys, sorted(keys))
        self.assertEqual(len(set(keys)), len(keys))

    @settings(max_examples=25, deadline=None)
    @given(st.sampled_from(FAMILIES), st.integers(min_value=0, max_value=4),
           st.floats(min_value=0.1, max_value=0.9))
    def test_layers_are_recomputed_identically(self, family, n, sigma):
        mesh = build_graded_mesh(family, n, sigma)
        self.assertEqual(compute_layers(mesh), [c.layer for c in mesh.cells])
        self.assertEqual(mesh.n_layers, n + 1)

    def test_invalid_parameters(self):
        with self.assertRaises(InvalidParameter):
            build_graded_mesh("a", -1, 0.5)
        with self.assertRaises(InvalidParameter):
            build_graded_mesh("a", 2, 0.99)
        with self.assertRaises(InvalidParameter):
            resolve_family("e")

    def test_family_aliases(self):
        self.assertEqual(resolve_family("b"), "LayerDecagons")
        self.assertEqual(resolve_family("decagonscut"), "DecagonsCut")

    def test_edge_shared_by_three_cells(self):
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.5, 2.0]])
        with self.assertRaises(NonConforming):
            mesh_from_polygons(vertices, [[0, 1, 2], [0, 3, 1], [0, 1, 4]], "GradedSquares", 0.5, 0)


class TestPolygonGeometry(unittest.TestCase):

    def test_nonconvex_hexagon(self):
        self.assertFalse(is_convex(CORNER_HEXAGON))
        self.assertAlmostEqual(largest_angle(CORNER_HEXAGON), 1.5 * math.pi)
        self.assertAlmostEqual(largest_angle(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)),
                               0.5 * math.pi)

    def test_fan_from_vertex_drops_degenerate_triangles(self):
        triangles = fan_triangles(CORNER_HEXAGON, [0.0, 0.0])
        self.assertEqual(len(triangles), 4)
        self.assertAlmostEqual(sum(abs(signed_area(t)) for t in triangles), 0.75)

    def test_fan_outside_kernel(self):
        with self.assertRaises(NotStarShaped):
            fan_triangles(CORNER_HEXAGON, [-0.4, 0.05])

    def test_ear_clip(self):
        triangles = ear_clip(CORNER_HEXAGON)
        self.assertEqual(len(triangles), 4)
        self.assertAlmostEqual(sum(signed_area(t) for t in triangles), 0.75)

    def test_chebyshev_center_of_square(self):
        center, radius = chebyshev_center(np.array([[0, 0], [2, 0], [2, 2], [0, 2]], dtype=float))
        np.testing.assert_allclose(center, [1.0, 1.0], atol=1e-9)
        self.assertAlmostEqual(radius, 1.0, places=9)


class TestDiagnostics(unittest.TestCase):

    def test_graded_squares(self):
        diagnostics = diagnose(build_graded_mesh("a", 3, 0.5))
        self.assertTrue(diagnostics.conforming)
        self.assertTrue(diagnostics.star_shaped)
        self.assertTrue(diagnostics.d1_ok)
        self.assertTrue(diagnostics.l0_star_about_origin)
        self.assertAlmostEqual(diagnostics.min_star_radius_ratio, 1.0 / math.sqrt(2.0), places=6)
        self.assertEqual(diagnostics.max_edges_per_cell, 5)
        self.assertLess(diagnostics.area_error, 1e-12)

    def test_layer_decagons_are_not_star_shaped(self):
        mesh = build_graded_mesh("b", 3, 0.5)
        diagnostics = diagnose(mesh)
        self.assertTrue(diagnostics.conforming)
        self.assertFalse(diagnostics.star_shaped)
        self.assertFalse(diagnostics.d1_ok)
        self.assertTrue(check_origin_star(mesh))
        self.assertEqual(diagnostics.max_cells_per_layer, 1)


if __name__ == '__main__':
    unittest.main()
