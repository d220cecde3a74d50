"""Tests for the benchmark, error measures, fits and CSV output."""
import json
import math
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from hp_vem.analysis import (CONVERGENCE_COLUMNS, TABLE_STAB_KIND, StudyRecord, benchmark_grad, benchmark_u,
                             convergence_study, decay_exponent, exact_seminorm, fit_exponential, fit_power,
                             format_float, stability_csv, stability_shape, stability_table, study_csv)
from hp_vem.assemble import Uniform
from hp_vem.errors import HpVemError
from hp_vem.mesh import build_graded_mesh
from hp_vem.oracle import SpectrumReport

STABILITY_FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures', 'stability')


def record(n, n_dofs, err, family="GradedSquares"):
    return StudyRecord(family=family, sigma=0.5, rule="uniform:2", n=n, n_dofs=n_dofs,
                       err_energy=err, err_skeleton=err / 10.0, seconds=0.25)


class TestBenchmark(unittest.TestCase):

    def test_vanishes_on_reentrant_edges(self):
        points = np.array([[-0.5, 0.0], [-1.0, 0.0], [0.0, -0.3], [0.0, -1.0], [0.0, 0.0]])
        np.testing.assert_allclose(benchmark_u(points), 0.0, atol=1e-15)

    def test_positive_inside(self):
        points = np.array([[0.5, 0.5], [0.5, -0.5], [-0.5, 0.5]])
        self.assertTrue(np.all(benchmark_u(points) > 0))

    def test_harmonic(self):
        x0 = np.array([0.3, 0.4])
        eps = 1e-3
        shifts = np.array([[eps, 0.0], [-eps, 0.0], [0.0, eps], [0.0, -eps]])
        laplacian = (benchmark_u(x0 + shifts).sum() - 4.0 * benchmark_u(x0[None, :])[0]) / eps ** 2
        self.assertAlmostEqual(laplacian, 0.0, places=4)

    def test_gradient_matches_finite_differences(self):
        points = np.array([[0.3, 0.4], [-0.6, 0.2], [0.7, -0.1]])
        eps = 1e-6
        for axis in range(2):
            shift = np.zeros(2)
            shift[axis] = eps
            fd = (benchmark_u(points + shift) - benchmark_u(points - shift)) / (2 * eps)
            np.testing.assert_allclose(benchmark_grad(points)[:, axis], fd, atol=1e-7)
        np.testing.assert_array_equal(benchmark_grad(np.zeros((1, 2))), [[0.0, 0.0]])

    def test_exact_seminorm_of_polynomial(self):
        mesh = build_graded_mesh('a', 2, 0.5)
        grad = lambda x: np.column_stack([2.0 * x[:, 0], -2.0 * x[:, 1]])
        self.assertAlmostEqual(exact_seminorm(mesh, grad), math.sqrt(8.0), places=12)


class TestFits(unittest.TestCase):

    def test_power_fit(self):
        xs = np.arange(1, 8)
        fit = fit_power(xs, 3.0 * xs ** 2.0)
        self.assertAlmostEqual(fit.slope, 2.0)
        self.assertAlmostEqual(math.exp(fit.intercept), 3.0)
        self.assertAlmostEqual(fit.r_squared, 1.0)
        self.assertIsNone(fit_power([1.0], [2.0]))

    def test_exponential_fit_skips_small_and_failed_rows(self):
        rows = [record(n, n_dofs, 10.0 ** (-0.5 * n_dofs ** (1.0 / 3.0)))
                for n, n_dofs in ((2, 27), (3, 64), (4, 125), (5, 216))]
        rows.append(record(1, 8, 1.0))
        rows.append(record(6, 343, float("nan")))
        fit = fit_exponential(rows)
        self.assertAlmostEqual(fit.slope, -0.5)
        self.assertAlmostEqual(fit.rate, 0.5 * math.log(10.0))
        self.assertIsNone(fit_exponential(rows[:1]))

    def test_decay_exponent(self):
        reports = [SpectrumReport(shape="square", p=p, lambda_min=p ** -0.5, lambda_max=1.0,
                                  oracle_level=4, converged=True) for p in (2, 4, 8)]
        self.assertAlmostEqual(decay_exponent(reports), -0.5)


class TestCsv(unittest.TestCase):

    def test_study_csv(self):
        text = study_csv([record(2, 27, 0.125)], '0123456789abcdef')
        lines = text.splitlines()
        self.assertEqual(lines[0], '# config_hash=0123456789abcdef')
        self.assertEqual(lines[1], ','.join(CONVERGENCE_COLUMNS))
        self.assertEqual(lines[2], 'GradedSquares,0.5,uniform:2,2,27,0.125,0.0125,')
        self.assertTrue(study_csv([record(2, 27, 0.125)], 'x', timings=True).endswith(',0.25\n'))

    def test_stability_csv(self):
        report = SpectrumReport(shape="square", p=2, lambda_min=0.78559, lambda_max=1.0,
                                oracle_level=4, converged=False)
        lines = stability_csv([report], 'abc').splitlines()
        self.assertEqual(lines[1], 'shape,p,lambda_min,lambda_max,oracle_level,oracle_change,converged')
        self.assertEqual(lines[2], 'square,2,0.78559,1.0,4,0.0,false')
        report.oracle_change = 0.0625
        self.assertEqual(stability_csv([report], 'abc').splitlines()[2], 'square,2,0.78559,1.0,4,0.0625,false')

    def test_format_float(self):
        self.assertEqual(format_float(float("nan")), "nan")
        self.assertEqual(format_float(None), "nan")
        self.assertEqual(format_float(0.1), "0.1")
        self.assertEqual(float(format_float(1.0 / 3.0)), 1.0 / 3.0)


class TestStudies(unittest.TestCase):

    def test_stability_shapes(self):
        self.assertAlmostEqual(stability_shape("square").area, 1.0)
        self.assertEqual(stability_shape("decagon").n_edges, 10)
        self.assertIsNone(stability_shape("decagon").star_center)
        self.assertEqual(stability_shape("corner-hexagon").n_edges, 6)
        with self.assertRaises(HpVemError):
            stability_shape("circle")

    def test_square_reference_row(self):
        with open(os.path.join(STABILITY_FIXTURES, 'table.json'), 'r', encoding='utf-8') as f:
            table = json.load(f)
        lambda_min, lambda_max = table['rows'][0]['square']
        tolerance = table['tolerance']['square']
        report, = stability_table('square', [2])
        self.assertEqual(report.p, 2)
        self.assertEqual(report.stab_kind, TABLE_STAB_KIND.value)
        self.assertEqual(report.stab_h, 'max-edge')
        self.assertTrue(report.converged)
        self.assertLess(abs(report.lambda_min - lambda_min), tolerance * lambda_min)
        self.assertLess(abs(report.lambda_max - lambda_max), tolerance * lambda_max)

    def test_small_convergence_study(self):
        result = convergence_study('a', 0.5, Uniform(2), 1, 2)
        self.assertEqual([r.n for r in result.records], [1, 2])
        for r in result.records:
            self.assertEqual(r.message, "")
            self.assertEqual(r.rule, "uniform:2")
            self.assertTrue(0.0 < r.err_energy < 1.0)
            self.assertTrue(0.0 < r.err_skeleton < 1.0)
        self.assertIn("GradedSquares", result.fits)


if __name__ == '__main__':
    unittest.main()
