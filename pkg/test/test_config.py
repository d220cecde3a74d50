"""Tests for config files, flag overrides and the config hash."""
import math
import os
import sys
import unittest
from unittest.mock import patch

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from hp_vem.assemble import Layered, Uniform, UniformLayers
from hp_vem.config import (build_config, config_hash, default_jobs, parse_degree_rule, parse_sigma,
                           read_config_file)
from hp_vem.errors import ConfigError

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures', 'config')


class TestParsers(unittest.TestCase):

    def test_sigma_tokens(self):
        self.assertEqual(parse_sigma('1/2'), 0.5)
        self.assertAlmostEqual(parse_sigma('sqrt2-1'), math.sqrt(2.0) - 1.0)
        self.assertAlmostEqual(parse_sigma('(sqrt2-1)^2'), 3.0 - 2.0 * math.sqrt(2.0))
        self.assertEqual(parse_sigma(' 0.3 '), 0.3)

    def test_invalid_sigma(self):
        for token in ('0', '1', '1.5', 'half', '-0.2'):
            with self.subTest(token=token):
                with self.assertRaises(ConfigError):
                    parse_sigma(token)

    def test_degree_rules(self):
        self.assertEqual(parse_degree_rule('uniform:4'), Uniform(4))
        self.assertEqual(parse_degree_rule('layered:1.5'), Layered(1.5))
        self.assertEqual(parse_degree_rule('uniform:n+1'), UniformLayers())
        self.assertEqual(parse_degree_rule('Uniform:3'), Uniform(3))

    def test_invalid_degree_rules(self):
        for token in ('uniform:1', 'layered:0', 'layered:-1', 'cubic', 'uniform:x', 'layered'):
            with self.subTest(token=token):
                with self.assertRaises(ConfigError):
                    parse_degree_rule(token)

    def test_default_jobs(self):
        with patch.dict(os.environ, {'HP_VEM_JOBS': '3'}):
            self.assertEqual(default_jobs(), 3)
        with patch.dict(os.environ, {'HP_VEM_JOBS': 'many'}):
            with self.assertRaises(ConfigError):
                default_jobs()


class TestConfigFiles(unittest.TestCase):

    def test_read(self):
        values = read_config_file(os.path.join(FIXTURES, 'convergence.conf'))
        self.assertEqual(values, {'family': 'b', 'sigma': 'sqrt2-1', 'degrees': 'layered:1.5',
                                  'n_min': '1', 'n_max': '4', 'stab_kind': 'dofi', 'timings': 'yes'})

    def test_bad_files(self):
        for name in ('unknown_key.conf', 'missing_equals.conf'):
            with self.subTest(file=name):
                with self.assertRaises(ConfigError) as ctx:
                    read_config_file(os.path.join(FIXTURES, name))
                self.assertIn(':2:', str(ctx.exception))

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            read_config_file(os.path.join(FIXTURES, 'no_such_study.conf'))

    def test_build_from_file(self):
        values = read_config_file(os.path.join(FIXTURES, 'convergence.conf'))
        config = build_config('convergence', values)
        self.assertEqual(config.family, 'LayerDecagons')
        self.assertAlmostEqual(config.sigma, math.sqrt(2.0) - 1.0)
        self.assertEqual(config.degrees, 'layered:1.5')
        self.assertEqual(config.degree_rule, Layered(1.5))
        self.assertEqual(config.stab_kind, 'DofiDofi')
        self.assertEqual((config.n_min, config.n_max), (1, 4))
        self.assertTrue(config.timings)
        self.assertEqual(config.out, 'convergence.csv')

    def test_flags_override_file(self):
        values = read_config_file(os.path.join(FIXTURES, 'convergence.conf'))
        config = build_config('convergence', values, {'sigma': '0.25', 'family': None, 'out': 'x.csv'})
        self.assertEqual(config.sigma, 0.25)
        self.assertEqual(config.family, 'LayerDecagons')
        self.assertEqual(config.out, 'x.csv')

    def test_families_list(self):
        config = build_config('compare-fem', overrides={'families': 'a, c'})
        self.assertEqual(config.families, ['GradedSquares', 'DecagonsCut'])
        self.assertEqual(config.out, 'compare_fem.csv')

    def test_stabilization_defaults(self):
        table = build_config('stability-table')
        self.assertEqual((table.stab_kind, table.stab_h), ('GllBoundaryPlusMoments', 'max-edge'))
        solve = build_config('solve')
        self.assertEqual((solve.stab_kind, solve.stab_h), ('BoundaryPlusMoments', 'diameter'))
        explicit = build_config('stability-table', overrides={'stab_kind': 'dofi', 'stab_h': 'Diameter'})
        self.assertEqual((explicit.stab_kind, explicit.stab_h), ('DofiDofi', 'diameter'))

    def test_invalid_combinations(self):
        cases = [
            ('convergence', {'n_min': '5', 'n_max': '2'}),
            ('mesh', {'n': '-1'}),
            ('mesh', {'family': 'e'}),
            ('stability-table', {'p_min': '0'}),
            ('stability-table', {'shape': 'circle'}),
            ('inverse-lab', {'test': 'hminus1', 'p_max': '13'}),
            ('inverse-lab', {'alpha': '2', 'beta': '1'}),
            ('solve', {'stab_kind': 'none'}),
            ('solve', {'stab_h': 'area'}),
            ('solve', {'jobs': '0'}),
            ('solve', {'n': 'two'}),
        ]
        for command, overrides in cases:
            with self.subTest(command=command, overrides=overrides):
                with self.assertRaises(ConfigError):
                    build_config(command, overrides=overrides)


class TestConfigHash(unittest.TestCase):

    def test_stable_and_sensitive(self):
        base = build_config('solve', overrides={'family': 'a', 'n': 3})
        same = build_config('solve', overrides={'family': 'GradedSquares', 'n': '3', 'jobs': 7,
                                                 'out': 'elsewhere.json'})
        other = build_config('solve', overrides={'family': 'a', 'n': 4})
        self.assertEqual(len(config_hash(base)), 16)
        self.assertEqual(config_hash(base), config_hash(same))
        self.assertNotEqual(config_hash(base), config_hash(other))


if __name__ == '__main__':
    unittest.main()
