"""Tests for mesh XML serialization and validation.

Invalid documents are data-driven: fixtures/mesh_io/cases.json lists each
file with the error field and reason the parser must report.
"""
import json
import os
import shutil
import sys
import tempfile
import unittest
from unittest.mock import patch

from deepdiff import DeepDiff
from lxml import etree

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from hp_vem.errors import ParseError
from hp_vem.mesh import build_graded_mesh
from hp_vem.mesh_io import mesh_to_xml, parse_mesh, read_mesh, write_mesh

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures', 'mesh_io')


def read_fixture(name):
    with open(os.path.join(FIXTURES, name), 'rb') as f:
        return f.read()


class TestParseMesh(unittest.TestCase):

    def test_three_squares(self):
        mesh = parse_mesh(read_fixture('three_squares.xml'), 'three_squares.xml')
        self.assertEqual(mesh.n_cells, 3)
        self.assertEqual(mesh.family, 'GradedSquares')
        self.assertEqual(mesh.sigma, 0.5)
        self.assertEqual(mesh.n, 0)
        self.assertEqual([c.vertex_ids for c in mesh.cells], [(3, 6, 7, 4), (0, 3, 4, 1), (2, 5, 6, 3)])
        self.assertEqual(len(mesh.edges), 10)
        self.assertEqual(len(mesh.boundary_edges()), 8)

    def test_matches_generated_mesh(self):
        parsed = parse_mesh(read_fixture('three_squares.xml'))
        built = build_graded_mesh('a', 0, 0.5)
        diff = DeepDiff(built.to_dict(), parsed.to_dict(), math_epsilon=1e-15)
        self.assertFalse(diff, diff)

    def test_invalid_documents(self):
        with open(os.path.join(FIXTURES, 'cases.json'), 'r', encoding='utf-8') as f:
            cases = json.load(f)
        for case in cases:
            with self.subTest(file=case['file']):
                with self.assertRaises(ParseError) as ctx:
                    parse_mesh(read_fixture(case['file']), case['file'])
                if case['field'] is not None:
                    self.assertEqual(ctx.exception.field, case['field'])
                self.assertEqual(ctx.exception.reason, case['reason'])

    def test_malformed_xml_reports_line(self):
        with self.assertRaises(ParseError) as ctx:
            parse_mesh(b"<?xml version='1.0'?>\n<hpvemMesh>\n<vertices>\n</hpvemMesh>")
        self.assertIsNotNone(ctx.exception.line)


class TestWriteMesh(unittest.TestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def test_serialization_is_deterministic_and_carries_hash(self):
        mesh = build_graded_mesh('c', 3, 0.5)
        first = mesh_to_xml(mesh, config_hash='0123456789abcdef')
        self.assertEqual(first, mesh_to_xml(mesh, config_hash='0123456789abcdef'))
        root = etree.fromstring(first)
        comments = [node.text for node in root if isinstance(node, etree._Comment)]
        self.assertEqual(comments, [' config_hash=0123456789abcdef '])

    def test_write_then_read(self):
        mesh = build_graded_mesh('b', 3, 0.5)
        path = os.path.join(self.tmpdir, 'out', 'mesh_b.xml')
        write_mesh(mesh, path)
        self.assertTrue(os.path.isfile(path))
        diff = DeepDiff(mesh.to_dict(), read_mesh(path).to_dict())
        self.assertFalse(diff, diff)

    @patch('hp_vem.mesh_io.write_bytes')
    def test_write_goes_through_filesystem_layer(self, mock_write):
        mesh = build_graded_mesh('a', 1, 0.5)
        write_mesh(mesh, 's3://bucket/prefix/mesh.xml', config_hash='abc')
        mock_write.assert_called_once()
        target, data = mock_write.call_args[0]
        self.assertEqual(target, 's3://bucket/prefix/mesh.xml')
        self.assertIn(b'config_hash=abc', data)


if __name__ == '__main__':
    unittest.main()
