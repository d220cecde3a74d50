"""Reading and writing mesh files (XML validated against a RelaxNG schema)."""
import logging
from functools import lru_cache
from importlib import resources

import numpy as np
from lxml import etree

from .errors import NonConforming, ParseError
from .fs_utils import read_bytes, write_bytes
from .mesh import _layers_from_ids, mesh_from_polygons

logger = logging.getLogger(__name__)

MESH_FORMAT_VERSION = "1"
DEDUP_TOLERANCE = 1e-12


@lru_cache(maxsize=1)
def _mesh_schema():
    with resources.path('hp_vem.schemas', 'hp_vem_mesh.rng') as schema_path:
        return etree.RelaxNG(file=str(schema_path))


def mesh_to_xml(mesh, config_hash=None):
    """
    Serialize a mesh. Output is deterministic: vertices and cells keep their
    mesh order and floats are written with repr precision.

    Returns:
        bytes: UTF-8 XML document
    """
    root = etree.Element("hpvemMesh", version=MESH_FORMAT_VERSION, family=mesh.family,
                         sigma=repr(float(mesh.sigma)), n=str(int(mesh.n)))
    if config_hash is not None:
        root.append(etree.Comment(f" config_hash={config_hash} "))
    vertices = etree.SubElement(root, "vertices")
    for x, y in mesh.vertices:
        etree.SubElement(vertices, "v", x=repr(float(x)), y=repr(float(y)))
    cells = etree.SubElement(root, "cells")
    for cell in mesh.cells:
        element = etree.SubElement(cells, "cell", layer=str(cell.layer))
        element.text = " ".join(str(v) for v in cell.vertex_ids)
    return etree.tostring(root, xml_declaration=True, encoding="UTF-8", pretty_print=True)


def parse_mesh(data, source="<mesh>"):
    """
    Parse and validate a mesh document.

    Args:
        data (bytes): XML document
        source (str): name used in error messages

    Returns:
        PolygonalMesh

    Raises:
        ParseError: with line/field context; reason "NonConforming" when the
            cells do not form a conforming mesh
    """
    parser = etree.XMLParser(remove_blank_text=True, remove_comments=True, remove_pis=True)
    try:
        root = etree.fromstring(data, parser)
    except etree.XMLSyntaxError as e:
        raise ParseError(f"{source} is not well-formed XML: {e.msg}", line=e.lineno) from e

    schema = _mesh_schema()
    if not schema.validate(root):
        error = schema.error_log.last_error
        raise ParseError(f"{source} does not match the mesh schema: {error.message}",
                         line=error.line, field=error.path)

    vertices = np.array([[float(v.get("x")), float(v.get("y"))]
                         for v in root.find("vertices")], dtype=float)
    if not np.all(np.isfinite(vertices)):
        raise ParseError(f"{source} has non-finite coordinates", field="vertices")
    order = np.lexsort((vertices[:, 1], vertices[:, 0]))
    gaps = np.max(np.abs(np.diff(vertices[order], axis=0)), axis=1) if len(order) > 1 else []
    if np.any(np.asarray(gaps) <= DEDUP_TOLERANCE):
        raise ParseError(f"{source} has duplicate vertices", field="vertices")

    loops, layers = [], []
    for cell in root.find("cells"):
        ids = [int(t) for t in cell.text.split()]
        if len(ids) < 3 or len(set(ids)) != len(ids):
            raise ParseError(f"{source} has a degenerate cell", line=cell.sourceline, field="cell")
        if max(ids) >= len(vertices):
            raise ParseError(f"{source} cell refers to vertex {max(ids)} of {len(vertices)}",
                             line=cell.sourceline, field="cell")
        loops.append(ids)
        layers.append(int(cell.get("layer")))

    try:
        mesh = mesh_from_polygons(vertices, loops, root.get("family"), float(root.get("sigma")),
                                  int(root.get("n")), layers=layers)
        computed = _layers_from_ids(mesh.vertices, [c.vertex_ids for c in mesh.cells])
    except NonConforming as e:
        raise ParseError(f"{source}: {e}", field="cells", reason="NonConforming") from e
    for element, stored, expected in zip(root.find("cells"), layers, computed):
        if stored != expected:
            raise ParseError(f"{source} cell has layer {stored}, expected {expected}",
                             line=element.sourceline, field="layer")
    return mesh


def write_mesh(mesh, path_or_url, config_hash=None):
    write_bytes(path_or_url, mesh_to_xml(mesh, config_hash))
    logger.info("wrote %s mesh with %d cells to %s", mesh.family, mesh.n_cells, path_or_url)


def read_mesh(path_or_url):
    return parse_mesh(read_bytes(path_or_url), source=path_or_url)
