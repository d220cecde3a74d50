"""Geometrically graded polygonal meshes of the L-shaped domain.

Omega = [-1, 1]^2 minus [-1, 0]^2, with the reentrant corner at the origin.
Every family is built in the first quadrant and reflected into the second
(x -> -x) and fourth (y -> -y) quadrants.
"""
import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import pdist

from .errors import InvalidParameter, NonConforming, NotStarShaped

logger = logging.getLogger(__name__)

FAMILIES = ("GradedSquares", "LayerDecagons", "DecagonsCut", "TensorQuadsFEM")
FAMILY_ALIASES = {
    "a": "GradedSquares",
    "b": "LayerDecagons",
    "c": "DecagonsCut",
    "d": "TensorQuadsFEM",
}
DOMAIN_AREA = 3.0

# quadrant maps (sx, sy); a single reflection flips orientation
_QUADRANTS = ((1.0, 1.0), (-1.0, 1.0), (1.0, -1.0))


def resolve_family(token):
    """Map a family letter or name to its canonical name."""
    if token in FAMILIES:
        return token
    if token in FAMILY_ALIASES:
        return FAMILY_ALIASES[token]
    for name in FAMILIES:
        if name.lower() == str(token).lower():
            return name
    raise InvalidParameter(f"unknown mesh family '{token}'")


@dataclass(frozen=True)
class PolygonCell:
    vertex_ids: tuple
    layer: int
    diameter: float
    star_center: tuple = None


@dataclass(frozen=True)
class Edge:
    vertices: tuple  # (low id, high id)
    cells: tuple


@dataclass(frozen=True, eq=False)
class CellGeometry:
    """Coordinates and derived quantities of one polygon."""
    cell_id: int
    coords: np.ndarray
    vertex_ids: tuple
    area: float
    centroid: np.ndarray
    diameter: float
    star_center: object = None

    @classmethod
    def from_coords(cls, coords, vertex_ids=None, cell_id=0, star_center="auto"):
        coords = np.asarray(coords, dtype=float)
        if signed_area(coords) < 0:
            coords = coords[::-1].copy()
        if vertex_ids is None:
            vertex_ids = tuple(range(len(coords)))
        if isinstance(star_center, str):
            star_center = find_star_center(coords)
        return cls(cell_id=cell_id, coords=coords, vertex_ids=tuple(vertex_ids),
                   area=signed_area(coords), centroid=polygon_centroid(coords),
                   diameter=polygon_diameter(coords), star_center=star_center)

    @property
    def n_edges(self):
        return len(self.coords)

    def edge(self, e):
        """Endpoints (a, b) of local edge e in counter-clockwise order."""
        return self.coords[e], self.coords[(e + 1) % len(self.coords)]

    def edge_length(self, e):
        a, b = self.edge(e)
        return float(np.hypot(*(b - a)))

    def outward_normal(self, e):
        a, b = self.edge(e)
        d = b - a
        return np.array([d[1], -d[0]]) / np.hypot(*d)

    @property
    def perimeter(self):
        return sum(self.edge_length(e) for e in range(self.n_edges))

    def scaled(self, factor):
        return CellGeometry.from_coords(self.coords * factor, self.vertex_ids, self.cell_id)


@dataclass(eq=False)
class PolygonalMesh:
    vertices: np.ndarray
    cells: list
    edges: list
    family: str
    sigma: float
    n: int
    edge_index: dict = field(default_factory=dict, repr=False)

    @property
    def n_layers(self):
        return 1 + max((c.layer for c in self.cells), default=-1)

    @property
    def n_cells(self):
        return len(self.cells)

    def cell_coords(self, cell_id):
        return self.vertices[list(self.cells[cell_id].vertex_ids)]

    def cell_geometry(self, cell_id):
        cell = self.cells[cell_id]
        coords = self.cell_coords(cell_id)
        center = None if cell.star_center is None else np.asarray(cell.star_center)
        return CellGeometry(cell_id=cell_id, coords=coords, vertex_ids=cell.vertex_ids,
                            area=signed_area(coords), centroid=polygon_centroid(coords),
                            diameter=cell.diameter, star_center=center)

    def cell_edges(self, cell_id):
        """Global edge indices of the cell, in counter-clockwise order."""
        ids = self.cells[cell_id].vertex_ids
        m = len(ids)
        return [self.edge_index[_edge_key(ids[k], ids[(k + 1) % m])] for k in range(m)]

    def boundary_edges(self):
        return [i for i, e in enumerate(self.edges) if len(e.cells) == 1]

    def boundary_vertices(self):
        ids = set()
        for i in self.boundary_edges():
            ids.update(self.edges[i].vertices)
        return sorted(ids)

    def cells_in_layer(self, layer):
        return [i for i, c in enumerate(self.cells) if c.layer == layer]

    def total_area(self):
        return sum(signed_area(self.cell_coords(i)) for i in range(self.n_cells))

    def to_dict(self):
        """Plain structure used for comparisons and serialization."""
        return {
            "family": self.family,
            "sigma": float(self.sigma),
            "n": int(self.n),
            "vertices": [[float(x), float(y)] for x, y in self.vertices],
            "cells": [{"vertex_ids": [int(v) for v in c.vertex_ids], "layer": int(c.layer)}
                      for c in self.cells],
        }


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


# --- polygon geometry -------------------------------------------------------

def signed_area(coords):
    x, y = coords[:, 0], coords[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(coords):
    x, y = coords[:, 0], coords[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def polygon_diameter(coords):
    return float(pdist(coords).max())


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def is_convex(coords, tol=1e-14):
    m = len(coords)
    scale = polygon_diameter(coords) ** 2
    return all(_cross(coords[k - 1], coords[k], coords[(k + 1) % m]) >= -tol * scale
               for k in range(m))


def interior_angles(coords):
    m = len(coords)
    angles = []
    for k in range(m):
        u = coords[k - 1] - coords[k]
        v = coords[(k + 1) % m] - coords[k]
        # counter-clockwise loop: turn from the next edge to the previous one
        angle = math.atan2(v[0] * u[1] - v[1] * u[0], float(np.dot(u, v)))
        angles.append(angle if angle > 0 else 2 * math.pi + angle)
    return angles


def largest_angle(coords):
    """Largest interior angle (radians) of a counter-clockwise polygon."""
    return max(interior_angles(np.asarray(coords, dtype=float)))


def chebyshev_center(coords):
    """
    Largest disc inside the kernel of a counter-clockwise polygon.

    The kernel is the intersection of the half planes left of every edge, so
    the disc is the solution of a small linear program.

    Returns:
        tuple: (center as np.ndarray, radius); radius <= 0 means an empty kernel
    """
    coords = np.asarray(coords, dtype=float)
    m = len(coords)
    rows, rhs = [], []
    for k in range(m):
        a, b = coords[k], coords[(k + 1) % m]
        d = b - a
        normal = np.array([d[1], -d[0]]) / np.hypot(*d)
        rows.append([normal[0], normal[1], 1.0])
        rhs.append(float(np.dot(normal, a)))
    h = polygon_diameter(coords)
    result = linprog(c=[0.0, 0.0, -1.0], A_ub=np.array(rows), b_ub=np.array(rhs),
                     bounds=[(None, None), (None, None), (None, h)], method="highs")
    if not result.success:
        return polygon_centroid(coords), 0.0
    return np.array(result.x[:2]), float(result.x[2])


def find_star_center(coords):
    """Centroid for convex cells, kernel Chebyshev center otherwise, None if no kernel."""
    coords = np.asarray(coords, dtype=float)
    if is_convex(coords):
        return polygon_centroid(coords)
    center, radius = chebyshev_center(coords)
    if radius <= 1e-12 * polygon_diameter(coords):
        return None
    return center


def fan_triangles(coords, center, tol=1e-12):
    """
    Fan triangles (center, v_k, v_k+1) of a polygon star-shaped about `center`.

    Triangles of zero area, which appear when the center is a vertex or lies
    on an edge, are dropped.

    Raises:
        NotStarShaped: if the center lies outside the kernel
    """
    coords = np.asarray(coords, dtype=float)
    center = np.asarray(center, dtype=float)
    scale = polygon_diameter(coords) ** 2
    m = len(coords)
    triangles = []
    for k in range(m):
        a, b = coords[k], coords[(k + 1) % m]
        area2 = _cross(center, a, b)
        if area2 < -tol * scale:
            raise NotStarShaped(f"polygon is not star-shaped with respect to {center.tolist()}")
        if area2 > tol * scale:
            triangles.append(np.array([center, a, b]))
    return triangles


def _point_in_triangle(p, a, b, c, tol):
    return (_cross(a, b, p) >= -tol and _cross(b, c, p) >= -tol and _cross(c, a, p) >= -tol)


def ear_clip(coords, return_indices=False):
    """
    Triangulate a simple counter-clockwise polygon by ear clipping.

    Returns (3, 2) coordinate arrays, or vertex index triples with
    `return_indices`.
    """
    coords = np.asarray(coords, dtype=float)
    scale = polygon_diameter(coords) ** 2
    tol = 1e-14 * scale
    remaining = list(range(len(coords)))
    triangles = []
    while len(remaining) > 3:
        m = len(remaining)
        for k in range(m):
            i, j, l = remaining[k - 1], remaining[k], remaining[(k + 1) % m]
            a, b, c = coords[i], coords[j], coords[l]
            if _cross(a, b, c) <= tol:
                continue
            others = (coords[r] for r in remaining if r not in (i, j, l))
            if any(_point_in_triangle(q, a, b, c, tol) for q in others):
                continue
            triangles.append((i, j, l))
            remaining.pop(k)
            break
        else:
            raise NonConforming("ear clipping failed; polygon is not simple")
    if _cross(*(coords[r] for r in remaining)) > tol:
        triangles.append(tuple(remaining))
    if return_indices:
        return triangles
    return [coords[list(t)] for t in triangles]


def subtriangulate(cell, vertices, center=None):
    """
    Fan triangulation of a mesh cell about its star center (or `center`).

    Args:
        cell (PolygonCell): the cell
        vertices (np.ndarray): mesh vertex coordinates
        center: optional override, e.g. the origin for cells of layer 0

    Returns:
        list: triangles as (3, 2) arrays
    """
    if center is None:
        center = cell.star_center
    if center is None:
        raise NotStarShaped("cell has an empty kernel")
    coords = np.asarray(vertices)[list(cell.vertex_ids)]
    return fan_triangles(coords, center)


# --- construction -----------------------------------------------------------

def _grading_table(sigma, n):
    """radii[k] = sigma^k for k = 0..n+1, accumulated in extended precision."""
    powers = np.cumprod(np.full(n + 1, sigma, dtype=np.longdouble))
    return [1.0] + [float(r) for r in powers]


def _rect(x0, x1, y0, y1):
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _reflected(loops):
    out = []
    for sx, sy in _QUADRANTS:
        for loop in loops:
            out.append([(sx * x + 0.0, sy * y + 0.0) for x, y in loop])
    return out


def _graded_squares(radii, n):
    loops = []
    for k in range(1, n + 1):
        a, b = radii[k], radii[k - 1]
        loops += [_rect(a, b, 0.0, a), _rect(0.0, a, a, b), _rect(a, b, a, b)]
    loops.append(_rect(0.0, radii[n], 0.0, radii[n]))
    return _reflected(loops)


def _ring(big, small):
    S, s = big, small
    return [(0.0, -S), (S, -S), (S, S), (-S, S), (-S, 0.0),
            (-s, 0.0), (-s, s), (s, s), (s, -s), (0.0, -s)]


def _corner_hexagon(s):
    return [(0.0, 0.0), (0.0, -s), (s, -s), (s, s), (-s, s), (-s, 0.0)]


def _layer_decagons(radii, n):
    loops = [_ring(radii[k - 1], radii[k]) for k in range(1, n + 1)]
    loops.append(_corner_hexagon(radii[n]))
    return loops


def _decagons_cut(radii, n):
    loops = []
    for k in range(1, n + 1):
        S, s = radii[k - 1], radii[k]
        loops.append([(S, S), (-S, S), (-S, 0.0), (-s, 0.0), (-s, s), (s, s)])
        loops.append([(s, s), (s, -s), (0.0, -s), (0.0, -S), (S, -S), (S, S)])
    s = radii[n]
    loops.append([(0.0, 0.0), (s, s), (-s, s), (-s, 0.0)])
    loops.append([(0.0, 0.0), (0.0, -s), (s, -s), (s, s)])
    return loops


def _tensor_quads(radii, n):
    grid = [0.0] + [radii[k] for k in range(n, -1, -1)]
    loops = [_rect(grid[i], grid[i + 1], grid[j], grid[j + 1])
             for j in range(n + 1) for i in range(n + 1)]
    return _reflected(loops)


_BUILDERS = {
    "GradedSquares": _graded_squares,
    "LayerDecagons": _layer_decagons,
    "DecagonsCut": _decagons_cut,
    "TensorQuadsFEM": _tensor_quads,
}


def _insert_hanging_nodes(loop_ids, vertices):
    """Add every vertex lying strictly inside an edge of the loop, in order along it."""
    out = []
    m = len(loop_ids)
    for k in range(m):
        i, j = loop_ids[k], loop_ids[(k + 1) % m]
        out.append(i)
        a, b = vertices[i], vertices[j]
        d = b - a
        length2 = float(np.dot(d, d))
        rel = vertices - a
        cross = d[0] * rel[:, 1] - d[1] * rel[:, 0]
        dot = rel @ d
        inside = np.flatnonzero((np.abs(cross) <= 1e-14 * length2)
                                & (dot > 1e-14 * length2) & (dot < (1 - 1e-14) * length2))
        out.extend(int(v) for v in inside[np.argsort(dot[inside])])
    return out


def mesh_from_polygons(vertices, loops, family, sigma, n, layers=None):
    """
    Build a PolygonalMesh from vertex coordinates and vertex-id loops.

    Loops are turned counter-clockwise and rotated to start at their smallest
    vertex id; edge adjacency is derived and checked, and layers are computed
    unless given.

    Raises:
        NonConforming: if an edge is shared by more than two cells
    """
    vertices = np.asarray(vertices, dtype=float)
    cells_ids = []
    for loop in loops:
        loop = list(loop)
        if signed_area(vertices[loop]) < 0:
            loop = loop[::-1]
        start = loop.index(min(loop))
        cells_ids.append(tuple(loop[start:] + loop[:start]))

    adjacency = defaultdict(list)
    for c, ids in enumerate(cells_ids):
        m = len(ids)
        for k in range(m):
            adjacency[_edge_key(ids[k], ids[(k + 1) % m])].append(c)
    edges, edge_index = [], {}
    for key in sorted(adjacency):
        owners = adjacency[key]
        if len(owners) > 2:
            raise NonConforming(f"edge {key} is shared by {len(owners)} cells")
        edge_index[key] = len(edges)
        edges.append(Edge(vertices=key, cells=tuple(owners)))

    if layers is None:
        layers = _layers_from_ids(vertices, cells_ids)
    cells = []
    for ids, layer in zip(cells_ids, layers):
        coords = vertices[list(ids)]
        center = find_star_center(coords)
        cells.append(PolygonCell(vertex_ids=ids, layer=int(layer),
                                 diameter=polygon_diameter(coords),
                                 star_center=None if center is None else tuple(float(v) for v in center)))
    return PolygonalMesh(vertices=vertices, cells=cells, edges=edges, family=family,
                         sigma=sigma, n=n, edge_index=edge_index)


def build_graded_mesh(family, n, sigma):
    """
    Build one of the graded mesh families with n+1 layers.

    Args:
        family (str): family name or letter a|b|c|d
        n (int): refinement level, 0 <= n <= 30
        sigma (float): grading parameter in (0.05, 0.95)

    Returns:
        PolygonalMesh
    """
    family = resolve_family(family)
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or not 0 <= n <= 30:
        raise InvalidParameter(f"n must be an integer in [0, 30], got {n!r}")
    if not 0.05 < sigma < 0.95:
        raise InvalidParameter(f"sigma must lie in (0.05, 0.95), got {sigma!r}")
    radii = _grading_table(sigma, int(n))
    loops = _BUILDERS[family](radii, int(n))
    points = sorted({p for loop in loops for p in loop})
    index = {p: i for i, p in enumerate(points)}
    vertices = np.array(points, dtype=float)
    id_loops = [_insert_hanging_nodes([index[p] for p in loop], vertices) for loop in loops]
    mesh = mesh_from_polygons(vertices, id_loops, family, float(sigma), int(n))
    logger.debug("built %s mesh n=%d sigma=%s: %d cells, %d vertices",
                 family, n, sigma, mesh.n_cells, len(mesh.vertices))
    return mesh


# --- layers -----------------------------------------------------------------

def _layers_from_ids(vertices, cells_ids):
    origin = np.flatnonzero(np.all(np.abs(vertices) <= 1e-14, axis=1))
    vertex_cells = defaultdict(set)
    for c, ids in enumerate(cells_ids):
        for v in ids:
            vertex_cells[v].add(c)
    layers = [-1] * len(cells_ids)
    queue = deque()
    for v in origin:
        for c in sorted(vertex_cells[int(v)]):
            if layers[c] < 0:
                layers[c] = 0
                queue.append(c)
    while queue:
        c = queue.popleft()
        for v in cells_ids[c]:
            for other in vertex_cells[v]:
                if layers[other] < 0:
                    layers[other] = layers[c] + 1
                    queue.append(other)
    if any(layer < 0 for layer in layers):
        missing = [c for c, layer in enumerate(layers) if layer < 0]
        raise NonConforming(f"cells {missing[:5]} are not connected to the corner layer")
    return layers


def compute_layers(mesh):
    """
    Layer index of every cell.

    L_0 holds the cells with a vertex at the origin, L_j the cells sharing a
    vertex with L_j-1 that are not in an earlier layer.

    Raises:
        NonConforming: if an edge has more than two cells or a cell is unreachable
    """
    counts = defaultdict(int)
    for cell in mesh.cells:
        ids = cell.vertex_ids
        for k in range(len(ids)):
            counts[_edge_key(ids[k], ids[(k + 1) % len(ids)])] += 1
    bad = [key for key, count in counts.items() if count > 2]
    if bad:
        raise NonConforming(f"edge {bad[0]} is shared by {counts[bad[0]]} cells")
    return _layers_from_ids(mesh.vertices, [c.vertex_ids for c in mesh.cells])


# --- diagnostics ------------------------------------------------------------

@dataclass
class MeshDiagnostics:
    min_star_radius_ratio: float
    min_edge_ratio: float
    max_edges_per_cell: int
    grading_residual: float
    conforming: bool
    star_shaped: bool = True
    d1_ok: bool = True
    d2_ok: bool = True
    grading_ratio_range: tuple = (float("nan"), float("nan"))
    max_cells_per_layer: int = 0
    l0_star_about_origin: bool = True
    area_error: float = 0.0


def _distance_to_polygon(point, coords):
    best = math.inf
    m = len(coords)
    for k in range(m):
        a, b = coords[k], coords[(k + 1) % m]
        d = b - a
        t = min(1.0, max(0.0, float(np.dot(point - a, d) / np.dot(d, d))))
        best = min(best, float(np.hypot(*(a + t * d - point))))
    return best


def check_origin_star(mesh, min_angle=1e-3):
    """
    Whether every layer-0 cell is star-shaped about the origin with a
    non-degenerate fan.
    """
    origin = np.zeros(2)
    for c in mesh.cells_in_layer(0):
        coords = mesh.cell_coords(c)
        try:
            triangles = fan_triangles(coords, origin)
        except NotStarShaped:
            return False
        for tri in triangles:
            if min(interior_angles(tri if signed_area(tri) > 0 else tri[::-1])) < min_angle:
                return False
    return True


def diagnose(mesh, gamma=0.05, gamma_tilde=0.01):
    """
    Shape regularity and grading diagnostics of a mesh.

    Args:
        mesh (PolygonalMesh): the mesh
        gamma (float): threshold for 2 r_E / h_E (star-shapedness with respect to a disc)
        gamma_tilde (float): threshold for edge length over h_E

    Returns:
        MeshDiagnostics: flags carry the verdict, nothing is raised
    """
    star_ratios, edge_ratios, grading = [], [], []
    for c, cell in enumerate(mesh.cells):
        coords = mesh.cell_coords(c)
        h = cell.diameter
        _, radius = chebyshev_center(coords)
        star_ratios.append(max(0.0, 2.0 * radius / h))
        lengths = np.hypot(*(np.roll(coords, -1, axis=0) - coords).T)
        edge_ratios.append(float(lengths.min()) / h)
        if cell.layer > 0:
            dist = _distance_to_polygon(np.zeros(2), coords)
            grading.append(h * mesh.sigma / ((1.0 - mesh.sigma) * dist))
    try:
        layers = compute_layers(mesh)
        conforming = layers == [c.layer for c in mesh.cells]
    except NonConforming:
        conforming = False
    area_error = abs(mesh.total_area() - DOMAIN_AREA) / DOMAIN_AREA
    conforming = conforming and area_error <= 1e-12
    per_layer = defaultdict(int)
    for cell in mesh.cells:
        per_layer[cell.layer] += 1
    min_star = min(star_ratios)
    min_edge = min(edge_ratios)
    diagnostics = MeshDiagnostics(
        min_star_radius_ratio=min_star,
        min_edge_ratio=min_edge,
        max_edges_per_cell=max(len(c.vertex_ids) for c in mesh.cells),
        grading_residual=max((abs(g - 1.0) for g in grading), default=0.0),
        conforming=conforming,
        star_shaped=min_star > 1e-12,
        d1_ok=min_star >= gamma,
        d2_ok=min_edge >= gamma_tilde,
        grading_ratio_range=(min(grading), max(grading)) if grading else (float("nan"), float("nan")),
        max_cells_per_layer=max(per_layer.values()),
        l0_star_about_origin=check_origin_star(mesh),
        area_error=area_error,
    )
    if not diagnostics.d1_ok:
        logger.warning("%s mesh n=%d: min star radius ratio %.3g below %.3g",
                       mesh.family, mesh.n, min_star, gamma)
    return diagnostics
