"""Conforming hp-FEM on quadrilateral meshes with hierarchical Lobatto shape functions.

Edge modes use the minimum rule: a shared edge carries the smaller of the two
adjacent element degrees. Edge mode k of global edge (a, b), a < b, is the
Lobatto function l_k in the parameter running from a to b.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assemble import ReducedSystem, solve
from .errors import DegenerateMap, InvalidParameter
from .polyquad import gauss_legendre_1d, gauss_lobatto_1d, legendre_eval

logger = logging.getLogger(__name__)

_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def lobatto(k, s):
    """Lobatto shape function l_k and its derivative at s."""
    s = np.asarray(s, dtype=float)
    if k == 0:
        return (1.0 - s) / 2.0, np.full_like(s, -0.5)
    if k == 1:
        return (1.0 + s) / 2.0, np.full_like(s, 0.5)
    lk, _ = legendre_eval(k, s)
    lk2, _ = legendre_eval(k - 2, s)
    lk1, _ = legendre_eval(k - 1, s)
    return (lk - lk2) / math.sqrt(2.0 * (2 * k - 1)), math.sqrt((2 * k - 1) / 2.0) * lk1


@dataclass(frozen=True, eq=False)
class QuadElement:
    cell_id: int
    vertex_ids: tuple
    coords: np.ndarray
    degree: int
    edge_degrees: tuple
    layer: int = 0

    @property
    def edge_reversed(self):
        ids = self.vertex_ids
        return tuple(ids[e] > ids[(e + 1) % 4] for e in range(4))

    def map(self, ref):
        """Physical points and Jacobians of the bilinear map at reference points."""
        xi, eta = ref[:, 0], ref[:, 1]
        shape = np.stack([(1 + c[0] * xi) * (1 + c[1] * eta) / 4.0 for c in _CORNERS], axis=1)
        dxi = np.stack([c[0] * (1 + c[1] * eta) / 4.0 for c in _CORNERS], axis=1)
        deta = np.stack([c[1] * (1 + c[0] * xi) / 4.0 for c in _CORNERS], axis=1)
        points = shape @ self.coords
        jac = np.stack([dxi @ self.coords, deta @ self.coords], axis=-1)
        return points, jac


class LobattoShapeSet:
    """
    Hierarchical shape functions of one element, in the order: 4 vertex modes,
    edge modes k = 2..p_e for the edges 0..3, interior modes l_i(xi) l_j(eta).
    Edge modes carry the sign of the global edge orientation.
    """

    def __init__(self, degree, edge_degrees, edge_reversed=(False,) * 4):
        self.degree = degree
        self.edge_degrees = tuple(edge_degrees)
        self.edge_reversed = tuple(edge_reversed)
        self.modes = [("vertex", a, 0) for a in range(4)]
        for e, d in enumerate(self.edge_degrees):
            self.modes += [("edge", e, k) for k in range(2, d + 1)]
        self.modes += [("interior", i, j) for i in range(2, degree + 1) for j in range(2, degree + 1)]

    def __len__(self):
        return len(self.modes)

    def evaluate(self, ref):
        """Values (q, n) and reference gradients (q, n, 2) at reference points."""
        xi, eta = ref[:, 0], ref[:, 1]
        values = np.empty((len(ref), len(self.modes)))
        grads = np.empty((len(ref), len(self.modes), 2))
        cache = {}

        def lob(k, s, key):
            if (k, key) not in cache:
                cache[(k, key)] = lobatto(k, s)
            return cache[(k, key)]

        factors = {
            # (xi function, eta function) as (k, argument sign) pairs
            ("vertex", 0): ((0, 1), (0, 1)), ("vertex", 1): ((1, 1), (0, 1)),
            ("vertex", 2): ((1, 1), (1, 1)), ("vertex", 3): ((0, 1), (1, 1)),
        }
        for col, (kind, a, k) in enumerate(self.modes):
            if kind == "vertex":
                (kx, sx), (ky, sy) = factors[(kind, a)]
            elif kind == "edge":
                (kx, sx), (ky, sy) = {0: ((k, 1), (0, 1)), 1: ((1, 1), (k, 1)),
                                      2: ((k, -1), (1, 1)), 3: ((0, 1), (k, -1))}[a]
            else:
                (kx, sx), (ky, sy) = (a, 1), (k, 1)
            fx, dfx = lob(kx, sx * xi, ("x", sx))
            fy, dfy = lob(ky, sy * eta, ("y", sy))
            sign = (-1.0) ** k if kind == "edge" and self.edge_reversed[a] else 1.0
            values[:, col] = sign * fx * fy
            grads[:, col, 0] = sign * sx * dfx * fy
            grads[:, col, 1] = sign * sy * fx * dfy
        return values, grads


def tensor_gauss(n):
    g = gauss_legendre_1d(n)
    x, y = np.meshgrid(g.points, g.points, indexing="ij")
    wx, wy = np.meshgrid(g.weights, g.weights, indexing="ij")
    return np.column_stack([x.ravel(), y.ravel()]), (wx * wy).ravel()


def graded_square_rule(n, corner, levels=3):
    """Tensor Gauss rule on [-1, 1]^2 refined geometrically toward one corner."""
    c = _CORNERS[corner]
    points, weights = [], []
    lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    ref, w = tensor_gauss(n)
    boxes = []
    for _ in range(levels):
        mid = (lo + hi) / 2.0
        quarters = [(np.array([x0, y0]), np.array([x1, y1]))
                    for x0, x1 in ((lo[0], mid[0]), (mid[0], hi[0]))
                    for y0, y1 in ((lo[1], mid[1]), (mid[1], hi[1]))]
        near = min(quarters, key=lambda q: np.sum((q[0] + q[1]) / 2.0 * -c))
        boxes += [q for q in quarters if q is not near]
        lo, hi = near
    boxes.append((lo, hi))
    for b0, b1 in boxes:
        half = (b1 - b0) / 2.0
        points.append(b0 + (ref + 1.0) * half)
        weights.append(w * half[0] * half[1])
    return np.vstack(points), np.concatenate(weights)


def _mapped(elem, ref):
    points, jac = elem.map(ref)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    if np.any(det <= 0):
        raise DegenerateMap(f"element {elem.cell_id}: non-positive Jacobian determinant")
    return points, jac, det


def fem_local_stiffness(elem, p=None):
    """Element stiffness matrix, Gauss (p+2)^2 quadrature."""
    p = elem.degree if p is None else p
    shapes = LobattoShapeSet(p, elem.edge_degrees, elem.edge_reversed)
    ref, w = tensor_gauss(p + 2)
    _, jac, det = _mapped(elem, ref)
    _, ref_grads = shapes.evaluate(ref)
    grads = np.einsum("qik,qkl->qil", ref_grads, np.linalg.inv(jac))
    return np.einsum("q,qik,qjk->ij", w * det, grads, grads)


def fem_local_load(elem, f, p=None):
    p = elem.degree if p is None else p
    shapes = LobattoShapeSet(p, elem.edge_degrees, elem.edge_reversed)
    if f is None:
        return np.zeros(len(shapes))
    ref, w = tensor_gauss(p + 2)
    points, _, det = _mapped(elem, ref)
    values, _ = shapes.evaluate(ref)
    return values.T @ (w * det * f(points))


@dataclass(eq=False)
class FemSystem:
    mesh: object
    elements: list
    edge_degrees: list
    edge_offsets: list
    element_dofs: list
    n_dofs: int
    boundary: np.ndarray
    stiffness: object
    load: np.ndarray


def fem_edge_degrees(mesh, cell_degrees):
    return [min(cell_degrees[c] for c in edge.cells) for edge in mesh.edges]


def fem_assemble(mesh, cell_degrees, f=None):
    """
    Global stiffness and load of the hp-FEM space on a quadrilateral mesh.

    Raises:
        InvalidParameter: if a cell is not a quadrilateral
    """
    edge_degrees = fem_edge_degrees(mesh, cell_degrees)
    offset = len(mesh.vertices)
    edge_offsets = []
    for d in edge_degrees:
        edge_offsets.append(offset)
        offset += d - 1
    elements, element_dofs = [], []
    rows, cols, vals = [], [], []
    load_parts = []
    for c, cell in enumerate(mesh.cells):
        if len(cell.vertex_ids) != 4:
            raise InvalidParameter(f"cell {c} has {len(cell.vertex_ids)} vertices, expected 4")
        edges = mesh.cell_edges(c)
        elem = QuadElement(cell_id=c, vertex_ids=cell.vertex_ids, coords=mesh.cell_coords(c),
                           degree=cell_degrees[c], edge_degrees=tuple(edge_degrees[e] for e in edges),
                           layer=cell.layer)
        dofs = list(cell.vertex_ids)
        for e in edges:
            dofs += range(edge_offsets[e], edge_offsets[e] + edge_degrees[e] - 1)
        n_interior = (elem.degree - 1) ** 2
        dofs += range(offset, offset + n_interior)
        offset += n_interior
        dofs = np.array(dofs, dtype=int)
        k = fem_local_stiffness(elem)
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        vals.append(k.ravel())
        load_parts.append((dofs, fem_local_load(elem, f)))
        elements.append(elem)
        element_dofs.append(dofs)
    stiffness = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(offset, offset)).tocsr()
    load = np.zeros(offset)
    for dofs, part in load_parts:
        np.add.at(load, dofs, part)
    boundary = np.zeros(offset, dtype=bool)
    for e in mesh.boundary_edges():
        boundary[list(mesh.edges[e].vertices)] = True
        boundary[edge_offsets[e]:edge_offsets[e] + edge_degrees[e] - 1] = True
    logger.info("assembled hp-FEM on %d quads: %d dofs", len(elements), offset)
    return FemSystem(mesh=mesh, elements=elements, edge_degrees=edge_degrees,
                     edge_offsets=edge_offsets, element_dofs=element_dofs, n_dofs=offset,
                     boundary=boundary, stiffness=stiffness, load=load)


def fem_boundary_values(system, g):
    """Boundary dof values: g at the vertices, edge modes interpolating g at GLL nodes."""
    values = np.zeros(system.n_dofs)
    if g is None:
        return values
    mesh = system.mesh
    vertices = mesh.boundary_vertices()
    values[vertices] = g(mesh.vertices[vertices])
    for e in mesh.boundary_edges():
        d = system.edge_degrees[e]
        if d < 2:
            continue
        a_id, b_id = mesh.edges[e].vertices
        a, b = mesh.vertices[a_id], mesh.vertices[b_id]
        s = gauss_lobatto_1d(d).points[1:-1]
        target = g(a + np.outer((s + 1.0) / 2.0, b - a))
        target = target - values[a_id] * lobatto(0, s)[0] - values[b_id] * lobatto(1, s)[0]
        vandermonde = np.column_stack([lobatto(k, s)[0] for k in range(2, d + 1)])
        start = system.edge_offsets[e]
        values[start:start + d - 1] = np.linalg.solve(vandermonde, target)
    return values


@dataclass(eq=False)
class FemSolution:
    system: FemSystem
    values: np.ndarray
    kind: str = "fem"

    def edge_degree(self, edge):
        return self.system.edge_degrees[edge]

    def edge_trace(self, edge, s):
        system = self.system
        a, b = system.mesh.edges[edge].vertices
        s = np.asarray(s, dtype=float)
        out = self.values[a] * lobatto(0, s)[0] + self.values[b] * lobatto(1, s)[0]
        start = system.edge_offsets[edge]
        for k in range(2, system.edge_degrees[edge] + 1):
            out = out + self.values[start + k - 2] * lobatto(k, s)[0]
        return out

    def evaluate_in_element(self, cell, ref):
        """Values and physical gradients of the solution at reference points of one element."""
        elem = self.system.elements[cell]
        shapes = LobattoShapeSet(elem.degree, elem.edge_degrees, elem.edge_reversed)
        ref = np.atleast_2d(ref)
        values, ref_grads = shapes.evaluate(ref)
        _, jac, _ = _mapped(elem, ref)
        grads = np.einsum("qik,qkl->qil", ref_grads, np.linalg.inv(jac))
        local = self.values[self.system.element_dofs[cell]]
        return values @ local, np.einsum("qik,i->qk", grads, local)

    def energy_error(self, exact_grad, levels=3):
        """Absolute H1 seminorm error; corner elements use a graded rule."""
        total = 0.0
        for c, elem in enumerate(self.system.elements):
            n = elem.degree + 4
            at_origin = np.flatnonzero(np.all(np.abs(elem.coords) <= 1e-14, axis=1))
            if len(at_origin):
                ref, w = graded_square_rule(n, int(at_origin[0]), levels)
            else:
                ref, w = tensor_gauss(n)
            points, _, det = _mapped(elem, ref)
            _, grads = self.evaluate_in_element(c, ref)
            diff = grads - exact_grad(points)
            total += float(np.sum(w * det * np.sum(diff ** 2, axis=1)))
        return math.sqrt(total)


def fem_assemble_solve(mesh, cell_degrees, g, f=None):
    """
    Solve -Laplace u = f with u = g on the boundary by hp-FEM.

    Args:
        mesh: quadrilateral mesh (TensorQuadsFEM)
        cell_degrees (list): element degrees (>= 1)
        g: Dirichlet data callable, f: source callable or None
    """
    system = fem_assemble(mesh, cell_degrees, f)
    values = fem_boundary_values(system, g)
    free = np.flatnonzero(~system.boundary)
    boundary = np.flatnonzero(system.boundary)
    k = system.stiffness
    rhs = system.load[free] - k[free][:, boundary] @ values[boundary]
    reduced = ReducedSystem(matrix=k[free][:, free], rhs=rhs, free=free, boundary_values=values)
    return FemSolution(system=system, values=solve(reduced))
