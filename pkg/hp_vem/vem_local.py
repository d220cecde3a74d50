"""Local hp virtual element operators on one polygon.

Degrees of freedom of the local space V(E) of degree p:
  - values at the vertices, in counter-clockwise order;
  - values at the p_e - 1 interior Gauss-Lobatto nodes of every edge e,
    ordered from the lower to the higher global vertex id of the edge;
  - scaled moments (1/|E|) * int_E v q_beta over a basis q of P_{p-2}(E).
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegreeTooLow, InvalidDegree, InvalidParameter, SingularG
from .mesh import largest_angle
from .polyquad import (ORTHONORMALIZE_FROM_DEGREE, basis_size, default_basis,
                       gauss_legendre_1d, gauss_lobatto_1d, lagrange_matrix, polygon_rule)

logger = logging.getLogger(__name__)

G_CONDITION_LIMIT = 1e14

# length h in the p/h and p^2/h^2 weights of the stabilization
STAB_H_CHOICES = ("diameter", "max-edge")


class StabilizationKind(str, Enum):
    BOUNDARY_PLUS_MOMENTS = "BoundaryPlusMoments"
    GLL_BOUNDARY_PLUS_MOMENTS = "GllBoundaryPlusMoments"
    DOFI_DOFI = "DofiDofi"

    @classmethod
    def parse(cls, token):
        aliases = {"boundary": cls.BOUNDARY_PLUS_MOMENTS, "gll": cls.GLL_BOUNDARY_PLUS_MOMENTS,
                   "dofi": cls.DOFI_DOFI}
        if isinstance(token, cls):
            return token
        if token in aliases:
            return aliases[token]
        return cls(token)


@dataclass(frozen=True)
class DofLayout:
    cell_id: int
    p: int
    edge_degrees: tuple
    edge_reversed: tuple
    n_vertices: int
    edge_offsets: tuple
    n_moments: int

    @property
    def size(self):
        return self.n_vertices + sum(d - 1 for d in self.edge_degrees) + self.n_moments

    @property
    def moment_offset(self):
        return self.size - self.n_moments

    @property
    def n_boundary(self):
        return self.moment_offset

    def edge_interior(self, e):
        """Local indices of the interior dofs of edge e, lower-to-higher vertex id order."""
        start = self.edge_offsets[e]
        return list(range(start, start + self.edge_degrees[e] - 1))

    def edge_dofs(self, e):
        """Local dofs of edge e in counter-clockwise order, both vertices included."""
        interior = self.edge_interior(e)
        if self.edge_reversed[e]:
            interior = interior[::-1]
        return [e] + interior + [(e + 1) % self.n_vertices]

    def descriptors(self):
        out = [("vertex", i, 0) for i in range(self.n_vertices)]
        for e, d in enumerate(self.edge_degrees):
            out += [("edge", e, k) for k in range(d - 1)]
        out += [("moment", b, 0) for b in range(self.n_moments)]
        return out

    def boundary_nodes(self, geom):
        """Coordinates of the vertex and edge dofs, shape (n_boundary, 2)."""
        nodes = np.zeros((self.n_boundary, 2))
        nodes[:self.n_vertices] = geom.coords
        for e, d in enumerate(self.edge_degrees):
            a, b = geom.edge(e)
            t = gauss_lobatto_1d(d).points[1:-1]
            ccw = self.edge_dofs(e)[1:-1]
            nodes[ccw] = a + np.outer((t + 1.0) / 2.0, b - a)
        return nodes


def build_dof_layout(geom, p, edge_degrees=None):
    """
    Dof layout of a cell of degree p.

    Args:
        geom (CellGeometry): the cell
        p (int): degree of the cell, >= 2
        edge_degrees: per-edge degrees (default p on every edge)

    Raises:
        DegreeTooLow: p < 2
        InvalidDegree: an edge degree below 1
    """
    if p < 2:
        raise DegreeTooLow(f"cell {geom.cell_id}: degree {p} < 2")
    m = geom.n_edges
    edge_degrees = tuple(int(d) for d in (edge_degrees if edge_degrees is not None else [p] * m))
    if len(edge_degrees) != m or min(edge_degrees) < 1:
        raise InvalidDegree(f"cell {geom.cell_id}: invalid edge degrees {edge_degrees}")
    ids = geom.vertex_ids
    reversed_ = tuple(ids[e] > ids[(e + 1) % m] for e in range(m))
    offsets, start = [], m
    for d in edge_degrees:
        offsets.append(start)
        start += d - 1
    return DofLayout(cell_id=geom.cell_id, p=int(p), edge_degrees=edge_degrees,
                     edge_reversed=reversed_, n_vertices=m, edge_offsets=tuple(offsets),
                     n_moments=basis_size(p - 2))


@dataclass(eq=False)
class LocalVemOperators:
    """
    Projections and matrices of one cell.

    pi_nabla holds the coefficients of Pi_nabla phi_j in `basis` (columns j),
    pi0 the coefficients of Pi_0 phi_j in `moment_basis`.
    """
    geom: object
    layout: DofLayout
    basis: object
    moment_basis: object
    rule: object
    d_matrix: np.ndarray
    b_matrix: np.ndarray
    g_matrix: np.ndarray
    pi_nabla: np.ndarray
    pi0: np.ndarray
    moment_mass: np.ndarray
    boundary_mass: np.ndarray
    gll_boundary_mass: np.ndarray
    k_consistency: np.ndarray
    k_stab: np.ndarray = None
    stab_kind: StabilizationKind = None
    stab_h: str = "diameter"

    @property
    def p(self):
        return self.layout.p

    @property
    def pi_nabla_dofs(self):
        """Dof vectors of the projections, D @ Pi_nabla*."""
        return self.d_matrix @ self.pi_nabla

    @property
    def k_local(self):
        return self.k_consistency + self.k_stab


def _boundary_rule(p_edge, p):
    return gauss_legendre_1d(max(1, math.ceil((p_edge + p + 2) / 2)))


def dof_vector(geom, layout, func, rule=None, moment_basis=None):
    """
    Dofs of a function given as a callable on (n, 2) points.

    Exact for polynomials of degree <= layout.p when `rule` integrates
    degree 2p - 2.
    """
    if rule is None:
        rule = polygon_rule(geom.coords, 2 * layout.p, geom.star_center)
    out = np.empty(layout.size)
    out[:layout.n_boundary] = func(layout.boundary_nodes(geom))
    if layout.n_moments:
        if moment_basis is None:
            moment_basis = default_basis(geom, layout.p - 2, rule,
                                         layout.p >= ORTHONORMALIZE_FROM_DEGREE)
        q = moment_basis.values(rule.points)
        out[layout.moment_offset:] = q.T @ (rule.weights * func(rule.points)) / geom.area
    return out


def _moment_dofs_of_basis(basis, moment_basis, rule, area):
    q = moment_basis.values(rule.points)
    m = basis.values(rule.points)
    return q.T @ (rule.weights[:, None] * m) / area


def local_operators(geom, layout, stab_kind=StabilizationKind.BOUNDARY_PLUS_MOMENTS,
                    orthonormal=None, stab_h="diameter"):
    """
    Build the local matrices D, B, G, the projections and the stiffness.

    Args:
        geom (CellGeometry): the cell
        layout (DofLayout): its dof layout
        stab_kind (StabilizationKind): stabilization used for k_stab
        orthonormal (bool or None): orthonormalize the polynomial bases
            (default: from degree 5 on)
        stab_h (str): length h of the stabilization weights, "diameter" or
            "max-edge" (longest edge of the cell)

    Returns:
        LocalVemOperators

    Raises:
        SingularG: if G is numerically singular
        InvalidParameter: unknown stab_h
    """
    stabilization_length(geom, stab_h)
    p = layout.p
    if orthonormal is None:
        orthonormal = p >= ORTHONORMALIZE_FROM_DEGREE
    rule = polygon_rule(geom.coords, 2 * p + 2, geom.star_center)
    basis = default_basis(geom, p, rule, orthonormal)
    moment_basis = default_basis(geom, p - 2, rule, orthonormal)
    n_k, n_dof = basis.size, layout.size
    mo = layout.moment_offset

    d_matrix = np.zeros((n_dof, n_k))
    d_matrix[:layout.n_boundary] = basis.values(layout.boundary_nodes(geom))
    if layout.n_moments:
        d_matrix[mo:] = _moment_dofs_of_basis(basis, moment_basis, rule, geom.area)

    b_matrix = np.zeros((n_k, n_dof))
    boundary_mass = np.zeros((n_dof, n_dof))
    gll_boundary_mass = np.zeros((n_dof, n_dof))
    constant_row = np.zeros(n_dof)
    for e, p_edge in enumerate(layout.edge_degrees):
        a, b = geom.edge(e)
        length = geom.edge_length(e)
        normal = geom.outward_normal(e)
        ccw = layout.edge_dofs(e)
        gll = gauss_lobatto_1d(p_edge)

        g = _boundary_rule(p_edge, p)
        x = a + np.outer((g.points + 1.0) / 2.0, b - a)
        w = g.weights * length / 2.0
        trace = lagrange_matrix(gll.points, g.points)
        flux = basis.gradients(x) @ normal
        b_matrix[:, ccw] += flux.T @ (w[:, None] * trace)
        constant_row[ccw] += w @ trace

        gm = gauss_legendre_1d(p_edge + 1)
        trace_m = lagrange_matrix(gll.points, gm.points)
        boundary_mass[np.ix_(ccw, ccw)] += trace_m.T @ ((gm.weights * length / 2.0)[:, None] * trace_m)
        gll_boundary_mass[ccw, ccw] += gll.weights * length / 2.0

    if layout.n_moments:
        lap = basis.laplacian_in(moment_basis)
        b_matrix[:, mo:] -= geom.area * lap.T
    b_matrix[0] = constant_row / geom.perimeter

    g_matrix = b_matrix @ d_matrix
    try:
        cond = np.linalg.cond(g_matrix)
    except np.linalg.LinAlgError:
        cond = math.inf
    if not np.isfinite(cond) or cond > G_CONDITION_LIMIT:
        raise SingularG(f"cell {geom.cell_id}, p={p}: cond(G) = {cond:.3g}")
    pi_nabla = np.linalg.solve(g_matrix, b_matrix)

    grads = basis.gradients(rule.points)
    g_tilde = np.einsum("q,qik,qjk->ij", rule.weights, grads, grads)
    k_consistency = pi_nabla.T @ g_tilde @ pi_nabla
    k_consistency = 0.5 * (k_consistency + k_consistency.T)

    if layout.n_moments:
        q = moment_basis.values(rule.points)
        moment_mass = q.T @ (rule.weights[:, None] * q)
        selector = np.zeros((layout.n_moments, n_dof))
        selector[:, mo:] = geom.area * np.eye(layout.n_moments)
        pi0 = np.linalg.solve(moment_mass, selector)
    else:
        moment_mass = np.zeros((0, 0))
        pi0 = np.zeros((0, n_dof))

    ops = LocalVemOperators(geom=geom, layout=layout, basis=basis, moment_basis=moment_basis,
                            rule=rule, d_matrix=d_matrix, b_matrix=b_matrix, g_matrix=g_matrix,
                            pi_nabla=pi_nabla, pi0=pi0, moment_mass=moment_mass,
                            boundary_mass=boundary_mass, gll_boundary_mass=gll_boundary_mass,
                            k_consistency=k_consistency, stab_h=stab_h)
    ops.k_stab = stabilization(ops, stab_kind)
    ops.stab_kind = StabilizationKind.parse(stab_kind)
    logger.debug("cell %d: p=%d, %d dofs, cond(G)=%.3g", geom.cell_id, p, n_dof, cond)
    return ops


def stabilization_length(geom, stab_h="diameter"):
    """Length h of the stabilization weights: the cell diameter or its longest edge."""
    if stab_h == "diameter":
        return geom.diameter
    if stab_h == "max-edge":
        return max(geom.edge_length(e) for e in range(geom.n_edges))
    raise InvalidParameter(f"invalid stabilization length '{stab_h}', expected one of {', '.join(STAB_H_CHOICES)}")


def stabilization(ops, kind):
    """
    Stabilization matrix S applied to (I - Pi_nabla).

    BoundaryPlusMoments: p/h * ||.||^2_{L2(dE)} + p^2/h^2 * ||Pi_0 .||^2_{L2(E)};
    GllBoundaryPlusMoments replaces the edge L2 norm by its GLL quadrature;
    DofiDofi is the Euclidean product of dof vectors. h follows ops.stab_h.
    """
    kind = StabilizationKind.parse(kind)
    n_dof = ops.layout.size
    p, h = ops.p, stabilization_length(ops.geom, ops.stab_h)
    residual = np.eye(n_dof) - ops.pi_nabla_dofs
    if kind is StabilizationKind.DOFI_DOFI:
        inner = np.eye(n_dof)
    else:
        edge_mass = (ops.boundary_mass if kind is StabilizationKind.BOUNDARY_PLUS_MOMENTS
                     else ops.gll_boundary_mass)
        inner = (p / h) * edge_mass + (p ** 2 / h ** 2) * (ops.pi0.T @ ops.moment_mass @ ops.pi0)
    s = residual.T @ inner @ residual
    return 0.5 * (s + s.T)


def local_stiffness(geom, layout, stab_kind=StabilizationKind.BOUNDARY_PLUS_MOMENTS, stab_h="diameter"):
    """Symmetric local stiffness K = Pi*^T G~ Pi* + (I - D Pi*)^T S (I - D Pi*)."""
    return local_operators(geom, layout, stab_kind, stab_h=stab_h).k_local


def local_load(ops, f):
    """
    Load vector int_E (Pi_0 f) phi_j; only the moment dofs are nonzero.

    Args:
        ops (LocalVemOperators): the cell operators
        f: callable on (n, 2) points, or None for f = 0
    """
    load = np.zeros(ops.layout.size)
    if f is None or not ops.layout.n_moments:
        return load
    q = ops.moment_basis.values(ops.rule.points)
    rhs = q.T @ (ops.rule.weights * f(ops.rule.points))
    f_hat = np.linalg.solve(ops.moment_mass, rhs)
    load[ops.layout.moment_offset:] = ops.geom.area * f_hat
    return load


def pi_nabla_coefficients(ops, dofs):
    return ops.pi_nabla @ dofs


def pi_nabla_gradient(ops, dofs, points):
    """Gradient of Pi_nabla v at `points`, shape (n, 2)."""
    return np.einsum("pjk,j->pk", ops.basis.gradients(points), ops.pi_nabla @ dofs)


def stability_constants(geom, p):
    """
    Bounds (c_lower, c_upper) on the spectrum of K against the exact energy.

    c_lower = p^-5 for every cell; c_upper = 1 on convex cells and
    p^(2 (1 - pi/omega)) for a largest interior angle omega > pi.
    """
    omega = largest_angle(geom.coords)
    upper = 1.0 if omega <= math.pi + 1e-12 else p ** (2.0 * (1.0 - math.pi / omega))
    return p ** -5.0, upper
