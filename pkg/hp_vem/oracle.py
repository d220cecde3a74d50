"""Reference solutions for virtual basis functions on one cell.

Each local virtual basis function solves a Poisson problem on the cell with
polynomial boundary data and a polynomial Laplacian fixed by its moments.
These problems are approximated by a fine conforming P1/P2 finite element
discretization of the cell, which yields the exact local Dirichlet energy
matrix up to the fine-mesh error.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvalidParameter, SingularSystem, UnconvergedOracle
from .mesh import ear_clip, fan_triangles, interior_angles
from .polyquad import default_basis, gauss_lobatto_1d, lagrange_matrix, triangle_rule
from .vem_local import dof_vector, local_operators, stability_constants

logger = logging.getLogger(__name__)

SELF_CONVERGENCE_TOLERANCE = 0.01
# cap on the grading exponent degree * omega / pi toward reentrant vertices
GRADING_MAX_EXPONENT = 3.0
_MIDPOINT_PAIRS = ((0, 1), (1, 2), (2, 0))


def default_oracle_level(p):
    """Refinement level of the fine mesh; higher degrees need finer meshes."""
    if p <= 4:
        return 4
    if p <= 7:
        return 5
    return 6


@dataclass(eq=False)
class FineTriangulation:
    nodes: np.ndarray
    elements: np.ndarray
    degree: int
    level: int
    boundary: np.ndarray
    graded: bool = False

    @property
    def n_nodes(self):
        return len(self.nodes)


def _coarse_triangles(geom):
    coords = np.asarray(geom.coords, dtype=float)
    m = len(coords)
    if geom.star_center is None:
        return coords, np.array(ear_clip(coords, return_indices=True), dtype=int)
    center = np.asarray(geom.star_center, dtype=float)
    fan_triangles(coords, center)
    nodes = np.vstack([coords, center])
    triangles = [(m, k, (k + 1) % m) for k in range(m)]
    return nodes, np.array(triangles, dtype=int)


def _midpoint(nodes, cache, a, b):
    key = (a, b) if a < b else (b, a)
    if key not in cache:
        cache[key] = len(nodes)
        nodes.append((nodes[a] + nodes[b]) / 2.0)
    return cache[key]


def _segment_distance(x, a, b):
    d = b - a
    s = min(1.0, max(0.0, float(np.dot(x - a, d) / np.dot(d, d))))
    return float(np.hypot(*(a + s * d - x)))


def corner_gradings(geom, degree=2):
    """
    (vertex, radius, exponent) of the radial grading at every reentrant vertex.

    The radius stays below half the distance to every edge not incident to
    the vertex and to both neighbouring vertices, so boundary nodes remain on
    their edges and the graded discs of two corners never meet.
    """
    coords = np.asarray(geom.coords, dtype=float)
    m = len(coords)
    out = []
    for k, omega in enumerate(interior_angles(coords)):
        if omega <= math.pi + 1e-12:
            continue
        v = coords[k]
        reach = [float(np.hypot(*(coords[(k + 1) % m] - v))), float(np.hypot(*(coords[k - 1] - v)))]
        reach += [_segment_distance(v, coords[e], coords[(e + 1) % m])
                  for e in range(m) if e not in ((k - 1) % m, k)]
        out.append((v, 0.5 * min(reach), min(GRADING_MAX_EXPONENT, degree * omega / math.pi)))
    return out


def _signed_dets(nodes, triangles):
    a, b, c = nodes[triangles[:, 0]], nodes[triangles[:, 1]], nodes[triangles[:, 2]]
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])


def _graded_nodes(nodes, triangles, corners):
    """Nodes pulled toward reentrant vertices by r -> R (r/R)^exponent; None if a triangle flips."""
    graded = nodes.copy()
    for v, radius, exponent in corners:
        d = graded - v
        r = np.hypot(d[:, 0], d[:, 1])
        near = (r > 0.0) & (r < radius)
        graded[near] = v + d[near] * ((r[near] / radius) ** (exponent - 1.0))[:, None]
    before, after = _signed_dets(nodes, triangles), _signed_dets(graded, triangles)
    if np.any(before * after <= 0.0):
        return None
    return graded


def build_fine_triangulation(geom, level, degree=2, graded=True):
    """
    Red refinement of the coarse cell split, with P1 or P2 nodes.

    With `graded`, the vertex nodes are pulled toward every reentrant vertex
    of the cell (see corner_gradings) before P2 midpoints are added, so the
    elements stay straight-sided. Convex cells are refined uniformly.

    Args:
        geom (CellGeometry): the cell
        level (int): number of refinements
        degree (int): 1 or 2
        graded (bool): grade toward reentrant vertices
    """
    if degree not in (1, 2):
        raise InvalidParameter(f"fine element degree must be 1 or 2, got {degree}")
    if level < 0:
        raise InvalidParameter(f"negative refinement level {level}")
    coarse_nodes, triangles = _coarse_triangles(geom)
    nodes = [np.asarray(x, dtype=float) for x in coarse_nodes]
    for _ in range(level):
        cache = {}
        refined = []
        for a, b, c in triangles:
            ab = _midpoint(nodes, cache, a, b)
            bc = _midpoint(nodes, cache, b, c)
            ca = _midpoint(nodes, cache, c, a)
            refined += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        triangles = np.array(refined, dtype=int)

    is_graded = False
    corners = corner_gradings(geom, degree) if graded else []
    if corners:
        moved = _graded_nodes(np.array(nodes), triangles, corners)
        if moved is None:
            logger.debug("cell %d, level %d: grading would flip triangles, refining uniformly",
                         geom.cell_id, level)
        else:
            nodes = list(moved)
            is_graded = True

    edge_count = {}
    for tri in triangles:
        for i, j in _MIDPOINT_PAIRS:
            key = tuple(sorted((tri[i], tri[j])))
            edge_count[key] = edge_count.get(key, 0) + 1
    boundary_edges = [key for key, count in edge_count.items() if count == 1]

    elements = triangles
    if degree == 2:
        cache = {}
        mids = np.array([[_midpoint(nodes, cache, tri[i], tri[j]) for i, j in _MIDPOINT_PAIRS]
                         for tri in triangles], dtype=int)
        elements = np.hstack([triangles, mids])
    boundary = np.zeros(len(nodes), dtype=bool)
    for a, b in boundary_edges:
        boundary[[a, b]] = True
        if degree == 2:
            boundary[cache[(a, b)]] = True
    return FineTriangulation(nodes=np.array(nodes), elements=elements, degree=degree,
                             level=level, boundary=boundary, graded=is_graded)


def reference_shapes(degree, points):
    """P1/P2 shape functions on the reference triangle: values (q, n), gradients (q, n, 2)."""
    xi, eta = points[:, 0], points[:, 1]
    lam = [1.0 - xi - eta, xi, eta]
    dlam = [np.array([-1.0, -1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    values, grads = [], []
    if degree == 1:
        for i in range(3):
            values.append(lam[i])
            grads.append(np.broadcast_to(dlam[i], (len(points), 2)))
    else:
        for i in range(3):
            values.append(lam[i] * (2.0 * lam[i] - 1.0))
            grads.append((4.0 * lam[i] - 1.0)[:, None] * dlam[i][None, :])
        for i, j in _MIDPOINT_PAIRS:
            values.append(4.0 * lam[i] * lam[j])
            grads.append(4.0 * (lam[j][:, None] * dlam[i][None, :] + lam[i][:, None] * dlam[j][None, :]))
    return np.stack(values, axis=1), np.stack(grads, axis=1)


def _element_maps(fine):
    corners = fine.nodes[fine.elements[:, :3]]
    jac = np.stack([corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]], axis=-1)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    return corners[:, 0], jac, det


def _physical_points(origin, jac, ref_points):
    return origin[:, None, :] + np.einsum("qk,tlk->tql", ref_points, jac)


def stiffness_matrix(fine):
    rule = triangle_rule(2 * fine.degree)
    _, ref_grads = reference_shapes(fine.degree, rule.points)
    _, jac, det = _element_maps(fine)
    inv_jac = np.linalg.inv(jac)
    grads = np.einsum("qik,tkl->tqil", ref_grads, inv_jac)
    local = np.einsum("q,t,tqik,tqjk->tij", rule.weights, np.abs(det), grads, grads)
    n_loc = fine.elements.shape[1]
    rows = np.repeat(fine.elements, n_loc, axis=1).ravel()
    cols = np.tile(fine.elements, (1, n_loc)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(fine.n_nodes,) * 2).tocsr()


def load_matrix(fine, funcs, order):
    """
    Matrix R with R[i, b] = int N_i f_b for the functions `funcs`.

    Args:
        funcs: callable mapping (n, 2) points to (n, k) values
        order (int): quadrature exactness on each fine triangle
    """
    rule = triangle_rule(order)
    shapes, _ = reference_shapes(fine.degree, rule.points)
    origin, jac, det = _element_maps(fine)
    points = _physical_points(origin, jac, rule.points)
    values = funcs(points.reshape(-1, 2))
    values = values.reshape(points.shape[0], points.shape[1], -1)
    local = np.einsum("q,t,qi,tqb->tib", rule.weights, np.abs(det), shapes, values)
    out = np.zeros((fine.n_nodes, values.shape[2]))
    np.add.at(out, fine.elements, local)
    return out


def _boundary_trace_matrix(geom, layout, fine):
    """Values of every local dof's edge polynomial at the fine boundary nodes."""
    b_nodes = np.flatnonzero(fine.boundary)
    trace = np.zeros((len(b_nodes), layout.size))
    tol = 1e-10 * geom.diameter
    for row, node in enumerate(b_nodes):
        x = fine.nodes[node]
        for e, p_edge in enumerate(layout.edge_degrees):
            a, b = geom.edge(e)
            d = b - a
            s = float(np.dot(x - a, d) / np.dot(d, d))
            if -1e-12 <= s <= 1 + 1e-12 and np.hypot(*(a + s * d - x)) <= tol:
                values = lagrange_matrix(gauss_lobatto_1d(p_edge).points, [2.0 * s - 1.0])[0]
                trace[row, layout.edge_dofs(e)] = values
                break
        else:
            raise SingularSystem(f"fine boundary node {x.tolist()} is on no edge of cell {geom.cell_id}")
    return b_nodes, trace


@dataclass(eq=False)
class VirtualBasisApprox:
    """Fine-mesh nodal values of every local virtual basis function (columns of phi)."""
    geom: object
    layout: object
    fine: FineTriangulation
    stiffness: object
    phi: np.ndarray

    def energy_matrix(self):
        a = self.phi.T @ (self.stiffness @ self.phi)
        return 0.5 * (a + a.T)

    def evaluate(self, dofs, points):
        """Value and gradient of the virtual function with `dofs` at `points`."""
        nodal = self.phi @ np.asarray(dofs, dtype=float)
        origin, jac, _ = _element_maps(self.fine)
        inv_jac = np.linalg.inv(jac)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        values = np.empty(len(points))
        grads = np.empty((len(points), 2))
        for k, x in enumerate(points):
            ref = np.einsum("tij,tj->ti", inv_jac, x - origin)
            lam_min = np.minimum(np.minimum(ref[:, 0], ref[:, 1]), 1.0 - ref[:, 0] - ref[:, 1])
            t = int(np.argmax(lam_min))
            shapes, ref_grads = reference_shapes(self.fine.degree, ref[t][None, :])
            local = nodal[self.fine.elements[t]]
            values[k] = shapes[0] @ local
            grads[k] = (ref_grads[0] @ inv_jac[t]).T @ local
        return values, grads


def approximate_virtual_basis(geom, layout, level, degree=2, moment_basis=None, graded=True):
    """
    Solve the local problems of all virtual basis functions on one fine mesh.

    For dof j the unknowns are the interior fine values and the coefficients of
    the Laplacian in the moment basis; boundary values come from the edge
    polynomials and the moment conditions close the system.

    Raises:
        SingularSystem: if the saddle point system cannot be factorized
    """
    fine = build_fine_triangulation(geom, level, degree, graded)
    p = layout.p
    if moment_basis is None:
        moment_basis = default_basis(geom, p - 2, orthonormal=p >= 5)
    stiffness = stiffness_matrix(fine)
    moments = load_matrix(fine, moment_basis.values, degree + max(p - 2, 0))
    b_nodes, trace = _boundary_trace_matrix(geom, layout, fine)
    interior = np.flatnonzero(~fine.boundary)

    k_ii = stiffness[interior][:, interior]
    k_ib = stiffness[interior][:, b_nodes]
    r_i = sp.csr_matrix(moments[interior])
    r_b = moments[b_nodes]
    n_q = layout.n_moments
    selector = np.zeros((n_q, layout.size))
    selector[:, layout.moment_offset:] = np.eye(n_q)

    rhs_top = -(k_ib @ trace)
    rhs_bottom = -(geom.area * selector - r_b.T @ trace)
    if n_q:
        system = sp.bmat([[k_ii, -r_i], [-r_i.T, None]], format="csc")
        rhs = np.vstack([rhs_top, rhs_bottom])
    else:
        system = k_ii.tocsc()
        rhs = rhs_top
    try:
        solution = splu(system).solve(np.asarray(rhs))
    except RuntimeError as e:
        raise SingularSystem(f"cell {geom.cell_id}: local oracle system is singular: {e}") from e

    phi = np.zeros((fine.n_nodes, layout.size))
    phi[interior] = solution[:len(interior)]
    phi[b_nodes] = trace
    logger.debug("oracle cell %d, p=%d, level %d: %d fine nodes", geom.cell_id, p, level, fine.n_nodes)
    return VirtualBasisApprox(geom=geom, layout=layout, fine=fine, stiffness=stiffness, phi=phi)


def exact_local_stiffness(geom, layout, level, degree=2):
    """Dirichlet energy matrix a_E(phi_i, phi_j) of the virtual basis."""
    return approximate_virtual_basis(geom, layout, level, degree).energy_matrix()


def deflated_eigenvalues(k_local, a_exact, constant_dofs):
    """Generalized eigenvalues of (K, A) on a complement of the constants."""
    complement = scipy.linalg.null_space(constant_dofs[None, :])
    k_r = complement.T @ k_local @ complement
    a_r = complement.T @ a_exact @ complement
    return scipy.linalg.eigh(0.5 * (k_r + k_r.T), 0.5 * (a_r + a_r.T), eigvals_only=True)


@dataclass
class SpectrumReport:
    shape: str
    p: int
    lambda_min: float
    lambda_max: float
    oracle_level: int
    converged: bool
    c_lower_bound: float = float("nan")
    c_upper_bound: float = float("nan")
    stab_kind: str = ""
    stab_h: str = "diameter"
    oracle_change: float = 0.0


def generalized_eigen(geom, layout, stab_kind, oracle_level=None, degree=2, strict=False,
                      shape="", stab_h="diameter", graded=True):
    """
    Extreme eigenvalues of the discrete local form against the exact energy.

    The oracle is evaluated on two consecutive refinement levels; the report
    is marked converged when both extreme eigenvalues change by less than 1%;
    the relative change itself is kept as oracle_change.

    Raises:
        UnconvergedOracle: only with `strict` when the levels disagree
    """
    level = default_oracle_level(layout.p) if oracle_level is None else oracle_level
    if level < 1:
        raise InvalidParameter("oracle level must be at least 1")
    ops = local_operators(geom, layout, stab_kind, stab_h=stab_h)
    constants = dof_vector(geom, layout, lambda x: np.ones(len(x)), ops.rule, ops.moment_basis)
    spectra = []
    for lev in (level - 1, level):
        approx = approximate_virtual_basis(geom, layout, lev, degree, ops.moment_basis, graded)
        eigs = deflated_eigenvalues(ops.k_local, approx.energy_matrix(), constants)
        spectra.append((float(eigs[0]), float(eigs[-1])))
    (min0, max0), (min1, max1) = spectra
    change = max(abs(min1 - min0) / abs(min1), abs(max1 - max0) / abs(max1))
    converged = change < SELF_CONVERGENCE_TOLERANCE
    if not converged:
        message = (f"oracle for cell {geom.cell_id}, p={layout.p} changed by {change:.2%} "
                   f"between levels {level - 1} and {level}")
        if strict:
            raise UnconvergedOracle(message)
        logger.warning(message)
    lower, upper = stability_constants(geom, layout.p)
    return SpectrumReport(shape=shape, p=layout.p, lambda_min=min1, lambda_max=max1,
                          oracle_level=level, converged=converged, c_lower_bound=lower,
                          c_upper_bound=upper, stab_kind=ops.stab_kind.value,
                          stab_h=stab_h, oracle_change=change)


class HMinusOneSolver:
    """
    Dual norm ||q||_{-1} = sup_v int q v / |v|_1 over H^1_0(E), i.e. |w|_1 for
    -Laplace w = q with zero boundary values, on a fixed fine mesh.
    """

    def __init__(self, geom, level=4, degree=2):
        self.geom = geom
        self.fine = build_fine_triangulation(geom, level, degree)
        self.interior = np.flatnonzero(~self.fine.boundary)
        stiffness = stiffness_matrix(self.fine)
        self._lu = splu(stiffness[self.interior][:, self.interior].tocsc())

    def _loads(self, funcs, order):
        return load_matrix(self.fine, funcs, order)[self.interior]

    def gram(self, basis, order=None):
        """Matrix M with c^T M c = ||sum_b c_b q_b||_{-1}^2."""
        if order is None:
            order = self.fine.degree + basis.degree
        loads = self._loads(basis.values, order)
        return loads.T @ self._lu.solve(loads)

    def norm(self, func, order=8):
        loads = self._loads(lambda x: np.asarray(func(x)).reshape(len(x), 1), order)
        return math.sqrt(max(0.0, float(loads[:, 0] @ self._lu.solve(loads[:, 0]))))


def hminus1_norm(geom, q, level=4, degree=2):
    """||q||_{-1,E} of a callable q."""
    return HMinusOneSolver(geom, level, degree).norm(q)
