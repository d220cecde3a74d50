"""Global hp virtual element systems on a graded mesh.

Global dof numbering: mesh vertices first (dof = vertex id), then the
interior edge dofs (edge by edge, ordered from the lower to the higher
vertex id), then the moment dofs cell by cell.
"""
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, splu

from . import __version__
from .errors import InvalidDegree, NoConvergence, NotSPD, SingularSystem
from .fs_utils import read_text, write_text
from .polyquad import gauss_lobatto_1d, lagrange_matrix
from .vem_local import StabilizationKind, build_dof_layout, local_load, local_operators

logger = logging.getLogger(__name__)

DIRECT_SOLVER_LIMIT = 200_000
RESIDUAL_TOLERANCE = 1e-10


@dataclass(frozen=True)
class Uniform:
    k: int

    def __str__(self):
        return f"uniform:{self.k}"


@dataclass(frozen=True)
class Layered:
    mu: float

    def __str__(self):
        return f"layered:{self.mu!r}"


@dataclass(frozen=True)
class UniformLayers:
    """Uniform degree equal to the number of layers, n + 1."""

    def __str__(self):
        return "uniform:n+1"


@dataclass
class DegreeAssignment:
    rule: object
    cell_degrees: list
    edge_degrees: list

    def max_degree(self):
        return max(self.cell_degrees)


def layer_degree(rule, layer, n):
    if isinstance(rule, Uniform):
        return rule.k
    if isinstance(rule, UniformLayers):
        return n + 1
    if layer == 0:
        return 2
    return max(2, math.ceil(rule.mu * (layer + 1) - 1e-12))


def assign_degrees(mesh, rule):
    """
    Cell degrees from the rule and edge degrees by the maximum rule.

    Raises:
        InvalidDegree: for a uniform degree below 2 or a non-positive slope
    """
    if isinstance(rule, Uniform) and rule.k < 2:
        raise InvalidDegree(f"uniform degree must be >= 2, got {rule.k}")
    if isinstance(rule, Layered) and not rule.mu > 0:
        raise InvalidDegree(f"layered slope must be positive, got {rule.mu}")
    if not isinstance(rule, (Uniform, Layered, UniformLayers)):
        raise InvalidDegree(f"unknown degree rule {rule!r}")
    cell_degrees = [layer_degree(rule, cell.layer, mesh.n) for cell in mesh.cells]
    edge_degrees = [max(cell_degrees[c] for c in edge.cells) for edge in mesh.edges]
    return DegreeAssignment(rule=rule, cell_degrees=cell_degrees, edge_degrees=edge_degrees)


@dataclass(eq=False)
class DofMap:
    n_dofs: int
    edge_offsets: list
    moment_offsets: list
    cell_dofs: list
    boundary: np.ndarray

    @property
    def free(self):
        return np.flatnonzero(~self.boundary)

    @property
    def n_free(self):
        return int((~self.boundary).sum())


def build_dof_map(mesh, degrees):
    n_vertices = len(mesh.vertices)
    offset = n_vertices
    edge_offsets = []
    for d in degrees.edge_degrees:
        edge_offsets.append(offset)
        offset += d - 1
    moment_offsets, cell_dofs = [], []
    layouts = []
    for c in range(mesh.n_cells):
        geom = mesh.cell_geometry(c)
        edges = mesh.cell_edges(c)
        layout = build_dof_layout(geom, degrees.cell_degrees[c],
                                  [degrees.edge_degrees[e] for e in edges])
        layouts.append(layout)
        moment_offsets.append(offset)
        offset += layout.n_moments
        dofs = list(geom.vertex_ids)
        for e in edges:
            dofs += range(edge_offsets[e], edge_offsets[e] + degrees.edge_degrees[e] - 1)
        dofs += range(moment_offsets[-1], moment_offsets[-1] + layout.n_moments)
        cell_dofs.append(np.array(dofs, dtype=int))
    boundary = np.zeros(offset, dtype=bool)
    for e in mesh.boundary_edges():
        boundary[list(mesh.edges[e].vertices)] = True
        boundary[edge_offsets[e]:edge_offsets[e] + degrees.edge_degrees[e] - 1] = True
    return DofMap(n_dofs=offset, edge_offsets=edge_offsets, moment_offsets=moment_offsets,
                  cell_dofs=cell_dofs, boundary=boundary), layouts


def dof_coordinates(mesh, degrees, dof_map):
    """Coordinates of all vertex and edge dofs (moment rows are NaN)."""
    coords = np.full((dof_map.n_dofs, 2), np.nan)
    coords[:len(mesh.vertices)] = mesh.vertices
    for e, edge in enumerate(mesh.edges):
        d = degrees.edge_degrees[e]
        a, b = mesh.vertices[edge.vertices[0]], mesh.vertices[edge.vertices[1]]
        t = gauss_lobatto_1d(d).points[1:-1]
        start = dof_map.edge_offsets[e]
        coords[start:start + d - 1] = a + np.outer((t + 1.0) / 2.0, b - a)
    return coords


@dataclass(eq=False)
class GlobalSystem:
    mesh: object
    degrees: DegreeAssignment
    dof_map: DofMap
    stiffness: object
    load: np.ndarray
    stab_kind: StabilizationKind
    cell_operators: list = field(repr=False, default_factory=list)
    stab_h: str = "diameter"


def _cell_task(args):
    geom, layout, stab_kind, f, stab_h = args
    ops = local_operators(geom, layout, stab_kind, stab_h=stab_h)
    return ops, local_load(ops, f)


def assemble_global(mesh, degrees, stab_kind=StabilizationKind.BOUNDARY_PLUS_MOMENTS, f=None,
                    jobs=1, stab_h="diameter"):
    """
    Assemble the global stiffness matrix and load vector.

    Args:
        mesh (PolygonalMesh): the mesh
        degrees (DegreeAssignment): cell and edge degrees
        stab_kind: stabilization of every local matrix
        f: source term callable on (n, 2) points, None for f = 0
        jobs (int): worker processes for the local matrices; f must be
            picklable when jobs > 1
        stab_h (str): length h of the stabilization weights, see local_operators

    Returns:
        GlobalSystem
    """
    stab_kind = StabilizationKind.parse(stab_kind)
    dof_map, layouts = build_dof_map(mesh, degrees)
    tasks = [(mesh.cell_geometry(c), layouts[c], stab_kind, f, stab_h) for c in range(mesh.n_cells)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(_cell_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_cell_task(t) for t in tasks]

    rows, cols, vals = [], [], []
    load = np.zeros(dof_map.n_dofs)
    for dofs, (ops, cell_load) in zip(dof_map.cell_dofs, results):
        k = ops.k_local
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        vals.append(k.ravel())
        np.add.at(load, dofs, cell_load)
    stiffness = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(dof_map.n_dofs,) * 2).tocsr()
    logger.info("assembled %s mesh n=%d: %d dofs, %d free", mesh.family, mesh.n,
                dof_map.n_dofs, dof_map.n_free)
    return GlobalSystem(mesh=mesh, degrees=degrees, dof_map=dof_map, stiffness=stiffness,
                        load=load, stab_kind=stab_kind, cell_operators=[r[0] for r in results],
                        stab_h=stab_h)


@dataclass(eq=False)
class ReducedSystem:
    matrix: object
    rhs: np.ndarray
    free: np.ndarray
    boundary_values: np.ndarray


def apply_dirichlet(system, g):
    """
    Eliminate the boundary dofs symmetrically.

    Boundary dofs take the nodal values of g at the vertices and edge GLL nodes.

    Args:
        g: callable on (n, 2) points, or None for homogeneous data
    """
    dof_map = system.dof_map
    values = np.zeros(dof_map.n_dofs)
    boundary = np.flatnonzero(dof_map.boundary)
    if g is not None and len(boundary):
        coords = dof_coordinates(system.mesh, system.degrees, dof_map)
        values[boundary] = g(coords[boundary])
    free = dof_map.free
    k = system.stiffness
    k_ff = k[free][:, free]
    rhs = system.load[free] - k[free][:, boundary] @ values[boundary]
    return ReducedSystem(matrix=k_ff, rhs=rhs, free=free, boundary_values=values)


def _check_spd(matrix):
    diag = matrix.diagonal()
    if np.any(diag <= 0):
        raise NotSPD(f"{int((diag <= 0).sum())} non-positive diagonal entries")
    asym = abs(matrix - matrix.T).max() if matrix.nnz else 0.0
    if asym > 1e-10 * abs(diag).max():
        raise NotSPD(f"matrix is not symmetric (max asymmetry {asym:.3g})")


def solve(reduced, direct_limit=DIRECT_SOLVER_LIMIT):
    """
    Solve the reduced system and return the full dof vector.

    Sparse LU up to `direct_limit` unknowns, Jacobi preconditioned CG above.

    Raises:
        NotSPD: non-positive diagonal or asymmetric matrix
        SingularSystem: LU factorization failed
        NoConvergence: relative residual above 1e-10
    """
    matrix = reduced.matrix.tocsc()
    n = matrix.shape[0]
    values = reduced.boundary_values.copy()
    if n == 0:
        return values
    _check_spd(matrix)
    if n <= direct_limit:
        try:
            x = splu(matrix).solve(reduced.rhs)
        except RuntimeError as e:
            raise SingularSystem(f"sparse LU failed: {e}") from e
    else:
        inv_diag = 1.0 / matrix.diagonal()
        preconditioner = LinearOperator((n, n), matvec=lambda r: inv_diag * r)
        x, info = cg(matrix, reduced.rhs, rtol=1e-12, maxiter=10 * n, M=preconditioner)
        if info != 0:
            raise NoConvergence(f"CG stopped with info={info}")
    norm_rhs = np.linalg.norm(reduced.rhs)
    residual = np.linalg.norm(matrix @ x - reduced.rhs) / (norm_rhs if norm_rhs > 0 else 1.0)
    if not residual <= RESIDUAL_TOLERANCE:
        raise NoConvergence(f"relative residual {residual:.3g} above {RESIDUAL_TOLERANCE}")
    logger.debug("solved %d unknowns, relative residual %.3g", n, residual)
    values[reduced.free] = x
    return values


def galerkin_residual(system, u, v):
    """a_h(u, v) - (f_h, v) for a test dof vector v vanishing on the boundary."""
    return float(v @ (system.stiffness @ u) - v @ system.load)


@dataclass(eq=False)
class VemSolution:
    """Solved dof vector together with its system."""
    system: GlobalSystem
    values: np.ndarray
    kind: str = "vem"

    def edge_degree(self, edge):
        return self.system.degrees.edge_degrees[edge]

    def edge_trace(self, edge, s):
        """Values of the solution on mesh edge `edge` at parameters s in [-1, 1], low to high id."""
        system = self.system
        d = system.degrees.edge_degrees[edge]
        a, b = system.mesh.edges[edge].vertices
        start = system.dof_map.edge_offsets[edge]
        nodal = np.concatenate([[self.values[a]], self.values[start:start + d - 1], [self.values[b]]])
        return lagrange_matrix(gauss_lobatto_1d(d).points, s) @ nodal

    def cell_values(self, cell):
        return self.values[self.system.dof_map.cell_dofs[cell]]


def solve_vem(mesh, degrees, stab_kind=StabilizationKind.BOUNDARY_PLUS_MOMENTS, f=None, g=None,
              jobs=1, stab_h="diameter"):
    system = assemble_global(mesh, degrees, stab_kind, f, jobs, stab_h)
    return VemSolution(system=system, values=solve(apply_dirichlet(system, g)))


def solution_document(solution, provenance=None):
    """JSON-ready description of a solution, dof map and provenance."""
    system = solution.system
    mesh = system.mesh
    return {
        "kind": solution.kind,
        "version": __version__,
        "family": mesh.family,
        "sigma": float(mesh.sigma),
        "n": int(mesh.n),
        "cell_degrees": [int(d) for d in system.degrees.cell_degrees],
        "edge_degrees": [int(d) for d in system.degrees.edge_degrees],
        "dof_map": {
            "n_dofs": int(system.dof_map.n_dofs),
            "edge_offsets": [int(o) for o in system.dof_map.edge_offsets],
            "moment_offsets": [int(o) for o in system.dof_map.moment_offsets],
            "boundary": [int(i) for i in np.flatnonzero(system.dof_map.boundary)],
        },
        "values": [float(v) for v in solution.values],
        "provenance": dict(provenance or {}, stab_kind=system.stab_kind.value, stab_h=system.stab_h),
    }


def write_solution(solution, path_or_url, provenance=None):
    write_text(path_or_url, json.dumps(solution_document(solution, provenance), indent=1) + "\n")
    logger.info("wrote solution with %d dofs to %s", len(solution.values), path_or_url)


def read_solution(path_or_url):
    """Solution document written by write_solution, with `values` as an array."""
    doc = json.loads(read_text(path_or_url))
    doc["values"] = np.asarray(doc["values"], dtype=float)
    return doc
