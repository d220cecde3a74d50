"""Error measures, convergence studies and the local stability experiment."""
import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import linregress

from .assemble import assign_degrees, solve_vem
from .errors import HpVemError
from .fem_quad import fem_assemble_solve
from .mesh import CellGeometry, build_graded_mesh, resolve_family
from .oracle import generalized_eigen
from .polyquad import gauss_legendre_1d, graded_fan_rule, polygon_rule
from .vem_local import StabilizationKind, build_dof_layout, pi_nabla_gradient

logger = logging.getLogger(__name__)

BENCHMARK_EXPONENT = 2.0 / 3.0
SINGULAR_LEVELS = 3
STABILITY_SHAPES = ("square", "decagon", "hexagon", "corner-hexagon")

CONVERGENCE_COLUMNS = ["family", "sigma", "rule", "n", "N", "err_energy", "err_skeleton", "seconds"]
STABILITY_COLUMNS = ["shape", "p", "lambda_min", "lambda_max", "oracle_level", "oracle_change", "converged"]
TABLE_STAB_KIND = StabilizationKind.GLL_BOUNDARY_PLUS_MOMENTS
TABLE_STAB_H = "max-edge"


# --- benchmark ----------------------------------------------------------------

def _polar(points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.hypot(points[:, 0], points[:, 1])
    theta = np.arctan2(points[:, 1], points[:, 0])
    return r, theta, BENCHMARK_EXPONENT * (theta + np.pi / 2.0)


def benchmark_u(points):
    """u = r^(2/3) sin(2/3 (theta + pi/2)), harmonic and zero on both reentrant edges."""
    r, _, phi = _polar(points)
    return r ** BENCHMARK_EXPONENT * np.sin(phi)


def benchmark_grad(points):
    r, theta, phi = _polar(points)
    safe = np.where(r > 0, r, 1.0)
    scale = np.where(r > 0, BENCHMARK_EXPONENT * safe ** (BENCHMARK_EXPONENT - 1.0), 0.0)
    return np.column_stack([scale * np.sin(phi - theta), scale * np.cos(phi - theta)])


@dataclass(frozen=True)
class ExactSolution:
    u: object
    grad: object
    f: object = None


def benchmark_solution():
    return ExactSolution(u=benchmark_u, grad=benchmark_grad, f=None)


# --- error measures -----------------------------------------------------------

def cell_error_rule(mesh, cell, order, levels=SINGULAR_LEVELS):
    """Quadrature for one cell; cells with a vertex at the origin are graded toward it."""
    coords = mesh.cell_coords(cell)
    at_origin = np.flatnonzero(np.all(np.abs(coords) <= 1e-14, axis=1))
    if len(at_origin):
        return graded_fan_rule(coords, int(at_origin[0]), order, levels)
    center = mesh.cells[cell].star_center
    return polygon_rule(coords, order, None if center is None else np.asarray(center))


def exact_seminorm(mesh, grad, order=8):
    """|u|_{1, Omega} by cell-wise quadrature."""
    total = 0.0
    for c in range(mesh.n_cells):
        rule = cell_error_rule(mesh, c, order)
        total += float(rule.weights @ np.sum(grad(rule.points) ** 2, axis=1))
    return math.sqrt(total)


def energy_error_pi(solution, exact_grad, reference_seminorm=None, relative=True):
    """
    Broken H1 error |u - Pi_nabla u_h| over all cells.

    Args:
        solution (VemSolution): solved system
        exact_grad: gradient of the exact solution, callable on (n, 2) points
        reference_seminorm (float): |u|_1 used as denominator; computed on the
            solution mesh when None
        relative (bool): divide by the reference seminorm
    """
    system = solution.system
    mesh = system.mesh
    total = 0.0
    for c, ops in enumerate(system.cell_operators):
        rule = cell_error_rule(mesh, c, 2 * ops.p + 4)
        approx = pi_nabla_gradient(ops, solution.cell_values(c), rule.points)
        total += float(rule.weights @ np.sum((exact_grad(rule.points) - approx) ** 2, axis=1))
    error = math.sqrt(total)
    if not relative:
        return error
    if reference_seminorm is None:
        reference_seminorm = exact_seminorm(mesh, exact_grad)
    return error / reference_seminorm


def skeleton_l2_error(solution, exact_u):
    """
    L2 error on the union of all mesh edges.

    Works for any solution exposing edge_degree(e) and edge_trace(e, s);
    edges ending at the origin are split geometrically toward it.
    """
    mesh = solution.system.mesh
    total = 0.0
    for e, edge in enumerate(mesh.edges):
        a_id, b_id = edge.vertices
        a, b = mesh.vertices[a_id], mesh.vertices[b_id]
        g = gauss_legendre_1d(solution.edge_degree(e) + 6)
        pieces = [(-1.0, 1.0)]
        origin_end = [np.all(np.abs(x) <= 1e-14) for x in (a, b)]
        if any(origin_end):
            cuts = [-1.0 + 2.0 * 0.5 ** k for k in range(SINGULAR_LEVELS + 1)] + [-1.0]
            pieces = [(cuts[k + 1], cuts[k]) for k in range(len(cuts) - 1)]
            if origin_end[1]:
                pieces = [(-hi, -lo) for lo, hi in pieces]
        length = float(np.hypot(*(b - a)))
        for lo, hi in pieces:
            s = lo + (g.points + 1.0) * (hi - lo) / 2.0
            w = g.weights * (hi - lo) / 2.0 * length / 2.0
            x = a + np.outer((s + 1.0) / 2.0, b - a)
            total += float(w @ (exact_u(x) - solution.edge_trace(e, s)) ** 2)
    return math.sqrt(total)


# --- fits -------------------------------------------------------------------------

@dataclass
class LinearFit:
    slope: float
    intercept: float
    r_squared: float

    @property
    def rate(self):
        """b in err ~ exp(-b N^(1/3)) for a fit of log10(err) against N^(1/3)."""
        return -self.slope * math.log(10.0)


def fit_power(xs, ys):
    """Least squares fit of log(y) against log(x); slope is the growth exponent."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    keep = (xs > 0) & (ys > 0) & np.isfinite(ys)
    if keep.sum() < 2:
        return None
    result = linregress(np.log(xs[keep]), np.log(ys[keep]))
    return LinearFit(slope=result.slope, intercept=result.intercept, r_squared=result.rvalue ** 2)


def fit_exponential(records, attr="err_energy", n_min=2):
    """
    Fit log10(error) against N^(1/3), skipping rows with n < n_min and failed rows.

    Returns:
        LinearFit or None when fewer than two rows remain
    """
    rows = [r for r in records if r.n >= n_min and np.isfinite(getattr(r, attr))
            and getattr(r, attr) > 0]
    if len(rows) < 2:
        return None
    x = np.array([r.n_dofs for r in rows], dtype=float) ** (1.0 / 3.0)
    y = np.log10([getattr(r, attr) for r in rows])
    result = linregress(x, y)
    return LinearFit(slope=result.slope, intercept=result.intercept, r_squared=result.rvalue ** 2)


# --- convergence studies ------------------------------------------------------------

@dataclass
class StudyRecord:
    family: str
    sigma: float
    rule: str
    n: int
    n_dofs: int
    err_energy: float
    err_skeleton: float
    seconds: float = float("nan")
    message: str = ""


@dataclass
class StudyResult:
    records: list
    fits: dict = field(default_factory=dict)


def _run_vem_row(args):
    family, sigma, rule, n, stab_kind, stab_h, reference = args
    start = time.perf_counter()
    try:
        mesh = build_graded_mesh(family, n, sigma)
        degrees = assign_degrees(mesh, rule)
        solution = solve_vem(mesh, degrees, stab_kind, f=None, g=benchmark_u, stab_h=stab_h)
        err_energy = energy_error_pi(solution, benchmark_grad, reference)
        err_skeleton = skeleton_l2_error(solution, benchmark_u)
        n_dofs = solution.system.dof_map.n_free
        message = ""
    except HpVemError as e:
        logger.error("%s n=%d sigma=%s failed: %s", family, n, sigma, e)
        n_dofs, err_energy, err_skeleton, message = 0, float("nan"), float("nan"), str(e)
    return StudyRecord(family=family, sigma=sigma, rule=str(rule), n=n, n_dofs=n_dofs,
                       err_energy=err_energy, err_skeleton=err_skeleton,
                       seconds=time.perf_counter() - start, message=message)


def _run_fem_row(args):
    family, sigma, rule, n, _, _, reference = args
    start = time.perf_counter()
    try:
        mesh = build_graded_mesh(family, n, sigma)
        degrees = assign_degrees(mesh, rule)
        solution = fem_assemble_solve(mesh, degrees.cell_degrees, benchmark_u)
        err_energy = solution.energy_error(benchmark_grad) / reference
        err_skeleton = skeleton_l2_error(solution, benchmark_u)
        n_dofs = int((~solution.system.boundary).sum())
        message = ""
    except HpVemError as e:
        logger.error("FEM n=%d sigma=%s failed: %s", n, sigma, e)
        n_dofs, err_energy, err_skeleton, message = 0, float("nan"), float("nan"), str(e)
    return StudyRecord(family=family, sigma=sigma, rule=str(rule), n=n, n_dofs=n_dofs,
                       err_energy=err_energy, err_skeleton=err_skeleton,
                       seconds=time.perf_counter() - start, message=message)


def _map_rows(worker, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(worker, tasks))
    return [worker(t) for t in tasks]


def reference_seminorm(family, n, sigma):
    return exact_seminorm(build_graded_mesh(family, n, sigma), benchmark_grad)


def convergence_study(family, sigma, rule, n_min, n_max, stab_kind=StabilizationKind.BOUNDARY_PLUS_MOMENTS,
                      jobs=1, stab_h="diameter"):
    """
    Benchmark runs for n = n_min..n_max on one family.

    Failed rows are kept with NaN errors. The exponential fit uses
    log10(err_energy) against N^(1/3) for n >= 2.
    """
    family = resolve_family(family)
    reference = reference_seminorm(family, n_max, sigma)
    tasks = [(family, sigma, rule, n, StabilizationKind.parse(stab_kind), stab_h, reference)
             for n in range(n_min, n_max + 1)]
    logger.info("convergence study %s sigma=%s rule=%s: %d runs", family, sigma, rule, len(tasks))
    records = _map_rows(_run_vem_row, tasks, jobs)
    fit = fit_exponential(records)
    if fit is not None:
        logger.info("fit: slope %.4g, R^2 %.4f", fit.slope, fit.r_squared)
    return StudyResult(records=records, fits={family: fit})


def compare_fem(families, sigma, rule, n_min, n_max, stab_kind=StabilizationKind.BOUNDARY_PLUS_MOMENTS,
                jobs=1, stab_h="diameter"):
    """
    Skeleton L2 error of the VEM on the given polygonal families against the
    hp-FEM on the tensor quadrilateral mesh, same grading and degree rule.
    """
    families = [resolve_family(f) for f in families]
    records, fits = [], {}
    for family in families + ["TensorQuadsFEM"]:
        reference = reference_seminorm(family, n_max, sigma)
        tasks = [(family, sigma, rule, n, StabilizationKind.parse(stab_kind), stab_h, reference)
                 for n in range(n_min, n_max + 1)]
        worker = _run_fem_row if family == "TensorQuadsFEM" else _run_vem_row
        rows = _map_rows(worker, tasks, jobs)
        records += rows
        fits[family] = fit_exponential(rows, attr="err_skeleton")
        logger.info("%s: %d rows", family, len(rows))
    return StudyResult(records=records, fits=fits)


# --- stability experiment -------------------------------------------------------

def stability_shape(shape):
    """
    Cell used for the local spectra.

    square: unit square; decagon: outer ring of LayerDecagons (n=3, sigma=1/2);
    hexagon: outer-layer piece of DecagonsCut (same parameters);
    corner-hexagon: layer-0 hexagon of LayerDecagons.
    """
    if shape == "square":
        return CellGeometry.from_coords([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    if shape in ("decagon", "corner-hexagon"):
        mesh = build_graded_mesh("LayerDecagons", 3, 0.5)
        layer = 3 if shape == "decagon" else 0
    elif shape == "hexagon":
        mesh = build_graded_mesh("DecagonsCut", 3, 0.5)
        layer = 3
    else:
        raise HpVemError(f"unknown shape '{shape}', expected one of {STABILITY_SHAPES}")
    cell = mesh.cells_in_layer(layer)[0]
    geom = mesh.cell_geometry(cell)
    return CellGeometry.from_coords(geom.coords, cell_id=0)


def stability_table(shape, p_values, stab_kind=TABLE_STAB_KIND, oracle_level=None, strict=False, jobs=1,
                    stab_h=TABLE_STAB_H):
    """
    Extreme generalized eigenvalues of (K_local, exact energy) on one cell for each p.

    Defaults to GLL boundary quadrature with h the longest edge, the variant
    the reference spectra were computed with. Unconverged oracle rows are
    kept and flagged by `converged` and `oracle_change`.
    """
    geom = stability_shape(shape)
    tasks = [(shape, geom, p, stab_kind, oracle_level, strict, stab_h) for p in p_values]
    reports = _map_rows(_stability_row, tasks, jobs)
    for report in reports:
        logger.info("%s p=%d: lambda_min %.5g lambda_max %.5g", shape, report.p,
                    report.lambda_min, report.lambda_max)
    return reports


def _stability_row(args):
    shape, geom, p, stab_kind, oracle_level, strict, stab_h = args
    layout = build_dof_layout(geom, p)
    return generalized_eigen(geom, layout, stab_kind, oracle_level, strict=strict, shape=shape, stab_h=stab_h)


def decay_exponent(reports):
    """Fitted exponent of lambda_min against p."""
    fit = fit_power([r.p for r in reports], [r.lambda_min for r in reports])
    return None if fit is None else fit.slope


# --- CSV output -----------------------------------------------------------------

def csv_text(config_hash, columns, rows):
    buffer = io.StringIO()
    buffer.write(f"# config_hash={config_hash}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buffer.getvalue()


def format_float(value):
    return "nan" if value is None or not np.isfinite(value) else repr(float(value))


def study_csv(records, config_hash, timings=False):
    rows = [[r.family, repr(float(r.sigma)), r.rule, r.n, r.n_dofs, format_float(r.err_energy),
             format_float(r.err_skeleton), format_float(r.seconds) if timings else ""] for r in records]
    return csv_text(config_hash, CONVERGENCE_COLUMNS, rows)


def stability_csv(reports, config_hash):
    rows = [[r.shape, r.p, format_float(r.lambda_min), format_float(r.lambda_max), r.oracle_level,
             format_float(r.oracle_change), str(bool(r.converged)).lower()] for r in reports]
    return csv_text(config_hash, STABILITY_COLUMNS, rows)
