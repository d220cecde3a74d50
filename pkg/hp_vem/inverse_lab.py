"""
Numerical extremal constants of polynomial inverse estimates.

Each lab sweeps the degree p, computes (or samples) the worst ratio of two
norms over P_p and fits the growth of that ratio in p.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.polynomial.legendre import legvander

from .analysis import csv_text, fit_power, format_float, stability_shape
from .errors import InvalidParameter
from .oracle import HMinusOneSolver
from .polyquad import default_basis, dubiner_basis, gauss_jacobi_1d, gauss_lobatto_1d, triangle_rule

logger = logging.getLogger(__name__)

INVERSE_TESTS = ("weighted", "gll", "triangle", "hminus1", "bubble")
INVERSE_COLUMNS = ["test", "p", "constant", "fitted_exponent"]

# sweeps are fitted from this degree on, over their upper half, when enough points remain
FIT_FROM_DEGREE = 2
MAX_DEGREE = {"weighted": 30, "gll": 40, "triangle": 30, "hminus1": 12, "bubble": 30}
POWER_ITERATIONS = 50


@dataclass
class InverseLabRecord:
    test: str
    p: int
    constant: float
    fitted_exponent: float = float("nan")
    exact: float = float("nan")
    sampled: float = float("nan")
    bound_ok: bool = True


def _check_degrees(test, p_values):
    p_values = [int(p) for p in p_values]
    if not p_values:
        raise InvalidParameter(f"{test}: empty degree range")
    bad = [p for p in p_values if p < 0 or p > MAX_DEGREE[test]]
    if bad:
        raise InvalidParameter(f"{test}: degrees {bad} outside 0..{MAX_DEGREE[test]}")
    return p_values


def _fit_sweep(records, shift):
    """
    Set the fitted exponent of constant against p + shift on every record.

    Only the upper half of the sweep is fitted when it holds two or more
    degrees from FIT_FROM_DEGREE on; short sweeps fall back to every usable
    degree.
    """
    usable = [r for r in records if r.p + shift > 0 and r.constant > 0]
    late = [r for r in usable if r.p >= FIT_FROM_DEGREE]
    if late:
        tail = [r for r in late if r.p >= np.median([r.p for r in late])]
        if len(tail) >= 2:
            usable = tail
        elif len(late) >= 2:
            usable = late
    fit = fit_power([r.p + shift for r in usable], [r.constant for r in usable])
    exponent = float("nan") if fit is None else fit.slope
    for r in records:
        r.fitted_exponent = exponent
    if records:
        logger.info("%s: fitted exponent %.4g", records[0].test, exponent)
    return records


def _normalized_legendre(p, x):
    """Values of sqrt((2k+1)/2) L_k(x), k = 0..p, shape (len(x), p+1)."""
    scale = np.sqrt((2.0 * np.arange(p + 1) + 1.0) / 2.0)
    return legvander(np.asarray(x, dtype=float), p) * scale


def _max_generalized_eig(a, b):
    return float(scipy.linalg.eigh(a, b, eigvals_only=True)[-1])


def _gram(values, weights):
    return values.T @ (weights[:, None] * values)


def inverse_lab_weighted(p_values, alpha=0.0, beta=1.0):
    """
    sup over P_p of int (1-x^2)^alpha q^2 / int (1-x^2)^beta q^2.

    Both forms are integrated exactly with Gauss-Jacobi rules; the supremum
    is the largest generalized eigenvalue in the normalized Legendre basis.
    Fitted against p + 1.
    """
    if alpha < 0 or beta < alpha or beta > 3:
        raise InvalidParameter(f"weighted lab needs 0 <= alpha <= beta <= 3, got alpha={alpha}, beta={beta}")
    p_values = _check_degrees("weighted", p_values)
    records = []
    for p in p_values:
        rule_a = gauss_jacobi_1d(p + 1, alpha, alpha)
        rule_b = gauss_jacobi_1d(p + 1, beta, beta)
        mass_a = _gram(_normalized_legendre(p, rule_a.points), rule_a.weights)
        mass_b = _gram(_normalized_legendre(p, rule_b.points), rule_b.weights)
        constant = _max_generalized_eig(mass_a, mass_b)
        logger.debug("weighted p=%d: %.6g", p, constant)
        records.append(InverseLabRecord(test="weighted", p=p, constant=constant))
    return _fit_sweep(records, shift=1)


def inverse_lab_gll(p_values, samples=500, seed=0):
    """
    Equivalence of the L2 norm and its GLL quadrature on P_p.

    The record constant is the exact minimum over P_p of ||q||^2 / S(q), S
    being the (p+1)-point GLL sum; it is also kept as `exact`. Random q are
    sampled as well: the worst sampled ratio goes to `sampled`, which lies
    above the constant and varies with the seed, and `bound_ok` is False if
    any sample broke the upper inequality ||q||^2 <= S(q).
    """
    if samples < 1:
        raise InvalidParameter(f"gll lab needs at least one sample, got {samples}")
    p_values = _check_degrees("gll", p_values)
    records = []
    for p in p_values:
        rule = gauss_lobatto_1d(max(p, 1))
        values = _normalized_legendre(p, rule.points)
        gll_mass = _gram(values, rule.weights)
        rng = np.random.default_rng([seed, p])
        coeffs = rng.standard_normal((samples, p + 1))
        exact_norms = np.sum(coeffs ** 2, axis=1)
        discrete = np.einsum("si,ij,sj->s", coeffs, gll_mass, coeffs)
        ratios = exact_norms / discrete
        bound_ok = bool(np.all(ratios <= 1.0 + 1e-12))
        if not bound_ok:
            logger.warning("gll p=%d: upper inequality broken, max ratio %.15g", p, ratios.max())
        exact = float(scipy.linalg.eigh(np.eye(p + 1), gll_mass, eigvals_only=True)[0])
        records.append(InverseLabRecord(test="gll", p=p, constant=exact, exact=exact,
                                        sampled=float(ratios.min()), bound_ok=bound_ok))
        logger.debug("gll p=%d: worst sampled %.6g, exact %.6g", p, ratios.min(), exact)
    return _fit_sweep(records, shift=1)


def inverse_lab_triangle(p_values):
    """
    sup over P_p of |q|_1 / ||q||_0 on the reference triangle.

    Stiffness against mass in the orthonormal Dubiner basis. Fitted against p.
    """
    p_values = _check_degrees("triangle", p_values)
    records = []
    for p in p_values:
        basis = dubiner_basis(p, orthonormal=True)
        rule = triangle_rule(2 * p)
        grads = basis.gradients(rule.points)
        stiffness = np.einsum("q,qik,qjk->ij", rule.weights, grads, grads)
        mass = _gram(basis.values(rule.points), rule.weights)
        constant = math.sqrt(max(0.0, _max_generalized_eig(stiffness, mass))) if p > 0 else 0.0
        logger.debug("triangle p=%d: %.6g", p, constant)
        records.append(InverseLabRecord(test="triangle", p=p, constant=constant))
    return _fit_sweep(records, shift=0)


def _power_refine(h_matrix, start, iterations=POWER_ITERATIONS):
    """Inverse iteration on the H^-1 Gram matrix from the best sampled direction."""
    lu = scipy.linalg.lu_factor(h_matrix)
    c = start / np.linalg.norm(start)
    for _ in range(iterations):
        c = scipy.linalg.lu_solve(lu, c)
        c /= np.linalg.norm(c)
    return c


def inverse_lab_hminus1(p_values, shape="square", samples=200, seed=0, level=4):
    """
    sup over P_p of ||q||_0 / ||q||_{-1} on one cell, scaled by the cell diameter.

    The dual norm comes from a P2 Dirichlet solve on a fine subtriangulation.
    The supremum is searched over random coefficient vectors in an L2
    orthonormal basis, then refined by inverse iteration. Fitted against p + 1.
    """
    if samples < 1:
        raise InvalidParameter(f"hminus1 lab needs at least one sample, got {samples}")
    p_values = _check_degrees("hminus1", p_values)
    geom = stability_shape(shape)
    solver = HMinusOneSolver(geom, level)
    records = []
    for p in p_values:
        basis = default_basis(geom, p, orthonormal=True)
        h_matrix = solver.gram(basis, order=2 * p + 4)
        h_matrix = (h_matrix + h_matrix.T) / 2.0
        rng = np.random.default_rng([seed, p])
        coeffs = rng.standard_normal((samples, basis.size))
        dual = np.einsum("si,ij,sj->s", coeffs, h_matrix, coeffs)
        keep = dual > 0
        if not np.any(keep):
            raise InvalidParameter(f"hminus1 p={p}: no sample with a positive dual norm")
        ratios = np.sum(coeffs[keep] ** 2, axis=1) / dual[keep]
        best = coeffs[keep][int(np.argmax(ratios))]
        refined = _power_refine(h_matrix, best)
        ratio = max(float(ratios.max()), 1.0 / float(refined @ h_matrix @ refined))
        constant = math.sqrt(ratio) * geom.diameter
        logger.debug("hminus1 p=%d: %.6g", p, constant)
        records.append(InverseLabRecord(test="hminus1", p=p, constant=constant))
    return _fit_sweep(records, shift=1)


def _bubble(points):
    x, y = points[:, 0], points[:, 1]
    value = 27.0 * x * y * (1.0 - x - y)
    grad = 27.0 * np.column_stack([y * (1.0 - 2.0 * x - y), x * (1.0 - x - 2.0 * y)])
    return value, grad


def inverse_lab_bubble(p_values):
    """
    sup over P_p of |q b|_1 / ||q b^(1/2)||_0 on the reference triangle, b the
    cubic bubble 27 l1 l2 l3. Fitted against p + 1.
    """
    p_values = _check_degrees("bubble", p_values)
    records = []
    for p in p_values:
        basis = dubiner_basis(p, orthonormal=True)
        rule = triangle_rule(2 * p + 6)
        b, grad_b = _bubble(rule.points)
        values = basis.values(rule.points)
        grads = (b[:, None, None] * basis.gradients(rule.points)
                 + values[:, :, None] * grad_b[:, None, :])
        stiffness = np.einsum("q,qik,qjk->ij", rule.weights, grads, grads)
        mass = _gram(values, rule.weights * b)
        constant = math.sqrt(_max_generalized_eig(stiffness, mass))
        logger.debug("bubble p=%d: %.6g", p, constant)
        records.append(InverseLabRecord(test="bubble", p=p, constant=constant))
    return _fit_sweep(records, shift=1)


def run_inverse_lab(test, p_values, samples=None, seed=0, shape="square", alpha=0.0, beta=1.0):
    """Dispatch one lab by its test id."""
    if test == "weighted":
        return inverse_lab_weighted(p_values, alpha, beta)
    if test == "gll":
        return inverse_lab_gll(p_values, samples or 500, seed)
    if test == "triangle":
        return inverse_lab_triangle(p_values)
    if test == "hminus1":
        return inverse_lab_hminus1(p_values, shape, samples or 200, seed)
    if test == "bubble":
        return inverse_lab_bubble(p_values)
    raise InvalidParameter(f"unknown inverse test '{test}', expected one of {', '.join(INVERSE_TESTS)}")


def inverse_lab_csv(records, config_hash):
    rows = [[r.test, r.p, format_float(r.constant), format_float(r.fitted_exponent)] for r in records]
    return csv_text(config_hash, INVERSE_COLUMNS, rows)
