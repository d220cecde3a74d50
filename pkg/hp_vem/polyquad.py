"""Quadrature rules and polynomial bases on intervals, triangles and polygons.

Polygon rules are built by splitting the cell into triangles, either as a fan
from an interior point of its kernel or by ear clipping, and mapping a
collapsed Gauss rule onto every triangle.
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy.special import eval_jacobi, roots_jacobi

from .errors import IllConditioned, InvalidParameter
from .mesh import ear_clip, fan_triangles

logger = logging.getLogger(__name__)

# polynomial degree from which bases are orthonormalized by default
ORTHONORMALIZE_FROM_DEGREE = 5


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def integrate(self, values):
        return float(np.dot(self.weights, values))

    def __len__(self):
        return len(self.weights)


def _frozen(array):
    array = np.ascontiguousarray(array, dtype=float)
    array.setflags(write=False)
    return array


def legendre_eval(k, x):
    """
    Evaluate the Legendre polynomial L_k and its derivative.

    Args:
        k (int): degree, k >= 0
        x (array-like): evaluation points

    Returns:
        tuple: (values, derivatives), arrays shaped like x
    """
    x = np.asarray(x, dtype=float)
    if k == 0:
        return np.ones_like(x), np.zeros_like(x)
    p_prev, p = np.ones_like(x), x.copy()
    d_prev, d = np.zeros_like(x), np.ones_like(x)
    for j in range(1, k):
        p_next = ((2 * j + 1) * x * p - j * p_prev) / (j + 1)
        d_next = d_prev + (2 * j + 1) * p
        p_prev, p = p, p_next
        d_prev, d = d, d_next
    return p, d


@lru_cache(maxsize=None)
def gauss_lobatto_1d(p):
    """
    Gauss-Lobatto-Legendre rule with p+1 nodes on [-1, 1].

    The interior nodes are the roots of L_p', found by Newton iteration from
    the Chebyshev-Lobatto points. The rule integrates degree 2p-1 exactly.
    """
    if p < 1:
        raise InvalidParameter(f"Gauss-Lobatto rule needs p >= 1, got {p}")
    x = -np.cos(np.pi * np.arange(p + 1) / p)
    interior = x[1:-1].copy()
    for _ in range(100):
        if interior.size == 0:
            break
        lp, dlp = legendre_eval(p, interior)
        d2lp = (2.0 * interior * dlp - p * (p + 1) * lp) / (1.0 - interior ** 2)
        step = dlp / d2lp
        interior -= step
        if np.max(np.abs(step)) < 1e-16:
            break
    x[1:-1] = interior
    x[0], x[-1] = -1.0, 1.0
    lp, _ = legendre_eval(p, x)
    weights = 2.0 / (p * (p + 1) * lp ** 2)
    return QuadratureRule(_frozen(x), _frozen(weights), 2 * p - 1)


def gll_nodes(p):
    return gauss_lobatto_1d(p).points


@lru_cache(maxsize=None)
def gauss_legendre_1d(n):
    """Gauss-Legendre rule with n points on [-1, 1], exact to degree 2n-1."""
    if n < 1:
        raise InvalidParameter(f"Gauss rule needs n >= 1, got {n}")
    points, weights = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(_frozen(points), _frozen(weights), 2 * n - 1)


@lru_cache(maxsize=None)
def gauss_jacobi_1d(n, alpha, beta):
    """Gauss-Jacobi rule for the weight (1-x)^alpha (1+x)^beta on [-1, 1]."""
    points, weights = roots_jacobi(n, alpha, beta)
    return QuadratureRule(_frozen(points), _frozen(weights), 2 * n - 1)


def gauss_for_degree(degree):
    return gauss_legendre_1d(max(1, math.ceil((degree + 1) / 2)))


def lagrange_matrix(nodes, x):
    """
    Values of the Lagrange basis on `nodes` at the points `x`.

    Uses the barycentric form, so it stays stable for GLL nodes of high degree.

    Returns:
        np.ndarray: shape (len(x), len(nodes)), entry [i, j] is l_j(x_i)
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    bary = 1.0 / np.prod(diff, axis=1)
    d = x[:, None] - nodes[None, :]
    exact = np.abs(d) < 1e-15
    d[exact] = 1.0
    terms = bary[None, :] / d
    mat = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    mat[rows] = exact[rows].astype(float)
    return mat


@lru_cache(maxsize=None)
def triangle_rule(order):
    """
    Rule on the reference triangle {x, y >= 0, x + y <= 1}.

    Collapsed (Duffy) tensor Gauss rule, exact for polynomials of total
    degree <= order.
    """
    if order < 0:
        raise InvalidParameter(f"negative quadrature order {order}")
    n = max(1, math.ceil((order + 2) / 2))
    g = gauss_legendre_1d(n)
    s = (g.points + 1.0) / 2.0
    w = g.weights / 2.0
    ss, tt = np.meshgrid(s, s, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    points = np.column_stack([ss.ravel(), (tt * (1.0 - ss)).ravel()])
    weights = (ws * wt * (1.0 - ss)).ravel()
    return QuadratureRule(_frozen(points), _frozen(weights), order)


def map_triangle_rule(triangles, rule):
    """Map a reference triangle rule onto each triangle in `triangles` (k, 3, 2)."""
    triangles = np.asarray(triangles, dtype=float)
    if triangles.size == 0:
        return QuadratureRule(np.zeros((0, 2)), np.zeros(0), rule.exactness_degree)
    a = triangles[:, 0, :]
    e1 = triangles[:, 1, :] - a
    e2 = triangles[:, 2, :] - a
    det = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    ref = rule.points
    points = (a[:, None, :] + ref[None, :, 0, None] * e1[:, None, :]
              + ref[None, :, 1, None] * e2[:, None, :])
    weights = det[:, None] * rule.weights[None, :]
    return QuadratureRule(points.reshape(-1, 2), weights.ravel(), rule.exactness_degree)


def polygon_rule(coords, order, center=None):
    """
    Quadrature rule on a simple polygon, exact for polynomials of degree <= order.

    Args:
        coords (np.ndarray): (m, 2) vertices in counter-clockwise order
        order (int): polynomial exactness
        center (array-like or None): kernel point for a fan split; when None
            the polygon is ear clipped

    Returns:
        QuadratureRule
    """
    coords = np.asarray(coords, dtype=float)
    if center is None:
        triangles = ear_clip(coords)
    else:
        triangles = fan_triangles(coords, center)
    return map_triangle_rule(np.array(triangles), triangle_rule(order))


def graded_fan_rule(coords, apex_index, order, levels=3):
    """
    Rule for integrands singular at one polygon vertex.

    The polygon is fanned from the vertex `apex_index`; every fan triangle is
    split `levels` times at the midpoints of its two apex edges, halving the
    triangle touching the apex each time.
    """
    coords = np.asarray(coords, dtype=float)
    apex = coords[apex_index]
    m = len(coords)
    pieces = []
    for k in range(1, m - 1):
        b = coords[(apex_index + k) % m]
        c = coords[(apex_index + k + 1) % m]
        area = abs((b[0] - apex[0]) * (c[1] - apex[1]) - (b[1] - apex[1]) * (c[0] - apex[0]))
        if area < 1e-14 * max(np.sum((b - apex) ** 2), np.sum((c - apex) ** 2)):
            continue
        for _ in range(levels):
            mb = (apex + b) / 2.0
            mc = (apex + c) / 2.0
            # outer trapezoid b, c, mc, mb as two triangles
            pieces.append([mb, b, c])
            pieces.append([mb, c, mc])
            b, c = mb, mc
        pieces.append([apex, b, c])
    return map_triangle_rule(np.array(pieces), triangle_rule(order))


def monomial_exponents(p):
    """Exponents (a, b) of all monomials of total degree <= p, grouped by degree."""
    return np.array([(i, d - i) for d in range(p + 1) for i in range(d, -1, -1)],
                    dtype=int).reshape(-1, 2)


def basis_size(p):
    return 0 if p < 0 else (p + 1) * (p + 2) // 2


@dataclass(eq=False)
class PolyBasis:
    """
    Basis of P_p on one cell.

    Members are linear combinations of raw functions (scaled monomials about
    `center` with scale `h`, or Dubiner polynomials on the reference
    triangle): basis_j = sum_i raw_i * change[i, j].
    """
    cell_id: int
    degree: int
    kind: str
    center: np.ndarray
    h: float
    exponents: np.ndarray
    change: np.ndarray
    family: str = "monomial"

    @property
    def size(self):
        return self.change.shape[1]

    def raw_values(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.family == "dubiner":
            return _dubiner_raw(points, self.exponents)[0]
        x = (points[:, 0:1] - self.center[0]) / self.h
        y = (points[:, 1:2] - self.center[1]) / self.h
        return x ** self.exponents[None, :, 0] * y ** self.exponents[None, :, 1]

    def raw_gradients(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.family == "dubiner":
            return _dubiner_raw(points, self.exponents)[1]
        x = (points[:, 0:1] - self.center[0]) / self.h
        y = (points[:, 1:2] - self.center[1]) / self.h
        a = self.exponents[None, :, 0]
        b = self.exponents[None, :, 1]
        dx = a * x ** np.maximum(a - 1, 0) * y ** b / self.h
        dy = b * x ** a * y ** np.maximum(b - 1, 0) / self.h
        return np.stack([dx, dy], axis=-1)

    def values(self, points):
        """Basis values, shape (n_points, size)."""
        return self.raw_values(points) @ self.change

    def gradients(self, points):
        """Basis gradients, shape (n_points, size, 2)."""
        return np.einsum("pik,ij->pjk", self.raw_gradients(points), self.change)

    def laplacian_in(self, target):
        """
        Coefficients of the Laplacian of every member in the basis `target`.

        `target` must be a monomial-family basis of degree self.degree - 2 on
        the same cell.

        Returns:
            np.ndarray: shape (target.size, self.size)
        """
        if self.family != "monomial" or target.family != "monomial":
            raise InvalidParameter("laplacian_in needs monomial-family bases")
        if target.degree < 0:
            return np.zeros((0, self.size))
        index = {tuple(e): i for i, e in enumerate(target.exponents)}
        lap = np.zeros((len(target.exponents), len(self.exponents)))
        for j, (a, b) in enumerate(self.exponents):
            if a >= 2:
                lap[index[(a - 2, b)], j] += a * (a - 1) / self.h ** 2
            if b >= 2:
                lap[index[(a, b - 2)], j] += b * (b - 1) / self.h ** 2
        return np.linalg.solve(target.change, lap @ self.change)


def scaled_monomials(geom, p):
    """
    Scaled monomials ((x - x_E) / h_E)^a ((y - y_E) / h_E)^b of degree <= p.

    Args:
        geom: cell geometry with cell_id, centroid and diameter
        p (int): degree; p < 0 gives an empty basis
    """
    exponents = monomial_exponents(p) if p >= 0 else np.zeros((0, 2), dtype=int)
    n = len(exponents)
    return PolyBasis(cell_id=geom.cell_id, degree=p, kind="scaled-monomial",
                     center=np.asarray(geom.centroid, dtype=float), h=float(geom.diameter),
                     exponents=exponents, change=np.eye(n))


def orthonormalize(basis, rule):
    """
    L2(E)-orthonormal basis spanning the same space, in the same hierarchy.

    Cholesky based Gram-Schmidt, applied twice. The first member stays
    constant.

    Raises:
        IllConditioned: if the mass matrix is not numerically positive definite
    """
    if basis.size == 0:
        return basis
    change = basis.change
    for _ in range(2):
        values = basis.raw_values(rule.points) @ change
        mass = values.T @ (rule.weights[:, None] * values)
        try:
            lower = scipy.linalg.cholesky(mass, lower=True)
        except np.linalg.LinAlgError as exc:
            raise IllConditioned(
                f"mass matrix of degree {basis.degree} basis on cell {basis.cell_id} "
                f"is not positive definite") from exc
        inv_lower = scipy.linalg.solve_triangular(lower, np.eye(len(lower)), lower=True)
        change = change @ inv_lower.T
    return PolyBasis(cell_id=basis.cell_id, degree=basis.degree, kind="orthonormalized",
                     center=basis.center, h=basis.h, exponents=basis.exponents,
                     change=change, family=basis.family)


def default_basis(geom, p, rule=None, orthonormal=None):
    """Scaled monomials, orthonormalized from ORTHONORMALIZE_FROM_DEGREE on."""
    basis = scaled_monomials(geom, p)
    if orthonormal is None:
        orthonormal = p >= ORTHONORMALIZE_FROM_DEGREE
    if orthonormal and basis.size:
        if rule is None:
            rule = polygon_rule(geom.coords, max(2 * p, 0), geom.star_center)
        basis = orthonormalize(basis, rule)
    return basis


def _dubiner_raw(points, exponents):
    x, y = points[:, 0], points[:, 1]
    s = 1.0 - y
    safe = np.where(np.abs(s) > 1e-14, s, 1e-14)
    a = 2.0 * x / safe - 1.0
    b = 2.0 * y - 1.0
    values = np.zeros((len(points), len(exponents)))
    grads = np.zeros((len(points), len(exponents), 2))
    for col, (i, j) in enumerate(exponents):
        pi, dpi = legendre_eval(i, a)
        pj = eval_jacobi(j, 2 * i + 1, 0, b)
        dpj = (j + 2 * i + 2) / 2.0 * eval_jacobi(j - 1, 2 * i + 2, 1, b) if j > 0 else 0.0 * b
        s_i = s ** i
        s_im1 = s ** (i - 1) if i >= 1 else np.zeros_like(s)
        values[:, col] = pi * s_i * pj
        grads[:, col, 0] = 2.0 * dpi * s_im1 * pj
        grads[:, col, 1] = dpi * (1.0 + a) * s_im1 * pj - i * pi * s_im1 * pj + 2.0 * pi * s_i * dpj
    return values, grads


def dubiner_basis(p, orthonormal=True):
    """
    Dubiner (Koornwinder) basis of P_p on the reference triangle.

    The raw polynomials are L2-orthogonal; with `orthonormal` they are also
    normalized.
    """
    exponents = monomial_exponents(p)
    basis = PolyBasis(cell_id=-1, degree=p, kind="dubiner", center=np.zeros(2), h=1.0,
                      exponents=exponents, change=np.eye(len(exponents)), family="dubiner")
    if orthonormal:
        basis = orthonormalize(basis, triangle_rule(2 * p))
        basis.kind = "dubiner"
    return basis
