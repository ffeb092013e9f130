"""Scaled monomial bases on polygons, polygon and edge quadrature, Gram matrices.

The basis on a cell E is m_a(p) = ((p - x_E) / h_E)^a, enumerated in graded
lexicographic order with the x-exponent descending inside each degree block.
Centering at the centroid and scaling by the diameter keeps the basis well
conditioned on small or stretched cells.  All functions here are pure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

log = logging.getLogger(__name__)


class QuadratureError(Exception):
    pass


class NumericalDegeneracyError(Exception):
    """A cell-local matrix lost positive definiteness during factorization."""


def dim_poly(k: int) -> int:
    """Dimension of bivariate polynomials of total degree <= k; 0 for k = -1."""
    if k < -1:
        raise ValueError(f"degree must be >= -1, got {k}")
    return 0 if k == -1 else (k + 1) * (k + 2) // 2


@lru_cache(maxsize=None)
def monomial_exponents(degree: int) -> np.ndarray:
    """Exponent pairs (ax, ay) for all |a| <= degree, graded-lex ordered."""
    exps = [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]
    out = np.array(exps, dtype=int).reshape(-1, 2)
    out.setflags(write=False)
    return out


def monomial_index(ax: int, ay: int) -> int:
    """Position of (ax, ay) in the graded-lex enumeration."""
    if ax < 0 or ay < 0:
        raise ValueError("exponents must be non-negative")
    d = ax + ay
    return d * (d + 1) // 2 + ay


def _power_table(values, degree):
    out = np.empty((values.shape[0], degree + 1))
    out[:, 0] = 1.0
    for d in range(1, degree + 1):
        out[:, d] = out[:, d - 1] * values
    return out


def eval_monomials(E, pts, degree: int) -> np.ndarray:
    """Values of all scaled monomials with |a| <= degree at pts, shape (npts, n)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    rx = (pts[:, 0] - E.centroid[0]) / E.diameter
    ry = (pts[:, 1] - E.centroid[1]) / E.diameter
    px = _power_table(rx, degree)
    py = _power_table(ry, degree)
    exps = monomial_exponents(degree)
    return px[:, exps[:, 0]] * py[:, exps[:, 1]]


def eval_monomial_grads(E, pts, degree: int) -> np.ndarray:
    """Gradients of all scaled monomials at pts, shape (npts, n, 2).

    Carries the 1/h_E chain-rule factor.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    h = E.diameter
    rx = (pts[:, 0] - E.centroid[0]) / h
    ry = (pts[:, 1] - E.centroid[1]) / h
    px = _power_table(rx, degree)
    py = _power_table(ry, degree)
    # shifted tables: column a holds value^(a-1), zero column for a = 0
    pxm = np.hstack([np.zeros((pts.shape[0], 1)), px[:, :degree]])
    pym = np.hstack([np.zeros((pts.shape[0], 1)), py[:, :degree]])
    exps = monomial_exponents(degree)
    ax, ay = exps[:, 0], exps[:, 1]
    out = np.empty((pts.shape[0], exps.shape[0], 2))
    out[:, :, 0] = ax * pxm[:, ax] * py[:, ay] / h
    out[:, :, 1] = ay * px[:, ax] * pym[:, ay] / h
    return out


def scaled_monomial_eval(alpha, E, p) -> float:
    ax, ay = alpha
    v = eval_monomials(E, np.asarray(p, dtype=float).reshape(1, 2), ax + ay)
    return float(v[0, monomial_index(ax, ay)])


def scaled_monomial_grad(alpha, E, p) -> np.ndarray:
    ax, ay = alpha
    g = eval_monomial_grads(E, np.asarray(p, dtype=float).reshape(1, 2), ax + ay)
    return g[0, monomial_index(ax, ay)].copy()


def laplacian_coefficients(alpha):
    """Expansion of the Laplacian of m_alpha: list of (coefficient, beta).

    Coefficients exclude the 1/h_E**2 factor, which the caller applies.
    """
    ax, ay = alpha
    terms = []
    if ax >= 2:
        terms.append((float(ax * (ax - 1)), (ax - 2, ay)))
    if ay >= 2:
        terms.append((float(ay * (ay - 1)), (ax, ay - 2)))
    return terms


def scaled_monomial_laplacian(alpha, E, p) -> float:
    total = 0.0
    for c, beta in laplacian_coefficients(alpha):
        total += c * scaled_monomial_eval(beta, E, p)
    return total / E.diameter ** 2


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int


@lru_cache(maxsize=None)
def _reference_triangle_rule(degree: int):
    """Collapsed Gauss rule on the unit reference triangle, exact to `degree`.

    Tensorizes Gauss-Jacobi (weight 1-s, absorbing the collapse Jacobian) with
    Gauss-Legendre; m = ceil((degree+1)/2) points per direction.
    """
    m = max(1, (degree + 2) // 2)
    xj, wj = roots_jacobi(m, 1.0, 0.0)
    xl, wl = roots_legendre(m)
    s = 0.5 * (xj + 1.0)
    ws = 0.25 * wj
    t = 0.5 * (xl + 1.0)
    wt = 0.5 * wl
    U = np.repeat(s, m)
    V = np.tile(t, m) * (1.0 - U)
    W = np.repeat(ws, m) * np.tile(wt, m)
    U.setflags(write=False), V.setflags(write=False), W.setflags(write=False)
    return U, V, W


def triangle_rule(p0, p1, p2, degree: int):
    """Points and weights integrating polynomials of total degree <= degree
    over the triangle (p0, p1, p2).  Weights sum to the signed area."""
    U, V, W = _reference_triangle_rule(degree)
    p0 = np.asarray(p0, dtype=float)
    e1 = np.asarray(p1, dtype=float) - p0
    e2 = np.asarray(p2, dtype=float) - p0
    det = e1[0] * e2[1] - e1[1] * e2[0]
    pts = p0 + np.outer(U, e1) + np.outer(V, e2)
    return pts, W * det


def _subdivide_by_extent(tris, max_y_extent, max_depth):
    out = []
    stack = [(t, 0) for t in reversed(tris)]
    capped = False
    while stack:
        (a, b, c), depth = stack.pop()
        ys = (a[1], b[1], c[1])
        if max(ys) - min(ys) <= max_y_extent or depth >= max_depth:
            capped = capped or (max(ys) - min(ys) > max_y_extent)
            out.append((a, b, c))
            continue
        mab = 0.5 * (a + b)
        mbc = 0.5 * (b + c)
        mca = 0.5 * (c + a)
        for child in ((a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca))[::-1]:
            stack.append((child, depth + 1))
    if capped:
        log.debug("triangle subdivision hit the depth cap %d", max_depth)
    return out


def polygon_quadrature(E, degree: int, *, max_y_extent=None, max_depth: int = 7) -> QuadRule:
    """Quadrature on a star-shaped polygon, exact for degree <= `degree`.

    The polygon is fanned into triangles from its centroid and a collapsed
    Gauss rule is applied per triangle.  With `max_y_extent` set, triangles
    are quadrisected until their vertical extent drops below it (resolving
    data that oscillates in y), capped at `max_depth` levels.
    """
    v = np.asarray(E.verts, dtype=float)
    c = np.asarray(E.centroid, dtype=float)
    m = v.shape[0]
    tris = []
    for i in range(m):
        a, b = v[i], v[(i + 1) % m]
        signed = 0.5 * ((a[0] - c[0]) * (b[1] - c[1]) - (a[1] - c[1]) * (b[0] - c[0]))
        if signed <= 1e-14 * E.area:
            raise QuadratureError(
                "cell is not star-shaped with respect to its centroid "
                f"(fan triangle {i} has signed area {signed:g}); run mesh validation")
        tris.append((c, a, b))
    if max_y_extent is not None:
        tris = _subdivide_by_extent(tris, max_y_extent, max_depth)
    pts = []
    wts = []
    for a, b, cc in tris:
        p, w = triangle_rule(a, b, cc, degree)
        pts.append(p)
        wts.append(w)
    return QuadRule(np.vstack(pts), np.concatenate(wts), degree)


def monomial_gram(E, degree: int, quad: QuadRule | None = None, *, cell_id=None) -> np.ndarray:
    """Mass matrix of the scaled monomials up to `degree` on E, SPD by construction."""
    if quad is None:
        quad = polygon_quadrature(E, 2 * degree)
    V = eval_monomials(E, quad.points, degree)
    M = (V * quad.weights[:, None]).T @ V
    M = 0.5 * (M + M.T)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        where = f"cell {cell_id}" if cell_id is not None else "cell"
        raise NumericalDegeneracyError(
            f"monomial Gram matrix on {where} is not positive definite "
            f"(degree {degree})") from None
    return M


# ---------------------------------------------------------------------------
# edge rules
# ---------------------------------------------------------------------------

def edge_rules(k: int, d_max: int):
    """Edge node and integration rules on the reference edge [0, 1].

    Returns (lobatto, gl_points, gl_weights): the k+1 Gauss-Lobatto node
    parameters (endpoints included) that carry the edge degrees of freedom,
    and a Gauss-Legendre rule exact for 1D polynomials of degree <= d_max
    whose weights sum to 1.
    """
    if k < 1:
        raise ValueError("order k must be >= 1")
    if k == 1:
        lob = np.array([0.0, 1.0])
    else:
        # interior Lobatto nodes are the roots of the (1,1)-Jacobi polynomial
        xi, _ = roots_jacobi(k - 1, 1.0, 1.0)
        lob = np.concatenate([[0.0], 0.5 * (np.sort(xi) + 1.0), [1.0]])
    m = max(1, (d_max + 2) // 2)
    xl, wl = roots_legendre(m)
    return lob, 0.5 * (xl + 1.0), 0.5 * wl


def lagrange_matrix(nodes, ts) -> np.ndarray:
    """L[j, q] = j-th Lagrange basis polynomial of `nodes` evaluated at ts[q]."""
    nodes = np.asarray(nodes, dtype=float)
    ts = np.asarray(ts, dtype=float)
    n = nodes.size
    L = np.ones((n, ts.size))
    for j in range(n):
        for i in range(n):
            if i != j:
                L[j] *= (ts - nodes[i]) / (nodes[j] - nodes[i])
    return L
