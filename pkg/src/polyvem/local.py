"""Element-local construction of both virtual element discretizations.

For a cell E and order k the degrees of freedom are: vertex values (CCW),
values at the k-1 interior Gauss-Lobatto nodes of each edge (CCW), and the
scaled moments (1/|E|) int_E v m_a for |a| <= k-2 (graded-lex).  Everything a
scheme needs is assembled from those dofs:

* the energy projector onto P_k via integration by parts on each basis row,
* moments against monomials beyond degree k-2, recovered from the projector
  (this is what the enhancement constraint of the virtual space guarantees),
* L2 projections of values (degree k-1) and gradients (degree k-1 for the
  standard scheme, degree k+ell-1 for the stabilization-free one),
* the consistency and stabilization parts of the local stiffness matrix.

The stabilization-free variant enlarges the enhancement range by the smallest
ell satisfying (k+ell)(k+ell+1) >= k*N_E + k(k+1) - 3, which makes the
higher-degree gradient projection rich enough that no stabilizing term is
needed.  Its coercivity is only guaranteed at order 1; a per-cell rank check
guards the higher orders.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from .basis import (NumericalDegeneracyError, QuadRule, dim_poly, edge_rules,
                    eval_monomial_grads, eval_monomials, lagrange_matrix,
                    laplacian_coefficients, monomial_exponents, monomial_index,
                    polygon_quadrature)


class Method(Enum):
    STANDARD = "vem"
    E2VEM = "e2vem"

    @classmethod
    def parse(cls, name: str) -> "Method":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(f"unknown method {name!r}, expected 'vem' or 'e2vem'")


class CellDegeneracyError(Exception):
    pass


class StabilizationFreeRankError(Exception):
    """The stabilization-free consistency matrix lost rank on some cell."""


@dataclass(frozen=True)
class DiffusionTensor:
    """Symmetric positive definite 2x2 diffusion coefficient.

    Either a constant matrix or a position-dependent callable mapping
    coordinate arrays (x, y) to entries; `eval` returns shape (n, 2, 2).
    """

    matrix: Optional[np.ndarray] = None
    func: Optional[Callable] = None

    def __post_init__(self):
        if (self.matrix is None) == (self.func is None):
            raise ValueError("provide exactly one of matrix, func")
        if self.matrix is not None:
            m = np.asarray(self.matrix, dtype=float)
            if m.shape != (2, 2) or abs(m[0, 1] - m[1, 0]) > 1e-14 * max(1.0, np.abs(m).max()):
                raise ValueError("constant diffusion tensor must be symmetric 2x2")
            if np.linalg.eigvalsh(m).min() <= 0:
                raise ValueError("diffusion tensor must be positive definite")
            object.__setattr__(self, "matrix", m)

    @classmethod
    def diagonal(cls, kx: float, ky: float) -> "DiffusionTensor":
        return cls(matrix=np.diag([float(kx), float(ky)]))

    @classmethod
    def identity(cls) -> "DiffusionTensor":
        return cls.diagonal(1.0, 1.0)

    @property
    def constant(self) -> bool:
        return self.matrix is not None

    def eval(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.constant:
            return np.broadcast_to(self.matrix, x.shape + (2, 2))
        return np.asarray(self.func(x, np.asarray(y, dtype=float)), dtype=float)

    def sup_norm(self, pts=None) -> float:
        """Largest spectral norm of the tensor; evaluated at pts when varying."""
        if self.constant:
            return float(np.linalg.eigvalsh(self.matrix).max())
        if pts is None:
            raise ValueError("evaluation points required for a varying tensor")
        K = self.eval(pts[:, 0], pts[:, 1])
        tr = K[:, 0, 0] + K[:, 1, 1]
        disc = np.sqrt((K[:, 0, 0] - K[:, 1, 1]) ** 2 + 4.0 * K[:, 0, 1] ** 2)
        return float((0.5 * (tr + disc)).max())

    def sqrt_matrix(self) -> np.ndarray:
        if not self.constant:
            raise ValueError("symmetric square root only available for constant tensors")
        w, V = np.linalg.eigh(self.matrix)
        return (V * np.sqrt(w)) @ V.T


# ---------------------------------------------------------------------------
# dof layout
# ---------------------------------------------------------------------------

def dof_count(k: int, n_vertices: int) -> int:
    if k < 1 or n_vertices < 3:
        raise ValueError("need k >= 1 and at least 3 vertices")
    return k * n_vertices + k * (k - 1) // 2


def min_ell(k: int, n_vertices: int) -> int:
    """Smallest enhancement enlargement making the gradient projection square up.

    Returns the least ell >= 0 with (k+ell)(k+ell+1) >= k*N_E + k(k+1) - 3.
    """
    if k < 1 or n_vertices < 3:
        raise ValueError("need k >= 1 and at least 3 vertices")
    rhs = k * n_vertices + k * (k + 1) - 3
    ell = 0
    while (k + ell) * (k + ell + 1) < rhs:
        ell += 1
    return ell


@dataclass(frozen=True)
class DofLayout:
    """Index bookkeeping for the local dof vector of one cell."""

    k: int
    n_vertices: int

    @property
    def n_edge_interior(self) -> int:
        return self.k - 1

    @property
    def n_moments(self) -> int:
        return dim_poly(self.k - 2)

    @property
    def total(self) -> int:
        return dof_count(self.k, self.n_vertices)

    def vertex_dof(self, i: int) -> int:
        return i

    def edge_dof(self, e: int, j: int) -> int:
        return self.n_vertices + e * (self.k - 1) + j

    def moment_dof(self, m: int) -> int:
        return self.n_vertices * self.k + m

    def edge_node_dofs(self, e: int) -> list:
        """Dofs of the k+1 Lobatto nodes along edge e, in edge direction."""
        inner = [self.edge_dof(e, j) for j in range(self.k - 1)]
        return [e, *inner, (e + 1) % self.n_vertices]


# ---------------------------------------------------------------------------
# per-element context shared by the build steps
# ---------------------------------------------------------------------------

class ElementContext:
    """Quadrature, Gram matrix and edge data for one (cell, k, ell) triple."""

    def __init__(self, E, k: int, ell: int = 0, *, cell_id=None):
        self.E = E
        self.k = k
        self.ell = ell
        self.cell_id = cell_id
        self.layout = DofLayout(k, E.n_vertices)
        deg = k + ell
        self.quad = polygon_quadrature(E, 2 * deg)
        from .basis import monomial_gram
        self.gram = monomial_gram(E, deg, self.quad, cell_id=cell_id)

        lob, gl_t, gl_w = edge_rules(k, 2 * k + ell + 3)
        self.lobatto = lob
        L = lagrange_matrix(lob, gl_t)
        verts = E.verts
        m = E.n_vertices
        self.edge_points = []       # physical Gauss points per edge
        self.edge_normals = []      # outward unit normal per edge
        self.edge_lengths = []
        self.edge_trace = []        # (k+1, nq): |e| * w_q * L[j, q]
        self.edge_node_points = []  # physical Lobatto nodes per edge
        for e in range(m):
            a, b = verts[e], verts[(e + 1) % m]
            tang = b - a
            length = float(np.hypot(*tang))
            normal = np.array([tang[1], -tang[0]]) / length
            pts = a + np.outer(gl_t, tang)
            self.edge_points.append(pts)
            self.edge_normals.append(normal)
            self.edge_lengths.append(length)
            self.edge_trace.append(L * (length * gl_w)[None, :])
            self.edge_node_points.append(a + np.outer(lob, tang))
        self.perimeter = float(sum(self.edge_lengths))


# ---------------------------------------------------------------------------
# projectors
# ---------------------------------------------------------------------------

@dataclass
class PiNabla:
    D: np.ndarray        # total x dim P_k, dofs of the monomials
    B: np.ndarray        # dim P_k x total, integration-by-parts rows
    G: np.ndarray        # B @ D
    pi_star: np.ndarray  # dim P_k x total, monomial coefficients of the projection
    pi_dof: np.ndarray   # total x total, D @ pi_star


def build_pi_nabla(E, k: int, *, ctx: ElementContext | None = None) -> PiNabla:
    """Energy projector onto P_k from the local dof vector.

    Row a of B realizes (grad v, grad m_a)_E by parts: the interior term reads
    the moment dofs (the monomial Laplacian has degree <= k-2) and the
    boundary term integrates the known polynomial edge traces.  Row 0 enforces
    the average condition: boundary mean for k = 1, first moment dof for k > 1.
    """
    if ctx is None:
        ctx = ElementContext(E, k)
    lay = ctx.layout
    nk = dim_poly(k)
    N = lay.total
    exps = monomial_exponents(k)

    D = np.empty((N, nk))
    D[:lay.n_vertices] = eval_monomials(E, E.verts, k)
    for e in range(lay.n_vertices):
        inner = ctx.edge_node_points[e][1:-1]
        if len(inner):
            rows = [lay.edge_dof(e, j) for j in range(k - 1)]
            D[rows] = eval_monomials(E, inner, k)
    if lay.n_moments:
        D[lay.n_vertices * k:] = ctx.gram[:lay.n_moments, :nk] / E.area

    B = np.zeros((nk, N))
    h2 = E.diameter ** 2
    for a in range(1, nk):
        for coef, beta in laplacian_coefficients(exps[a]):
            B[a, lay.moment_dof(monomial_index(*beta))] -= coef / h2 * E.area
    for e in range(lay.n_vertices):
        grads = eval_monomial_grads(E, ctx.edge_points[e], k)
        gn = grads @ ctx.edge_normals[e]          # (nq, nk)
        B[:, lay.edge_node_dofs(e)] += gn.T @ ctx.edge_trace[e].T

    B[0] = 0.0
    if k == 1:
        for e in range(lay.n_vertices):
            B[0, lay.edge_node_dofs(e)] += ctx.edge_trace[e].sum(axis=1) / ctx.perimeter
    else:
        B[0, lay.moment_dof(0)] = 1.0

    G = B @ D
    try:
        pi_star = np.linalg.solve(G, B)
    except np.linalg.LinAlgError:
        where = f"cell {ctx.cell_id}" if ctx.cell_id is not None else "cell"
        raise CellDegeneracyError(
            f"singular projector system on {where} (k={k})") from None
    return PiNabla(D=D, B=B, G=G, pi_star=pi_star, pi_dof=D @ pi_star)


def recover_moments(E, k: int, ell: int, pi_star: np.ndarray,
                    *, ctx: ElementContext | None = None) -> np.ndarray:
    """Linear maps dof vector -> int_E v m_a for all |a| <= k + ell.

    Moments up to degree k-2 are |E| times the stored moment dofs; the
    remaining ones equal the moments of the energy projection, which the
    enhancement constraint of the virtual space makes exact.
    """
    if ctx is None:
        ctx = ElementContext(E, k, ell)
    lay = ctx.layout
    n_top = dim_poly(k + ell)
    nk = dim_poly(k)
    M = np.zeros((n_top, lay.total))
    for m in range(lay.n_moments):
        M[m, lay.moment_dof(m)] = E.area
    M[lay.n_moments:] = ctx.gram[lay.n_moments:n_top, :nk] @ pi_star
    return M


def build_pi0_val(E, k: int, moments: np.ndarray,
                  *, ctx: ElementContext | None = None) -> np.ndarray:
    """Coefficients of the L2 projection of values onto P_{k-1}."""
    if ctx is None:
        ctx = ElementContext(E, k)
    n = dim_poly(k - 1)
    cho = cho_factor(ctx.gram[:n, :n])
    return cho_solve(cho, moments[:n])


def build_pi0_grad(E, k: int, d: int, moments: np.ndarray,
                   *, ctx: ElementContext | None = None) -> np.ndarray:
    """Coefficients of the L2 projection of the gradient onto [P_d]^2.

    For each vector monomial q the pairing (grad v, q)_E is integrated by
    parts: the divergence term reads recovered moments (degree <= d-1) and
    the boundary term uses exact edge quadrature of the traces.  Rows are the
    x-component block stacked over the y-component block.
    """
    if ctx is None:
        ctx = ElementContext(E, k, max(0, d + 1 - k))
    lay = ctx.layout
    nd = dim_poly(d)
    if moments.shape[0] < dim_poly(d - 1):
        raise ValueError("recovered moments do not reach degree d-1")
    exps = monomial_exponents(d)
    h = E.diameter

    Rx = np.zeros((nd, lay.total))
    Ry = np.zeros((nd, lay.total))
    for a in range(nd):
        ax, ay = exps[a]
        if ax >= 1:
            Rx[a] -= (ax / h) * moments[monomial_index(ax - 1, ay)]
        if ay >= 1:
            Ry[a] -= (ay / h) * moments[monomial_index(ax, ay - 1)]
    for e in range(lay.n_vertices):
        vals = eval_monomials(E, ctx.edge_points[e], d)       # (nq, nd)
        contrib = vals.T @ ctx.edge_trace[e].T                # (nd, k+1)
        nx, ny = ctx.edge_normals[e]
        dofs = lay.edge_node_dofs(e)
        Rx[:, dofs] += nx * contrib
        Ry[:, dofs] += ny * contrib

    try:
        cho = cho_factor(ctx.gram[:nd, :nd])
    except np.linalg.LinAlgError:
        where = f"cell {ctx.cell_id}" if ctx.cell_id is not None else "cell"
        raise NumericalDegeneracyError(
            f"gradient-projection mass matrix on {where} is not SPD") from None
    return np.vstack([cho_solve(cho, Rx), cho_solve(cho, Ry)])


@dataclass
class ProjectionPack:
    """All element matrices one scheme needs on one cell."""

    k: int
    ell: int
    grad_degree: int
    layout: DofLayout
    D: np.ndarray
    B: np.ndarray
    G: np.ndarray
    pi_star: np.ndarray
    pi_dof: np.ndarray
    moments: np.ndarray
    pi0_val: np.ndarray
    pi0_grad: np.ndarray
    ctx: ElementContext


RANK_TOL = 1e-9
MAX_ELL_BUMPS = 4


def _grad_projection_rank(pi0_grad, gram, d: int) -> int:
    """Numerical rank of the unweighted gradient-projection energy.

    Uses the identity-tensor form X^T H X + Y^T H Y; any SPD diffusion tensor
    yields a matrix of the same mathematical rank, and the unweighted form
    keeps the eigenvalue threshold independent of the tensor's anisotropy.
    """
    nd = dim_poly(d)
    X, Y = pi0_grad[:nd], pi0_grad[nd:]
    HX, HY = gram[:nd, :nd] @ X, gram[:nd, :nd] @ Y
    A = X.T @ HX + Y.T @ HY
    evals = eigh(0.5 * (A + A.T), eigvals_only=True)
    return int((evals > RANK_TOL * float(np.abs(evals).max())).sum())


def build_projection_pack(E, k: int, method: Method, *, cell_id=None) -> ProjectionPack:
    """Projectors, recovered moments and L2 projections for one cell.

    For the stabilization-free scheme the enhancement enlargement starts at
    the counting-inequality minimum and is increased until the gradient
    projection has full rank N-1; the inequality alone is not sufficient on
    symmetric cells (exact squares at order 2, regular hexagons at order 1
    carry a symmetry mode in its kernel).
    """
    if method is Method.STANDARD:
        candidates = [0]
    else:
        base = min_ell(k, E.n_vertices)
        candidates = list(range(base, base + MAX_ELL_BUMPS + 1))
    for ell in candidates:
        d = k - 1 if method is Method.STANDARD else k + ell - 1
        ctx = ElementContext(E, k, ell, cell_id=cell_id)
        pn = build_pi_nabla(E, k, ctx=ctx)
        moments = recover_moments(E, k, ell, pn.pi_star, ctx=ctx)
        pi0_val = build_pi0_val(E, k, moments, ctx=ctx)
        pi0_grad = build_pi0_grad(E, k, d, moments, ctx=ctx)
        if method is Method.E2VEM:
            rank = _grad_projection_rank(pi0_grad, ctx.gram, d)
            if rank < ctx.layout.total - 1:
                continue
        return ProjectionPack(k=k, ell=ell, grad_degree=d, layout=ctx.layout,
                              D=pn.D, B=pn.B, G=pn.G, pi_star=pn.pi_star,
                              pi_dof=pn.pi_dof, moments=moments,
                              pi0_val=pi0_val, pi0_grad=pi0_grad, ctx=ctx)
    where = f"cell {cell_id}" if cell_id is not None else "cell"
    raise StabilizationFreeRankError(
        f"gradient projection on {where} stays rank deficient up to "
        f"enlargement {candidates[-1]}; the stabilization-free scheme is only "
        f"guaranteed well-posed at order 1 (got k={k})")


# ---------------------------------------------------------------------------
# local stiffness and load
# ---------------------------------------------------------------------------

@dataclass
class LocalStiffness:
    a_pi: np.ndarray
    a_s: np.ndarray
    a: np.ndarray
    k_inf: float
    load: Optional[np.ndarray] = None


def _weighted_vector_gram(K: DiffusionTensor, E, d: int, ctx: ElementContext):
    nd = dim_poly(d)
    if K.constant:
        H = ctx.gram[:nd, :nd]
        Km = K.matrix
        return Km[0, 0] * H, Km[0, 1] * H, Km[1, 1] * H
    # varying coefficient: evaluate at a rule with extra exactness margin
    quad = polygon_quadrature(E, 2 * d + 4)
    V = eval_monomials(E, quad.points, d)
    Kp = K.eval(quad.points[:, 0], quad.points[:, 1])
    w = quad.weights
    Wxx = (V * (w * Kp[:, 0, 0])[:, None]).T @ V
    Wxy = (V * (w * Kp[:, 0, 1])[:, None]).T @ V
    Wyy = (V * (w * Kp[:, 1, 1])[:, None]).T @ V
    return Wxx, Wxy, Wyy


def local_stiffness(E, k: int, method: Method, K: DiffusionTensor,
                    *, pack: ProjectionPack | None = None, cell_id=None,
                    rank_check: bool = True) -> LocalStiffness:
    """Local stiffness matrix of the chosen scheme with diffusion tensor K.

    Standard scheme: consistency from the degree k-1 gradient projection plus
    the dofi-dofi stabilization sup|K| * (I - Pi)^T (I - Pi) applied to the
    projection complement.  Stabilization-free scheme: consistency only, from
    the degree k+ell-1 gradient projection; a rank check rejects cells where
    that matrix cannot control the non-constant dof space.
    """
    if pack is None:
        pack = build_projection_pack(E, k, method, cell_id=cell_id)
    d = pack.grad_degree
    nd = dim_poly(d)
    X = pack.pi0_grad[:nd]
    Y = pack.pi0_grad[nd:]
    Wxx, Wxy, Wyy = _weighted_vector_gram(K, E, d, pack.ctx)
    a_pi = X.T @ (Wxx @ X) + X.T @ (Wxy @ Y) + Y.T @ (Wxy.T @ X) + Y.T @ (Wyy @ Y)
    a_pi = 0.5 * (a_pi + a_pi.T)

    k_inf = K.sup_norm(pack.ctx.quad.points if not K.constant else None)
    N = pack.layout.total
    if method is Method.STANDARD:
        Mc = np.eye(N) - pack.pi_dof
        a_s = k_inf * (Mc.T @ Mc)
        a_s = 0.5 * (a_s + a_s.T)
    else:
        a_s = np.zeros((N, N))
        if rank_check:
            rank = _grad_projection_rank(pack.pi0_grad, pack.ctx.gram, d)
            if rank < N - 1:
                where = f"cell {cell_id}" if cell_id is not None else "cell"
                raise StabilizationFreeRankError(
                    f"stabilization-free consistency matrix on {where} has rank "
                    f"{rank} < {N - 1}; the method is only guaranteed well-posed "
                    f"at order 1 (got k={k})")
    return LocalStiffness(a_pi=a_pi, a_s=a_s, a=a_pi + a_s, k_inf=k_inf)


def local_load(E, k: int, ell: int, f, pi0_val: np.ndarray, *,
               max_y_extent=None, quad: QuadRule | None = None) -> np.ndarray:
    """Load vector (f, projection of v onto P_{k-1})_E for all local dofs.

    Both schemes test the source against the degree k-1 value projection, so
    `ell` does not change the formula; it is part of the calling context.
    The data quadrature is exact to degree 2k+6, with optional vertical
    subdivision for oscillatory sources.
    """
    if quad is None:
        quad = polygon_quadrature(E, 2 * k + 6, max_y_extent=max_y_extent)
    V = eval_monomials(E, quad.points, k - 1)
    fvals = np.asarray(f(quad.points[:, 0], quad.points[:, 1]), dtype=float)
    fm = V.T @ (quad.weights * fvals)
    return pi0_val.T @ fm
