"""Manufactured solutions for convergence studies.

Each case bundles the exact solution, its gradient, the matching source term
f = -div(K grad u) derived by hand (a finite-difference cross-check lives in
the test suite), and the constant diffusion tensor.  All callables accept and
return numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .local import DiffusionTensor


@dataclass(frozen=True)
class TestCase:
    name: str
    u: Callable
    grad_u: Callable            # (x, y) -> (du/dx, du/dy)
    f: Callable
    K: DiffusionTensor
    zero_boundary: bool = True
    y_wavelength: Optional[float] = None
    exact_energy_norm: Optional[float] = None


def _tc1() -> TestCase:
    """Boundary-layer solution with a strongly anisotropic diffusion tensor.

    u = 1e-2 * x*y*(1-x)*(1-y)*(exp(20x) - 1), K = diag(8e-3, 1).  The x
    profile develops a sharp layer near x = 1; the small K_xx makes the
    energy norm dominated by the y derivative.
    """
    kx = 8.0e-3

    def g(x):
        return x * (1.0 - x) * (np.exp(20.0 * x) - 1.0)

    def gp(x):
        ex = np.exp(20.0 * x)
        return (1.0 - 2.0 * x) * (ex - 1.0) + 20.0 * x * (1.0 - x) * ex

    def gpp(x):
        ex = np.exp(20.0 * x)
        return -2.0 * (ex - 1.0) + (40.0 * (1.0 - 2.0 * x) + 400.0 * x * (1.0 - x)) * ex

    def u(x, y):
        return 1.0e-2 * g(x) * y * (1.0 - y)

    def grad_u(x, y):
        w = y * (1.0 - y)
        return 1.0e-2 * gp(x) * w, 1.0e-2 * g(x) * (1.0 - 2.0 * y)

    def f(x, y):
        # -(kx*u_xx + u_yy) with u_yy = -2e-2*g(x)
        return -1.0e-2 * (kx * gpp(x) * y * (1.0 - y) - 2.0 * g(x))

    return TestCase(name="tc1", u=u, grad_u=grad_u, f=f,
                    K=DiffusionTensor.diagonal(kx, 1.0))


def _tc2() -> TestCase:
    """Solution oscillating fast in y against a tensor that damps y diffusion.

    u = sin(2 pi x) sin(80 pi y), K = diag(1, 6.25e-4).  The exact energy norm
    is pi*sqrt(2): the x and y terms contribute pi^2 each once the tensor
    weights are applied.
    """
    ky = 6.25e-4
    twopi = 2.0 * math.pi
    eightypi = 80.0 * math.pi

    def u(x, y):
        return np.sin(twopi * x) * np.sin(eightypi * y)

    def grad_u(x, y):
        return (twopi * np.cos(twopi * x) * np.sin(eightypi * y),
                eightypi * np.sin(twopi * x) * np.cos(eightypi * y))

    def f(x, y):
        # -(u_xx + ky*u_yy) = (4 pi^2 + ky * 6400 pi^2) u = 8 pi^2 u
        return 8.0 * math.pi ** 2 * u(x, y)

    return TestCase(name="tc2", u=u, grad_u=grad_u, f=f,
                    K=DiffusionTensor.diagonal(1.0, ky),
                    y_wavelength=0.025,
                    exact_energy_norm=math.pi * math.sqrt(2.0))


# fixed generic coefficients for the polynomial patch cases, truncated by degree
_PATCH_COEFFS = {
    (0, 0): 0.7, (1, 0): 1.3, (0, 1): -0.9,
    (2, 0): 0.6, (1, 1): -1.1, (0, 2): 0.8,
    (3, 0): -0.4, (2, 1): 0.9, (1, 2): -0.7, (0, 3): 0.5,
    (4, 0): 0.3, (3, 1): -0.2, (2, 2): 0.4, (1, 3): 0.6, (0, 4): -0.5,
}


def _patch(degree: int) -> TestCase:
    """Generic full polynomial of the given total degree; boundary values are
    nonzero, so the harness interpolates them instead of forcing zero."""
    if degree < 1:
        raise ValueError("patch degree must be >= 1")
    terms = [(a, b, c) for (a, b), c in sorted(_PATCH_COEFFS.items())
             if a + b <= degree]
    if max(a + b for a, b, _ in terms) < degree:
        raise ValueError(f"no stored patch coefficients beyond degree 4, got {degree}")
    K = DiffusionTensor.diagonal(8.0e-3, 1.0)
    kx, ky = K.matrix[0, 0], K.matrix[1, 1]

    def u(x, y):
        x = np.asarray(x, dtype=float)
        total = np.zeros(np.broadcast(x, y).shape)
        for a, b, c in terms:
            total += c * x ** a * np.asarray(y, dtype=float) ** b
        return total

    def grad_u(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ux = np.zeros(np.broadcast(x, y).shape)
        uy = np.zeros_like(ux)
        for a, b, c in terms:
            if a >= 1:
                ux += c * a * x ** (a - 1) * y ** b
            if b >= 1:
                uy += c * b * x ** a * y ** (b - 1)
        return ux, uy

    def f(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        val = np.zeros(np.broadcast(x, y).shape)
        for a, b, c in terms:
            if a >= 2:
                val -= kx * c * a * (a - 1) * x ** (a - 2) * y ** b
            if b >= 2:
                val -= ky * c * b * (b - 1) * x ** a * y ** (b - 2)
        return val

    return TestCase(name=f"patch:{degree}", u=u, grad_u=grad_u, f=f, K=K,
                    zero_boundary=False)


def testcase(case_id: str) -> TestCase:
    """Look up a case by id: 'tc1', 'tc2' or 'patch:<degree>'."""
    if case_id == "tc1":
        return _tc1()
    if case_id == "tc2":
        return _tc2()
    if case_id.startswith("patch:"):
        try:
            degree = int(case_id.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad patch degree in {case_id!r}") from None
        return _patch(degree)
    raise ValueError(f"unknown test case {case_id!r}; expected tc1, tc2 or patch:<k>")


def manufactured_residual(case: TestCase, n_points: int = 100, seed: int = 7,
                          step: float = 1e-5) -> float:
    """Relative mismatch between f and -div(K grad u) by central differences.

    The residual is normalized by the largest source magnitude over the
    sample (floored at 1 so cases with identically zero source stay well
    posed); pointwise normalization would blow up at the zeros of f where
    the finite-difference truncation error dominates.  Guards the
    hand-derived source terms; K must be constant.
    """
    if not case.K.constant:
        raise ValueError("finite-difference check requires a constant tensor")
    rng = np.random.default_rng(seed)
    pts = 0.05 + 0.9 * rng.random((n_points, 2))
    x, y = pts[:, 0], pts[:, 1]
    Km = case.K.matrix
    u = case.u
    uxx = (u(x + step, y) - 2.0 * u(x, y) + u(x - step, y)) / step ** 2
    uyy = (u(x, y + step) - 2.0 * u(x, y) + u(x, y - step)) / step ** 2
    uxy = (u(x + step, y + step) - u(x + step, y - step)
           - u(x - step, y + step) + u(x - step, y - step)) / (4.0 * step ** 2)
    div_flux = Km[0, 0] * uxx + 2.0 * Km[0, 1] * uxy + Km[1, 1] * uyy
    fv = np.asarray(case.f(x, y), dtype=float)
    scale = max(1.0, float(np.abs(fv).max()), float(np.abs(div_flux).max()))
    return float(np.abs(fv + div_flux).max() / scale)
