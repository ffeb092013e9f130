import sys
from pathlib import Path

import numpy as np
import pytest

SRC = Path(__file__).resolve().parent.parent / "src"
try:
    import polyvem  # noqa: F401
except ImportError:
    sys.path.insert(0, str(SRC))

from polyvem.mesh import CellGeometry


def star_polygon(rng: np.random.Generator, n: int, irregular: bool = True) -> CellGeometry:
    """Random CCW polygon that is star-shaped with respect to its centroid."""
    from polyvem.basis import polygon_quadrature

    while True:
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, n))
        gaps = np.diff(angles, append=angles[0] + 2.0 * np.pi)
        if gaps.min() < 0.25 or gaps.max() > 2.2:
            continue
        radii = rng.uniform(0.7, 1.0, n) if irregular else np.ones(n)
        verts = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
        verts += rng.uniform(-0.2, 0.2, 2)
        try:
            E = CellGeometry.from_vertices(verts)
            polygon_quadrature(E, 1)
        except Exception:
            continue
        return E


UNIT_SQUARE = CellGeometry.from_vertices([[0, 0], [1, 0], [1, 1], [0, 1]])
TRIANGLE = CellGeometry.from_vertices([[0, 0], [1, 0], [0, 1]])
PENTAGON = CellGeometry.from_vertices(
    [[0, 0], [0.7, 0.05], [1, 0.6], [0.45, 1.0], [-0.05, 0.55]])


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
