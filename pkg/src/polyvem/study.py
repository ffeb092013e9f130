"""Convergence studies: energy errors, rates, ratio tables, CSV/JSON artifacts.

A study sweeps a mesh refinement ladder for one manufactured case, solves both
schemes at the requested orders, and records the relative energy error

    e* = sqrt(sum_E ||sqrt(K) grad(u - P_k u_h)||^2_E) / ||sqrt(K) grad u||_Omega

where P_k is the element energy projector, plus the convergence rate of the
last two errors and, for the standard scheme, the stabilization/consistency
norm ratio per level and its ladder average.  Artifacts are written with
full-precision floats so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import (SolverError, SparseSystem, apply_dirichlet, assemble,
                       build_dof_map, solve, stab_consistency_ratio)
from .basis import eval_monomial_grads, polygon_quadrature
from .cases import TestCase, testcase
from .local import (Method, StabilizationFreeRankError,
                    build_projection_pack)
from .mesh import (CARTESIAN_LADDER, DEFAULT_LLOYD_ITERS, VORONOI_LADDER,
                   PolyMesh, generate_cartesian, generate_voronoi)


def convergence_rate(e_prev: float, e_last: float, h_prev: float, h_last: float) -> float:
    """Observed order from the last two errors: log(e ratio) / log(h ratio)."""
    if min(e_prev, e_last, h_prev, h_last) <= 0.0:
        raise ValueError("errors and mesh sizes must be positive")
    if h_prev <= h_last:
        raise ValueError(f"mesh sizes must decrease, got {h_prev} -> {h_last}")
    return math.log(e_prev / e_last) / math.log(h_prev / h_last)


def _data_quadrature(geom, k: int, case: TestCase):
    max_y = case.y_wavelength / 2.0 if case.y_wavelength else None
    return polygon_quadrature(geom, 2 * k + 6, max_y_extent=max_y)


def energy_error(mesh: PolyMesh, k: int, u_dofs: np.ndarray, case: TestCase,
                 pi_stars=None) -> float:
    """Relative energy-norm error of a dof solution against the exact case.

    `pi_stars` supplies the per-cell energy projector coefficient matrices
    (from collected projection packs); omitted, they are rebuilt for the
    standard scheme layout, which shares the projector with the
    stabilization-free one.
    """
    dm = build_dof_map(mesh, k)
    sqK = case.K.sqrt_matrix()
    num = 0.0
    den = 0.0
    for ci in range(mesh.n_cells):
        geom = mesh.cell_geom(ci)
        if pi_stars is not None:
            pi_star = pi_stars[ci]
        else:
            pi_star = build_projection_pack(geom, k, Method.STANDARD, cell_id=ci).pi_star
        coeffs = pi_star @ u_dofs[dm.cell_dofs[ci]]
        quad = _data_quadrature(geom, k, case)
        grads = eval_monomial_grads(geom, quad.points, k)
        gh = np.tensordot(grads, coeffs, axes=([1], [0]))          # (nq, 2)
        gx, gy = case.grad_u(quad.points[:, 0], quad.points[:, 1])
        diff = np.column_stack([gx, gy]) - gh
        wd = diff @ sqK.T
        num += float(quad.weights @ (wd * wd).sum(axis=1))
        ge = np.column_stack([gx, gy]) @ sqK.T
        den += float(quad.weights @ (ge * ge).sum(axis=1))
    if den <= 0.0:
        raise ValueError("exact solution has zero energy norm")
    return math.sqrt(num / den)


def exact_energy_norm(mesh: PolyMesh, case: TestCase, k: int = 1) -> float:
    """Quadrature value of ||sqrt(K) grad u|| over the mesh."""
    sqK = case.K.sqrt_matrix()
    total = 0.0
    for ci in range(mesh.n_cells):
        geom = mesh.cell_geom(ci)
        quad = _data_quadrature(geom, k, case)
        gx, gy = case.grad_u(quad.points[:, 0], quad.points[:, 1])
        ge = np.column_stack([gx, gy]) @ sqK.T
        total += float(quad.weights @ (ge * ge).sum(axis=1))
    return math.sqrt(total)


def interpolate_dofs(mesh: PolyMesh, k: int, func) -> np.ndarray:
    """Dof vector of the interpolant of a smooth function."""
    from .basis import dim_poly, edge_rules, eval_monomials

    dm = build_dof_map(mesh, k)
    out = np.zeros(dm.n_total)
    out[:mesh.n_vertices] = func(mesh.vertices[:, 0], mesh.vertices[:, 1])
    if k > 1:
        lob, _, _ = edge_rules(k, 1)
        inner = lob[1:-1]
        base = mesh.n_vertices
        for eid in range(mesh.n_edges):
            a, b = mesh.edges[eid]
            pts = mesh.vertices[a] + np.outer(inner, mesh.vertices[b] - mesh.vertices[a])
            out[base + eid * (k - 1): base + (eid + 1) * (k - 1)] = func(pts[:, 0], pts[:, 1])
    n_mom = dim_poly(k - 2)
    if n_mom:
        base = mesh.n_vertices + mesh.n_edges * (k - 1)
        for ci in range(mesh.n_cells):
            geom = mesh.cell_geom(ci)
            quad = polygon_quadrature(geom, 2 * k + 6)
            V = eval_monomials(geom, quad.points, k - 2)
            fv = np.asarray(func(quad.points[:, 0], quad.points[:, 1]), dtype=float)
            out[base + ci * n_mom: base + (ci + 1) * n_mom] = \
                V.T @ (quad.weights * fv) / geom.area
    return out


@dataclass
class CaseSolution:
    u_dofs: np.ndarray
    e_star: float
    report: object
    system: SparseSystem


def solve_case(mesh: PolyMesh, k: int, method: Method, case: TestCase) -> CaseSolution:
    """Assemble, apply Dirichlet data, solve, and measure the energy error.

    Cases flagged `zero_boundary` use homogeneous elimination; the polynomial
    patch cases interpolate their exact boundary values instead.
    """
    system = assemble(mesh, k, method, case.K, case.f,
                      y_wavelength=case.y_wavelength, collect_packs=True)
    if case.zero_boundary:
        values = None
    else:
        values = _boundary_values(mesh, system.dof_map, k, case.u)
    reduced = apply_dirichlet(system, values)
    report = solve(reduced)
    pi_stars = [p.pi_star for p in system.packs]
    e_star = energy_error(mesh, k, report.solution, case, pi_stars)
    return CaseSolution(u_dofs=report.solution, e_star=e_star,
                        report=report, system=system)


def _boundary_values(mesh, dm, k, func):
    from .basis import edge_rules

    vals = np.empty(dm.boundary_dofs.size)
    nv = mesh.n_vertices
    lob = edge_rules(k, 1)[0][1:-1] if k > 1 else np.empty(0)
    for i, dof in enumerate(dm.boundary_dofs):
        if dof < nv:
            p = mesh.vertices[dof]
        else:
            eid, j = divmod(dof - nv, k - 1)
            a, b = mesh.edges[eid]
            p = mesh.vertices[a] + lob[j] * (mesh.vertices[b] - mesh.vertices[a])
        vals[i] = func(p[0], p[1])
    return vals


# ---------------------------------------------------------------------------
# study driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    case_id: str
    orders: tuple = (1,)
    families: tuple = ("cartesian",)       # subset of {"cartesian", "voronoi"}
    levels: int = 0                        # 0 means the full default ladder
    rng_seed: int = 0
    lloyd_iters: int = DEFAULT_LLOYD_ITERS
    methods: tuple = (Method.STANDARD, Method.E2VEM)
    out_dir: Optional[str] = None

    def __post_init__(self):
        for fam in self.families:
            if fam not in ("cartesian", "voronoi"):
                raise ValueError(f"unknown family {fam!r}")
        if any(k not in (1, 2, 3) for k in self.orders):
            raise ValueError("study orders are limited to {1, 2, 3}")


@dataclass
class StudyRow:
    family: str
    case: str
    method: str
    order: int
    level: int
    h_max: float
    n_dofs: int
    e_star: float
    alpha: Optional[float] = None
    stab_ratio: Optional[float] = None
    note: str = ""


@dataclass
class StudyResult:
    case: str
    rows: list = field(default_factory=list)
    avg_stab_ratio: dict = field(default_factory=dict)   # (family, order) -> float

    def series(self, family: str, order: int, method: Method):
        tag = method.value
        return [r for r in self.rows
                if r.family == family and r.order == order and r.method == tag]


def ladder_for(family: str, levels: int = 0):
    base = CARTESIAN_LADDER if family == "cartesian" else VORONOI_LADDER
    return base if levels <= 0 else base[:levels]


def _make_mesh(family: str, resolution: int, cfg: StudyConfig) -> PolyMesh:
    if family == "cartesian":
        return generate_cartesian(resolution)
    return generate_voronoi(resolution, cfg.rng_seed, cfg.lloyd_iters)


def run_study(cfg: StudyConfig) -> StudyResult:
    """Run the full sweep described by `cfg`; write artifacts when out_dir set."""
    case = testcase(cfg.case_id)
    result = StudyResult(case=case.name)

    for family in cfg.families:
        ladder = ladder_for(family, cfg.levels)
        meshes = [_make_mesh(family, n, cfg) for n in ladder]
        for order in cfg.orders:
            level_ratios = []
            for level, mesh in enumerate(meshes, start=1):
                for method in cfg.methods:
                    row = StudyRow(family=family, case=case.name,
                                   method=method.value, order=order, level=level,
                                   h_max=mesh.h_max, n_dofs=0, e_star=float("nan"))
                    try:
                        sol = solve_case(mesh, order, method, case)
                        row.n_dofs = sol.system.dof_map.n_total
                        row.e_star = sol.e_star
                        if method is Method.STANDARD:
                            ratio = stab_consistency_ratio(sol.system.a_s,
                                                           sol.system.a_pi)
                            row.stab_ratio = ratio
                            level_ratios.append(ratio)
                    except (SolverError, StabilizationFreeRankError) as exc:
                        row.note = f"solver failure: {exc}"
                    result.rows.append(row)
            if level_ratios:
                result.avg_stab_ratio[(family, order)] = \
                    sum(level_ratios) / len(level_ratios)
            for method in cfg.methods:
                _attach_rates(result.series(family, order, method))

    if cfg.out_dir:
        emit_plot_data(result, cfg.out_dir)
    return result


def _attach_rates(series):
    for prev, cur in zip(series, series[1:]):
        if (math.isfinite(prev.e_star) and math.isfinite(cur.e_star)
                and prev.e_star > 0 and cur.e_star > 0 and prev.h_max > cur.h_max):
            cur.alpha = convergence_rate(prev.e_star, cur.e_star,
                                         prev.h_max, cur.h_max)


def ratio_ladder(case_id: str, order: int, family: str, *, levels: int = 0,
                 rng_seed: int = 0, lloyd_iters: int = DEFAULT_LLOYD_ITERS):
    """Per-level stabilization/consistency norm ratios and their average.

    Only the standard scheme is assembled (no loads, no solves), which is all
    the ratio needs.
    """
    case = testcase(case_id)
    ratios = []
    for n in ladder_for(family, levels):
        mesh = (generate_cartesian(n) if family == "cartesian"
                else generate_voronoi(n, rng_seed, lloyd_iters))
        system = assemble(mesh, order, Method.STANDARD, case.K)
        ratios.append(stab_consistency_ratio(system.a_s, system.a_pi))
    return ratios, sum(ratios) / len(ratios)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


ROWS_HEADER = ["family", "case", "method", "order", "level", "h_max",
               "n_dofs", "e_star", "alpha", "stab_ratio", "note"]


def emit_plot_data(result: StudyResult, out_dir: str):
    """Write the study rows, per-figure series, rate summary and JSON digest."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    rows_path = os.path.join(out_dir, "study_rows.csv")
    with open(rows_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ROWS_HEADER)
        for r in result.rows:
            w.writerow([r.family, r.case, r.method, r.order, r.level,
                        _fmt(r.h_max), r.n_dofs, _fmt(r.e_star),
                        _fmt(r.alpha), _fmt(r.stab_ratio), r.note])
    paths.append(rows_path)

    combos = sorted({(r.family, r.order) for r in result.rows})
    safe_case = result.case.replace(":", "")
    for family, order in combos:
        vem = result.series(family, order, Method.STANDARD)
        e2 = result.series(family, order, Method.E2VEM)
        by_level = {r.level: [None, None] for r in vem + e2}
        for r in vem:
            by_level[r.level][0] = r
        for r in e2:
            by_level[r.level][1] = r
        fig_path = os.path.join(out_dir, f"fig_{safe_case}_{family}_order{order}.csv")
        with open(fig_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["h_max", "e_V", "e_W", "ratio_vw"])
            for level in sorted(by_level):
                rv, rw = by_level[level]
                h = rv.h_max if rv is not None else rw.h_max
                ev = rv.e_star if rv is not None else float("nan")
                ew = rw.e_star if rw is not None else float("nan")
                ratio = ev / ew if (math.isfinite(ev) and math.isfinite(ew)
                                    and ew > 0) else float("nan")
                w.writerow([_fmt(h), _fmt(ev), _fmt(ew), _fmt(ratio)])
        paths.append(fig_path)

    rates_path = os.path.join(out_dir, "rates_summary.csv")
    with open(rates_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["family", "case", "order", "method", "alpha_final"])
        for family, order in combos:
            for method in (Method.STANDARD, Method.E2VEM):
                series = result.series(family, order, method)
                alpha = series[-1].alpha if series else None
                w.writerow([family, result.case, order, method.value, _fmt(alpha)])
    paths.append(rates_path)

    summary = {
        "case": result.case,
        "avg_stab_ratio": {
            f"{family}:order{order}": value
            for (family, order), value in sorted(result.avg_stab_ratio.items())
        },
        "final_alpha": {
            f"{family}:order{order}:{method.value}":
                (result.series(family, order, method)[-1].alpha
                 if result.series(family, order, method) else None)
            for family, order in combos
            for method in (Method.STANDARD, Method.E2VEM)
        },
    }
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(summary_path)
    return paths


def parse_rows_csv(path) -> list:
    """Read back a study_rows.csv; floats round-trip exactly."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(StudyRow(
                family=rec["family"], case=rec["case"], method=rec["method"],
                order=int(rec["order"]), level=int(rec["level"]),
                h_max=float(rec["h_max"]), n_dofs=int(rec["n_dofs"]),
                e_star=float(rec["e_star"]),
                alpha=float(rec["alpha"]) if rec["alpha"] else None,
                stab_ratio=float(rec["stab_ratio"]) if rec["stab_ratio"] else None,
                note=rec["note"]))
    return rows
