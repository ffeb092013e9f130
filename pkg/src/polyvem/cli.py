"""Command-line interface: mesh generation, single solves, studies, ratio tables.

Exit codes: 0 success, 2 input or validation error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .assembly import SolverError
from .cases import testcase
from .local import Method
from .mesh import (DEFAULT_LLOYD_ITERS, MeshError, generate_cartesian,
                   generate_voronoi, load_mesh, save_mesh, validate_mesh)
from .study import StudyConfig, ladder_for, ratio_ladder, run_study, solve_case


def _build_parser():
    p = argparse.ArgumentParser(prog="polyvem",
                                description="Polygonal virtual element solvers "
                                            "and convergence studies")
    sub = p.add_subparsers(dest="command", required=True)

    pm = sub.add_parser("mesh", help="generate a mesh and write the text format")
    pm.add_argument("--family", choices=["cartesian", "voronoi"], required=True)
    pm.add_argument("--n", type=int, required=True,
                    help="cells per side (cartesian) or cell count (voronoi)")
    pm.add_argument("--seed", type=int, default=0)
    pm.add_argument("--lloyd-iters", type=int, default=DEFAULT_LLOYD_ITERS)
    pm.add_argument("-o", "--output", required=True)

    ps = sub.add_parser("solve", help="solve one case on a mesh file")
    ps.add_argument("--mesh", required=True)
    ps.add_argument("--method", choices=["vem", "e2vem"], required=True)
    ps.add_argument("--order", type=int, required=True)
    ps.add_argument("--case", required=True, help="tc1 | tc2 | patch:<k>")
    ps.add_argument("-o", "--output", required=True, help="JSON output path")

    pt = sub.add_parser("study", help="run a refinement study and write CSV/JSON")
    pt.add_argument("--case", required=True)
    pt.add_argument("--orders", required=True, help="comma list, e.g. 1,3")
    pt.add_argument("--family", choices=["cartesian", "voronoi", "both"],
                    required=True)
    pt.add_argument("--levels", type=int, default=0,
                    help="ladder prefix length (0 = full ladder)")
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--lloyd-iters", type=int, default=DEFAULT_LLOYD_ITERS)
    pt.add_argument("-o", "--output", required=True, help="output directory")

    pr = sub.add_parser("ratio", help="print ladder-averaged stabilization ratios")
    pr.add_argument("--case", required=True)
    pr.add_argument("--order", type=int, required=True)
    pr.add_argument("--family", choices=["cartesian", "voronoi", "both"],
                    required=True)
    pr.add_argument("--levels", type=int, default=0)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--lloyd-iters", type=int, default=DEFAULT_LLOYD_ITERS)
    return p


def _families(arg):
    return ("cartesian", "voronoi") if arg == "both" else (arg,)


def _cmd_mesh(args):
    if args.family == "cartesian":
        mesh = generate_cartesian(args.n)
    else:
        mesh = generate_voronoi(args.n, args.seed, args.lloyd_iters)
    report = validate_mesh(mesh)
    if not report.ok:
        details = "; ".join(f"{v.kind} at {v.where}: {v.detail}"
                            for v in report.violations)
        raise MeshError(f"generated mesh failed validation: {details}")
    save_mesh(mesh, args.output)
    print(f"wrote {args.output}: {mesh.n_cells} cells, {mesh.n_vertices} vertices, "
          f"h_max={mesh.h_max!r}")
    return 0


def _cmd_solve(args):
    mesh = load_mesh(args.mesh)
    case = testcase(args.case)
    method = Method.parse(args.method)
    sol = solve_case(mesh, args.order, method, case)
    payload = {
        "case": case.name,
        "method": method.value,
        "order": args.order,
        "mesh_file": args.mesh,
        "n_cells": mesh.n_cells,
        "h_max": mesh.h_max,
        "n_dofs": sol.system.dof_map.n_total,
        "e_star": sol.e_star,
        "solver": sol.report.solver,
        "iterations": sol.report.iterations,
        "residual": sol.report.residual,
        "spd_ok": sol.report.spd_ok,
        "solution": sol.u_dofs.tolist(),
    }
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")
    print(f"e_star={sol.e_star!r} ({case.name}, {method.value}, order {args.order})")
    return 0


def _cmd_study(args):
    orders = tuple(int(tok) for tok in args.orders.split(",") if tok.strip())
    if not orders:
        raise ValueError("no orders given")
    cfg = StudyConfig(case_id=args.case, orders=orders,
                      families=_families(args.family), levels=args.levels,
                      rng_seed=args.seed, lloyd_iters=args.lloyd_iters,
                      out_dir=args.output)
    result = run_study(cfg)
    failures = [r for r in result.rows if r.note]
    print(f"study {args.case}: {len(result.rows)} rows -> {args.output}"
          + (f" ({len(failures)} solver failures)" if failures else ""))
    for key, value in sorted(result.avg_stab_ratio.items()):
        print(f"avg stab/consistency ratio {key[0]} order {key[1]}: {value:.4f}")
    return 3 if failures else 0


def _cmd_ratio(args):
    for family in _families(args.family):
        ratios, avg = ratio_ladder(args.case, args.order, family,
                                   levels=args.levels, rng_seed=args.seed,
                                   lloyd_iters=args.lloyd_iters)
        levels = ladder_for(family, args.levels)
        per = ", ".join(f"{n}:{r:.4f}" for n, r in zip(levels, ratios))
        print(f"{args.case} {family} order {args.order}: avg={avg:.4f} [{per}]")
    return 0


_COMMANDS = {"mesh": _cmd_mesh, "solve": _cmd_solve,
             "study": _cmd_study, "ratio": _cmd_ratio}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (MeshError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
