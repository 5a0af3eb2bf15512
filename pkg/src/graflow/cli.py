"""Command-line driver: simulate, converge, verify.

Exit codes: 0 all enabled checks pass, 1 a check failed, 2 config, shape or
data error, 3 solver abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .analysis import (
    brakke_family,
    check_flow,
    duality_fields,
    empirical_orders,
    fit_constant,
    roundoff_floor,
    simulate,
)
from .brakke import reports_to_json
from .config import ConfigError, ScenarioConfig, load_config
from .discretization import (
    FlowDataError,
    GraphFlow,
    GridError,
    SpaceTimeGrid,
    dump_flow_csv,
    load_flow_csv,
)
from .expr import ExpressionError
from .flow_solver import CFLViolation, ForcingError, RunAborted, SolverError
from .norms import EmptyRegionError, estimate_report
from .varifold import SupportError

log = logging.getLogger("graflow")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_ABORT = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _grid(cfg: ScenarioConfig, sc, stride=1):
    try:
        grid = SpaceTimeGrid.fitted(sc.k, sc.codim, sc.box, cfg.h, sc.t_range, dt=cfg.dt,
                                    sigma=cfg.sigma)
    except GridError as exc:
        raise CliError(f"grid error: {exc}", EXIT_INPUT) from None
    if grid.n_steps % stride:
        raise CliError(f"stride {stride} does not divide {grid.n_steps} steps", EXIT_INPUT)
    return grid


def _stored_grid(grid: SpaceTimeGrid, stride):
    if stride == 1:
        return grid
    return SpaceTimeGrid(k=grid.k, codim=grid.codim, box=grid.box, h=grid.h,
                         dt=grid.dt * stride, t_range=grid.t_range)


def _entry(passed, measured, tolerance, **extra):
    return {"passed": bool(passed), "measured": measured, "tolerance": tolerance, **extra}


def evaluate(cfg: ScenarioConfig, sc, flow: GraphFlow):
    """Run the enabled checks and norm requests; returns (checks, reports, norms, times)."""
    grid = flow.grid
    enabled = cfg.enabled_checks()
    if sc.exact is None:
        enabled = tuple(c for c in enabled if c != "solution_error")
    family = None
    if "brakke" in enabled:
        b = cfg.brakke
        family = brakke_family(flow, b.n_test_functions, b.n_windows, b.seed)
    res = check_flow(flow, sc, enabled, family=family)
    tol = cfg.tolerances
    coef = grid.h**2 + grid.dt
    floor = roundoff_floor(flow)
    checks = {}
    if res.solution_error is not None:
        checks["solution_error"] = _entry(res.solution_error <= tol.solution_error,
                                          res.solution_error, tol.solution_error)
    if "brakke" in enabled:
        c = cfg.brakke.c_report
        reps = res.brakke_reports
        one_sided = sum(r.residual >= -r.tol for r in reps)
        equal = sum(abs(r.residual) <= r.tol for r in reps)
        checks["brakke"] = _entry(
            equal == len(reps), res.brakke_relative, c * coef,
            min_residual_over_tol_scale=res.brakke_min_scaled, c_report=c, n_reports=len(reps),
            n_one_sided=one_sided, n_equality=equal,
            n_test_functions=len(family.phis), n_windows=len(family.windows),
        )
    for name, c in (("identity", tol.identity_c), ("motion_law", tol.motion_law_c)):
        val = getattr(res, name)
        if val is not None:
            bound = max(c * coef, floor)
            checks[name] = _entry(val <= bound, val, bound, roundoff_floor=floor)
    if res.perpendicularity is not None:
        checks["perpendicularity"] = _entry(res.perpendicularity <= tol.perpendicularity,
                                            res.perpendicularity, tol.perpendicularity)
    if res.duality is not None:
        bound = tol.duality_c * coef
        checks["duality"] = _entry(res.duality <= bound, res.duality, bound)
    norms = []
    for req in cfg.norms:
        try:
            rep = estimate_report(flow, sc.forcing, req.value("p"), req.value("q"), req.R,
                                  kind=req.kind, alpha=req.alpha, u_measure=req.u_measure)
        except EmptyRegionError as exc:
            raise CliError(f"norm request {req.model_dump()}: {exc}", EXIT_INPUT) from None
        norms.append(rep.to_dict())
    return checks, res.brakke_reports, norms, res.timings


def _write_json(path: Path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _manifest(cfg, command, grid, checks, timings, **extra):
    return {
        "command": command,
        "config_hash": cfg.config_hash(),
        "tool_version": __version__,
        "scenario": cfg.scenario,
        "grid": grid.describe(),
        "checks": checks,
        "passed": all(c["passed"] for c in checks.values()),
        "wall_times": timings,
        **extra,
    }


def _load(args):
    cfg = load_config(args.config)
    sc = cfg.build_scenario()
    return cfg, sc


def _out_dir(args, cfg):
    out = Path(args.out or cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run(cfg, sc, grid):
    solver_cfg = cfg.solver_config(sc.exact is not None)
    try:
        return simulate(sc, grid, solver_cfg, stride=cfg.solver.stride)
    except CFLViolation as exc:
        raise CliError(f"config error: {exc}", EXIT_INPUT) from None
    except RunAborted:
        raise
    except (SolverError, ForcingError) as exc:
        raise CliError(f"solver abort: {exc}", EXIT_ABORT) from None


def cmd_simulate(args):
    cfg, sc = _load(args)
    grid = _grid(cfg, sc, cfg.solver.stride)
    out = _out_dir(args, cfg)
    tic = time.perf_counter()
    try:
        flow, report = _run(cfg, sc, grid)
    except RunAborted as exc:
        manifest = _manifest(cfg, "simulate", grid, {}, {"solver": exc.report.wall_time},
                             solver=exc.report.to_dict(), abort=str(exc))
        manifest["passed"] = False
        _write_json(out / "manifest.json", manifest)
        if exc.partial_flow is not None:
            dump_flow_csv(exc.partial_flow, out / "fields.csv")
        raise CliError(f"solver abort: {exc}", EXIT_ABORT) from None
    t_solve = time.perf_counter() - tic
    dump_flow_csv(flow, out / "fields.csv")
    checks, reps, norms, timings = evaluate(cfg, sc, flow)
    (out / "brakke.json").write_text(reports_to_json(reps) + "\n")
    _write_json(out / "norms.json", norms)
    manifest = _manifest(cfg, "simulate", flow.grid, checks, {"solver": t_solve, **timings},
                         solver=report.to_dict())
    _write_json(out / "manifest.json", manifest)
    _summary(manifest)
    return EXIT_OK if manifest["passed"] else EXIT_CHECK


def cmd_verify(args):
    cfg, sc = _load(args)
    grid = _stored_grid(_grid(cfg, sc, cfg.solver.stride), cfg.solver.stride)
    boundary = cfg.solver_config(sc.exact is not None).boundary
    try:
        flow = load_flow_csv(args.flow, grid, boundary=boundary)
    except OSError as exc:
        raise CliError(f"cannot read flow dump {args.flow}: {exc.strerror}", EXIT_INPUT) from None
    except FlowDataError as exc:
        raise CliError(f"flow dump {args.flow}: {exc}", EXIT_INPUT) from None
    out = _out_dir(args, cfg)
    checks, reps, norms, timings = evaluate(cfg, sc, flow)
    (out / "brakke.json").write_text(reports_to_json(reps) + "\n")
    _write_json(out / "norms.json", norms)
    manifest = _manifest(cfg, "verify", grid, checks, timings, flow_dump=str(args.flow))
    _write_json(out / "manifest.json", manifest)
    _summary(manifest)
    return EXIT_OK if manifest["passed"] else EXIT_CHECK


CONVERGE_COLUMNS = ["level", "h", "dt", "error", "brakke_residual", "identity_residual",
                    "motion_law_residual", "duality_residual", "order_error", "order_brakke",
                    "order_identity", "order_motion_law", "order_duality"]


def converge_study(cfg: ScenarioConfig, sc, levels):
    """Run ``levels`` refinements (h, dt) -> (h/2, dt/4); returns rows and summary."""
    grid = _grid(cfg, sc)
    rows, floors, reports = [], [], []
    family = fields = None
    enabled = cfg.enabled_checks()
    for level in range(levels):
        flow, _ = _run(cfg, sc, grid)
        if family is None:
            b = cfg.brakke
            family = brakke_family(flow, b.n_test_functions, b.n_windows, b.seed)
            fields = duality_fields(grid, flow.values[0])
        res = check_flow(flow, sc, enabled, family=family, fields=fields)
        rows.append({
            "level": level, "h": grid.h, "dt": grid.dt, "error": res.solution_error,
            "brakke_residual": res.brakke_relative, "identity_residual": res.identity,
            "motion_law_residual": res.motion_law, "duality_residual": res.duality,
        })
        reports.append(res.brakke_reports)
        floors.append(roundoff_floor(flow))
        grid = grid.refined()
    hs = [r["h"] for r in rows]
    for col, key, fl in (("order_error", "error", None), ("order_brakke", "brakke_residual", None),
                         ("order_identity", "identity_residual", floors),
                         ("order_motion_law", "motion_law_residual", floors),
                         ("order_duality", "duality_residual", None)):
        for row, o in zip(rows, empirical_orders([r[key] for r in rows], hs, fl)):
            row[col] = o
    summary = {"levels": levels}
    if "brakke" in enabled:
        coefs = [r["h"] ** 2 + r["dt"] for r in rows]
        c_fit = fit_constant([r["brakke_residual"] for r in rows[:2]], coefs[:2])
        one_sided = [
            all(rep.residual >= -c_fit * coef * rep.scale for rep in reps)
            for reps, coef in zip(reports, coefs)
        ]
        summary.update(c_report_fit=c_fit, one_sided_per_level=one_sided)
    return rows, summary


def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, int):
        return str(v)
    return "%.17g" % v


def cmd_converge(args):
    if args.levels < 2:
        raise CliError("converge needs --levels >= 2", EXIT_INPUT)
    cfg, sc = _load(args)
    out = _out_dir(args, cfg)
    try:
        rows, summary = converge_study(cfg, sc, args.levels)
    except RunAborted as exc:
        raise CliError(f"solver abort: {exc}", EXIT_ABORT) from None
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CONVERGE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in CONVERGE_COLUMNS])
    summary.update(config_hash=cfg.config_hash(), tool_version=__version__,
                   scenario=cfg.scenario)
    _write_json(out / "convergence.json", summary)
    for r in rows:
        print(" ".join(f"{c}={_fmt(r[c])}" for c in CONVERGE_COLUMNS))
    ok = all(summary.get("one_sided_per_level", [True]))
    return EXIT_OK if ok else EXIT_CHECK


def _summary(manifest):
    for name, c in manifest["checks"].items():
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {name}: measured={c['measured']!r} tolerance={c['tolerance']!r}")


def build_parser():
    p = argparse.ArgumentParser(prog="graflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"graflow {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run a scenario and its checks")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)
    c = sub.add_parser("converge", help="refinement study")
    c.add_argument("--config", required=True)
    c.add_argument("--levels", type=int, required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_converge)
    v = sub.add_parser("verify", help="check a stored flow dump")
    v.add_argument("--config", required=True)
    v.add_argument("--flow", required=True)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ExpressionError, GridError, FlowDataError, SupportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
