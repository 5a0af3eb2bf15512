"""Acceptance criteria 1-11, one test per criterion.

Each test records a single PASS/FAIL line; the lines are repeated in the
"acceptance criteria" section of the pytest terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest

from graflow import scenarios
from graflow.analysis import (
    brakke_family,
    check_flow,
    duality_fields,
    fit_constant,
    roundoff_floor,
    scenario_grid,
    simulate,
    solution_error,
)
from graflow.cli import main
from graflow.discretization import SpaceTimeGrid
from graflow.geometry import induced_metric, legendre_hadamard
from graflow.norms import estimate_report, lpq_norm, parabolic_holder

LEVELS = 3


def fmt(values):
    return "[" + ", ".join("n/a" if v is None else f"{v:.3g}" for v in values) + "]"


def orders_in(values, scales):
    """log(e_i / e_{i+1}) / log(s_i / s_{i+1})."""
    return [math.log(a / b) / math.log(sa / sb)
            for a, b, sa, sb in zip(values, values[1:], scales, scales[1:])]


# Scenarios 1 and 2 of the criteria list, on nested grids (h, dt) -> (h/2, dt/4).
STUDY_SCENARIOS = {
    "grim-reaper": lambda: scenarios.grim_reaper(),
    "forced-translation": lambda: scenarios.forced_translation(k=1, n=2),
}


@pytest.fixture(scope="module")
def studies():
    out = {}
    for name, make in STUDY_SCENARIOS.items():
        sc = make()
        grid = scenario_grid(sc, 1 / 16)
        rows = []
        family = None
        for _ in range(LEVELS):
            flow, _ = simulate(sc, grid)
            family = family or brakke_family(flow, count=24, n_windows=6)
            res = check_flow(flow, sc, ("brakke", "identity", "motion_law"), family=family)
            rows.append({"h": grid.h, "dt": grid.dt, "coef": grid.h**2 + grid.dt,
                         "floor": roundoff_floor(flow), "res": res})
            grid = grid.refined()
        out[name] = (family, rows)
    return out


# -- 1 ---------------------------------------------------------------------------

def test_criterion_01_exact_solution_tracking(criterion):
    sc = scenarios.grim_reaper()
    errs, hs = [], []
    for h in (1 / 32, 1 / 64):
        grid = scenario_grid(sc, h)
        assert grid.dt == pytest.approx(0.9 * grid.h**2 / 2, rel=1e-2)
        tic = time.perf_counter()
        flow, _ = simulate(sc, grid)
        runtime = time.perf_counter() - tic
        errs.append(solution_error(flow, sc))
        hs.append(grid.h)
    factor = errs[0] / errs[1]
    ok = errs[1] <= 5e-3 and factor >= 3 and runtime <= 10.0
    criterion(1, ok, f"grim reaper h={hs[1]:.5g}: error {errs[1]:.3g} (<= 5e-3), "
                     f"halving factor {factor:.2f} (>= 3), runtime {runtime:.2f}s (<= 10s)")


# -- 2 ---------------------------------------------------------------------------

def test_criterion_02_forced_translation_exact(criterion):
    worst = 0.0
    for k, n in ((1, 2), (2, 3), (2, 4)):
        sc = scenarios.forced_translation(k=k, n=n, t_range=(0.0, 0.1), speed=0.7)
        flow, _ = simulate(sc, scenario_grid(sc, 1 / 16))
        worst = max(worst, solution_error(flow, sc))
    criterion(2, worst <= 1e-12, f"max |f - c t| over (k,n) in (1,2),(2,3),(2,4): "
                                 f"{worst:.3g} (<= 1e-12)")


# -- 3 ---------------------------------------------------------------------------

def test_criterion_03_brakke_equality(studies, criterion):
    ok, parts = True, []
    for name, (family, rows) in studies.items():
        rel = [r["res"].brakke_relative for r in rows]
        coefs = [r["coef"] for r in rows]
        hs = [r["h"] for r in rows]
        c_fit = fit_constant(rel[:2], coefs[:2])
        one_sided = all(rep.residual >= -c_fit * r["coef"] * rep.scale
                        for r in rows for rep in r["res"].brakke_reports)
        equality = all(abs(rep.residual) <= c_fit * rows[-1]["coef"] * rep.scale
                       for rep in rows[-1]["res"].brakke_reports)
        order_h = orders_in(rel, hs)
        decreasing = all(b < a for a, b in zip(rel, rel[1:]))
        enough = len(family.phis) >= 20 and len(family.windows) >= 5
        ok &= enough and decreasing and min(order_h) >= 1 and one_sided and equality
        parts.append(f"{name}: {len(family.phis)} phi x {len(family.windows)} windows, "
                     f"max|rhs-lhs|/scale {fmt(rel)}, order(h) {fmt(order_h)}, "
                     f"C_fit {c_fit:.3g}, one-sided {one_sided}, equality on finest {equality}")
    criterion(3, ok, "; ".join(parts))


# -- 4 and 5 ---------------------------------------------------------------------

def _residual_criterion(studies, key):
    """C fit on the two coarsest levels, asserted on the finest; order >= 1 in
    h^2 + dt. Residuals at the roundoff floor on every level are exact up to
    rounding and have no order."""
    ok, parts = True, []
    for name, (_, rows) in studies.items():
        vals = [getattr(r["res"], key) for r in rows]
        floors = [r["floor"] for r in rows]
        coefs = [r["coef"] for r in rows]
        if all(v <= f for v, f in zip(vals, floors)):
            parts.append(f"{name}: {fmt(vals)} at roundoff floor {fmt(floors)}, order n/a")
            continue
        c_fit = fit_constant(vals[:2], coefs[:2])
        order_eps = orders_in(vals, coefs)
        order_h = orders_in(vals, [r["h"] for r in rows])
        bound_ok = vals[-1] <= c_fit * coefs[-1]
        ok &= bound_ok and min(order_eps) >= 1
        parts.append(f"{name}: {fmt(vals)}, finest {vals[-1]:.3g} <= C_fit (h^2+dt) = "
                     f"{c_fit * coefs[-1]:.3g}: {bound_ok}, order(h^2+dt) {fmt(order_eps)}, "
                     f"order(h) {fmt(order_h)}")
    return ok, "; ".join(parts)


def test_criterion_04_velocity_identity(studies, criterion):
    ok, detail = _residual_criterion(studies, "identity")
    criterion(4, ok, detail)


def test_criterion_05_motion_law(studies, criterion):
    ok, detail = _residual_criterion(studies, "motion_law")
    criterion(5, ok, detail)


# -- 6 ---------------------------------------------------------------------------

def test_criterion_06_legendre_hadamard(criterion):
    rng = np.random.default_rng(6)
    total = fails = 0
    worst_eq = 0.0
    for k in (1, 2):
        for codim in (1, 2):
            m = 2500
            P = rng.normal(size=(m, codim, k))
            P *= (10.0 * rng.uniform(0, 1, size=m) ** 0.5 / np.linalg.norm(P, axis=(1, 2)))[:, None, None]
            xi = rng.normal(size=(m, k))
            eta = rng.normal(size=(m, codim))
            lhs, rhs = legendre_hadamard(P, xi, eta)
            fails += int(np.sum(lhs < rhs - 1e-12 * np.maximum(1.0, np.abs(lhs))))
            total += m
            if k == 1 and codim == 1:
                worst_eq = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))))
    ok = total == 10_000 and fails == 0 and worst_eq <= 1e-12
    criterion(6, ok, f"{total} samples with |P|_F <= 10: {fails} violations; "
                     f"k=1 codim=1 max relative |lhs-rhs| {worst_eq:.3g} (<= 1e-12)")


# -- 7 ---------------------------------------------------------------------------

def test_criterion_07_metric_bounds(criterion):
    rng = np.random.default_rng(7)
    total = bad = bad_literal = n_literal = 0
    for k in (1, 2, 3):
        for codim in (1, 2):
            m = 10_000 // 6 + (1 if k == 1 and codim == 1 else 0) * (10_000 % 6)
            P = rng.normal(size=(m, codim, k)) * rng.choice([0.1, 1.0, 10.0, 100.0], size=m)[:, None, None]
            norm2 = np.sum(P * P, axis=(1, 2))
            met = induced_metric(P)
            eigs = np.linalg.eigvalsh(met.g_inv)
            lo = 1.0 / (1.0 + norm2)
            bad += int(np.sum((eigs[:, 0] < lo - 1e-12) | (eigs[:, -1] > 1.0 + 1e-12)))
            small = norm2 <= 1.0
            literal = 1.0 / (1.0 + np.sqrt(norm2))
            bad_literal += int(np.sum(eigs[small, 0] < literal[small] - 1e-12))
            n_literal += int(small.sum())
            total += m
    ok = total == 10_000 and bad == 0 and bad_literal == 0 and n_literal > 0
    criterion(7, ok, f"{total} samples: {bad} outside [1/(1+|P|^2), 1]; literal bound "
                     f"1/(1+|P|) on {n_literal} samples with |P|_F <= 1: {bad_literal} violations")


# -- 8 ---------------------------------------------------------------------------

def test_criterion_08_duality(criterion):
    sc = scenarios.paraboloid_cap()
    grid = scenario_grid(sc, 1 / 16)
    fields = None
    res, hs = [], []
    for _ in range(4):
        flow, _ = simulate(sc, grid)
        fields = fields or duality_fields(grid, flow.values[0], count=10)
        res.append(check_flow(flow, sc, ("duality",), fields=fields).duality)
        hs.append(grid.h)
        grid = grid.refined()
    orders = orders_in(res, hs)
    ok = len(fields) == 10 and min(orders) >= 1.5
    criterion(8, ok, f"paraboloid cap, 10 fields, h {fmt(hs)}: residual {fmt(res)}, "
                     f"orders {fmt(orders)} (>= 1.5)")


# -- 9 ---------------------------------------------------------------------------

def _grid_1d(box, h, t_range, dt):
    return SpaceTimeGrid(k=1, codim=1, box=(box,), h=h, dt=dt, t_range=t_range)


def _sample(g, fn):
    x = g.coords()[..., 0]
    return np.stack([fn(x, t) for t in g.times])


def test_criterion_09_norm_oracles(criterion):
    h = 1 / 128
    g = _grid_1d((-1.0, 1.0), h, (-1.0, 0.0), h)
    examples = {
        "lpq(1)=sqrt2": (lpq_norm(np.ones((g.n_times,) + g.shape), g, 2, 2), math.sqrt(2)),
    }
    g = _grid_1d((0.0, 1.0), h, (0.0, 1.0), 0.5)
    examples["holder(x)=1"] = (parabolic_holder(_sample(g, lambda x, t: x + 0 * t), 0.5, grid=g), 1.0)
    g = _grid_1d((0.0, 1.0), 0.25, (0.0, 1.0), h)
    examples["holder(t)=1"] = (parabolic_holder(_sample(g, lambda x, t: t + 0 * x), 0.5, grid=g), 1.0)
    errs = {k: abs(v - e) for k, (v, e) in examples.items()}

    # convergence on closed forms with non-trivial quadrature / sampling error
    conv_lpq, conv_hol = [], []
    for hh in (1 / 32, 1 / 64, 1 / 128):
        g = _grid_1d((-1.0, 1.0), hh, (-1.0, 0.0), hh)
        conv_lpq.append(abs(lpq_norm(_sample(g, lambda x, t: x**2 * np.exp(t)), g, 2, 2)
                            - math.sqrt(2 / 5 * (1 - math.exp(-2)) / 2)))
        g = _grid_1d((0.0, 1.0), hh, (0.0, 1.0), 0.5)
        conv_hol.append(abs(parabolic_holder(_sample(g, lambda x, t: np.sin(math.pi * x) + 0 * t),
                                             1.0, grid=g) - math.pi))
    converges = all(b < a for seq in (conv_lpq, conv_hol) for a, b in zip(seq, seq[1:]))
    ok = max(errs.values()) <= 1e-3 and conv_lpq[-1] <= 1e-3 and conv_hol[-1] <= 1e-3 and converges
    detail = ", ".join(f"{k} err {v:.2g}" for k, v in errs.items())
    criterion(9, ok, f"h=1/128: {detail}; refinement errors lpq(x^2 e^t) {fmt(conv_lpq)}, "
                     f"[sin(pi x)]_1 {fmt(conv_hol)}")


# -- 10 --------------------------------------------------------------------------

ESTIMATE_SUITE = [
    ("grim-reaper", lambda: scenarios.grim_reaper(t_range=(-1.0, 0.0)), 1.0),
    ("forced-translation", lambda: scenarios.forced_translation(k=1, n=2, t_range=(-0.25, 0.0)), 0.5),
    ("paraboloid-cap", lambda: scenarios.paraboloid_cap(t_range=(0.0, 0.0625)), 0.25),
]


def test_criterion_10_estimate_stability(criterion):
    ok, parts, ratios_all = True, [], []
    for name, make, R in ESTIMATE_SUITE:
        sc = make()
        grid = scenario_grid(sc, 1 / 16)
        ratios = []
        for level in range(3):
            flow, _ = simulate(sc, grid)
            rep = estimate_report(flow, sc.forcing, p=2, q=2, R=R, refinement_level=level)
            ratios.append(rep.ratio)
            grid = grid.refined()
        finite = all(r is not None and 0 < r < math.inf for r in ratios)
        spread = (max(ratios) - min(ratios)) / min(ratios) if finite else math.inf
        ok &= finite and spread <= 0.10
        ratios_all += ratios
        parts.append(f"{name} R={R}: ratios {fmt(ratios)}, spread {spread:.1%}")
    bound = max(ratios_all)
    criterion(10, ok, "; ".join(parts) + f"; suite constant {bound:.3g}")


# -- 11 --------------------------------------------------------------------------

def test_criterion_11_determinism(tmp_path, criterion):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": "grim-reaper", "h": 1 / 32,
                               "norms": [{"R": 0.5}, {"kind": "holder", "R": 0.5}]}))
    runs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["simulate", "--config", str(cfg), "--out", str(d)]) for d in runs]
    codes.append(main(["verify", "--config", str(cfg), "--flow", str(runs[0] / "fields.csv"),
                       "--out", str(tmp_path / "v")]))
    same_files = all((runs[0] / f).read_bytes() == (runs[1] / f).read_bytes()
                     for f in ("fields.csv", "brakke.json", "norms.json"))
    ma, mv = (json.loads((d / "manifest.json").read_text()) for d in (runs[0], tmp_path / "v"))
    measured = {k: v["measured"] for k, v in ma["checks"].items()}
    verified = {k: v["measured"] for k, v in mv["checks"].items()}
    round_trip = (measured == verified
                  and (runs[0] / "brakke.json").read_bytes() == (tmp_path / "v" / "brakke.json").read_bytes()
                  and (runs[0] / "norms.json").read_bytes() == (tmp_path / "v" / "norms.json").read_bytes())
    ok = codes == [0, 0, 0] and same_files and round_trip
    criterion(11, ok, f"exit codes {codes}; rerun bit-identical {same_files}; "
                      f"simulate -> dump -> verify bit-identical {round_trip} "
                      f"({len(measured)} residuals)")
