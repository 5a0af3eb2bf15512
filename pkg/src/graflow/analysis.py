"""Scenario runs and residual checks shared by the CLI and the test-suite."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .brakke import (
    BumpVectorField,
    TestFunction,
    brakke_reports,
    identity_residual,
    perpendicularity_defect,
    standard_family,
    standard_windows,
    velocity_from_graph,
    velocity_from_motion_law,
)
from .discretization import GraphFlow, SpaceTimeGrid
from .flow_solver import SolverConfig, run
from .scenarios import Scenario
from .varifold import (
    DiscreteVarifold,
    SpaceTimeMeasure,
    SupportError,
    mean_curvature_duality_residual,
)

FLOOR = 1e-10


def roundoff_floor(flow: GraphFlow):
    """Level below which a difference-quotient residual is rounding noise.

    Time derivatives divide O(eps |f|) rounding by dt, so an exact scheme
    leaves residuals of this size that grow under refinement.
    """
    eps = np.finfo(float).eps
    return 64.0 * eps * (1.0 + float(np.abs(flow.values).max())) / flow.grid.dt


def scenario_grid(sc: Scenario, h, dt=None, sigma=0.9):
    return SpaceTimeGrid.fitted(sc.k, sc.codim, sc.box, h, sc.t_range, dt=dt, sigma=sigma)


def simulate(sc: Scenario, grid: SpaceTimeGrid, config: SolverConfig | None = None, stride=1):
    """Run the solver; exact Dirichlet data is used when the scenario has it
    and the config asks for it."""
    config = config or SolverConfig(
        boundary="dirichlet-exact" if sc.exact is not None else "dirichlet-frozen"
    )
    bv = sc.exact if config.boundary == "dirichlet-exact" else None
    return run(sc.initial, grid, config, sc.forcing, bv, stride=stride)


def solution_error(flow: GraphFlow, sc: Scenario):
    """Max-norm error against the exact solution over all stored nodes and times."""
    if sc.exact is None:
        return None
    coords = flow.grid.coords()
    return float(max(
        np.abs(flow.values[m] - sc.exact(coords, t)).max() for m, t in enumerate(flow.grid.times)
    ))


def duality_fields(grid: SpaceTimeGrid, f0, count=10, seed=1):
    """Bump vector fields g = phi e with base centers on grid nodes and
    normal centers near the slice ``f0``."""
    rng = np.random.default_rng(seed)
    n = grid.k + grid.codim
    half = min(hi - lo for lo, hi in grid.box) / 2
    axes = grid.axes
    r_max = half - 3.5 * grid.h
    if r_max <= grid.h:
        raise SupportError(f"grid spacing {grid.h:.6g} leaves no room for interior test fields")
    out = []
    for j in range(count):
        r = min(half * rng.uniform(0.25, 0.5), r_max)
        c = np.array([rng.uniform(lo + r + 3 * grid.h, hi - r - 3 * grid.h) for lo, hi in grid.box])
        node = tuple(int(np.argmin(np.abs(ax - ci))) for ax, ci in zip(axes, c))
        # centering on a node makes the flat-slice sum cancel by symmetry
        c = np.array([ax[j] for ax, j in zip(axes, node)])
        cN = f0[node] + rng.uniform(-0.1, 0.1, size=grid.codim)
        e = rng.normal(size=n)
        phi = TestFunction(c, cN, r, 1.5 + float(np.ptp(f0)), grid=None, name=f"g{j}")
        out.append(BumpVectorField(phi, e / np.linalg.norm(e)))
    return out


def duality_residual(grid: SpaceTimeGrid, f, t, fields):
    V = DiscreteVarifold.from_slice(grid, f, t)
    return max(mean_curvature_duality_residual(V, g) for g in fields)


@dataclass
class BrakkeFamily:
    phis: list
    windows: list


def brakke_family(flow: GraphFlow, count=24, n_windows=6, seed=0):
    return BrakkeFamily(standard_family(flow, count, seed), standard_windows(flow.grid, n_windows))


@dataclass
class CheckResults:
    solution_error: float | None = None
    brakke_relative: float | None = None      # max |rhs - lhs| / scale
    brakke_min_scaled: float | None = None    # min (rhs - lhs) / (scale (h^2 + dt))
    brakke_reports: list = field(default_factory=list)
    identity: float | None = None             # max over interior nodes and times
    motion_law: float | None = None
    perpendicularity: float | None = None
    duality: float | None = None
    timings: dict = field(default_factory=dict)


def check_flow(flow: GraphFlow, sc: Scenario, checks=("solution_error", "brakke", "identity",
               "motion_law", "duality"), family: BrakkeFamily | None = None, fields=None,
               duality_count=10):
    """Evaluate the enabled residual checks on ``flow``.

    The Brakke family and the duality fields default to ones built from
    ``flow`` itself; pass those of the coarsest level to compare refinements
    on equal terms.
    """
    grid = flow.grid
    out = CheckResults()
    interior = grid.interior_mask()
    tic = time.perf_counter()
    if "solution_error" in checks:
        out.solution_error = solution_error(flow, sc)
    out.timings["solution_error"] = time.perf_counter() - tic
    need_v = {"brakke", "identity", "motion_law"} & set(checks)
    if need_v:
        tic = time.perf_counter()
        M = SpaceTimeMeasure.from_flow(flow)
        v = velocity_from_motion_law(flow, sc.forcing, M)
        vg = velocity_from_graph(flow, M)
        out.perpendicularity = max(perpendicularity_defect(M, v), perpendicularity_defect(M, vg))
        out.timings["measure"] = time.perf_counter() - tic
    if "brakke" in checks:
        tic = time.perf_counter()
        family = family or brakke_family(flow)
        reps = brakke_reports(M, v, family.phis, family.windows)
        coef = grid.h**2 + grid.dt
        live = [r for r in reps if r.scale > 0]
        out.brakke_reports = reps
        out.brakke_relative = max((r.relative for r in live), default=0.0)
        out.brakke_min_scaled = min((r.residual / (r.scale * coef) for r in live), default=0.0)
        out.timings["brakke"] = time.perf_counter() - tic
    if "identity" in checks:
        tic = time.perf_counter()
        out.identity = max(float(identity_residual(flow, v, m)[interior].max())
                           for m in range(grid.n_times))
        out.timings["identity"] = time.perf_counter() - tic
    if "motion_law" in checks:
        tic = time.perf_counter()
        diff = np.linalg.norm(vg.values - v.values, axis=-1)
        out.motion_law = float(diff[:, interior.ravel()].max())
        out.timings["motion_law"] = time.perf_counter() - tic
    if "duality" in checks:
        tic = time.perf_counter()
        fields = fields or duality_fields(grid, flow.values[0], duality_count)
        out.duality = max(duality_residual(grid, flow.values[m], grid.times[m], fields)
                          for m in (0, grid.n_steps))
        out.timings["duality"] = time.perf_counter() - tic
    return out


def empirical_orders(values, hs, floors=None):
    """Orders log(e_i / e_{i+1}) / log(h_i / h_{i+1}) between consecutive levels.

    None for the first level and wherever a value is at or below its floor
    (``FLOOR`` by default, or the per-level ``floors``).
    """
    floors = [FLOOR] * len(values) if floors is None else [max(FLOOR, f) for f in floors]
    orders = [None]
    for i, (a, b) in enumerate(zip(values, values[1:])):
        ha, hb = hs[i], hs[i + 1]
        if a is None or b is None or a <= floors[i] or b <= floors[i + 1]:
            orders.append(None)
        else:
            orders.append(math.log(a / b) / math.log(ha / hb))
    return orders


def fit_constant(values, scales):
    """Smallest C with value <= C * scale on the given levels."""
    return max(v / s for v, s in zip(values, scales))
