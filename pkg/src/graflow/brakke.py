"""Weak-formulation checks on a discrete graph flow.

Three residuals are evaluated on the stored slices:

* the Brakke balance, for a family of non-negative bump test functions,
* the graph-velocity identity d_t f = (T_perp v) - grad f . (T v),
* the motion law v = h + u_perp, comparing the normal velocity of the
  graphs with mean curvature plus normal forcing.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .discretization import GraphFlow, SpaceTimeGrid, gradient_of, time_derivative
from .flow_solver import ForcingSpec
from .geometry import project_normal
from .varifold import SpaceTimeMeasure, SupportError


def _profile(s):
    """b(s) = (1 - s)^3 on [0, 1), zero beyond; returns (b, b')."""
    one_m = np.maximum(1.0 - s, 0.0)
    sq = one_m * one_m
    return sq * one_m, -3.0 * sq


class TestFunction:
    """Non-negative C^2 bump, product of a base-plane block, a normal block
    and a time block:

        phi = b(|Tx - c_T|^2 / r_T^2) b(|T_perp x - c_N|^2 / r_N^2) b((t - t0)^2 / tau^2)
    """

    __test__ = False  # not a pytest class

    def __init__(self, center_base, center_normal, r_tan, r_nor, t0=0.0, tau=None,
                 grid: SpaceTimeGrid | None = None, name=None):
        self.c_T = np.atleast_1d(np.asarray(center_base, dtype=float))
        self.c_N = np.atleast_1d(np.asarray(center_normal, dtype=float))
        self.k = self.c_T.size
        self.r_T = float(r_tan)
        self.r_N = float(r_nor)
        self.t0 = float(t0)
        self.tau = None if tau is None else float(tau)
        self.name = name
        if self.r_T <= 0 or self.r_N <= 0 or (self.tau is not None and self.tau <= 0):
            raise ValueError("bump radii must be positive")
        if grid is not None:
            self.check_support(grid)

    @property
    def base_support(self):
        return self.c_T, self.r_T

    def check_support(self, grid: SpaceTimeGrid):
        for ax, (lo, hi) in enumerate(grid.box):
            if self.c_T[ax] - self.r_T <= lo + grid.h or self.c_T[ax] + self.r_T >= hi - grid.h:
                raise SupportError(f"bump support leaves the interior of axis {ax}")
        if self.tau is not None:
            t_lo, t_hi = grid.t_range
            if self.t0 - self.tau <= t_lo or self.t0 + self.tau >= t_hi:
                raise SupportError("bump support in time is not inside the time window")

    def _blocks(self, points, t):
        points = np.asarray(points, dtype=float)
        dT = points[..., : self.k] - self.c_T
        dN = points[..., self.k :] - self.c_N
        bT, dbT = _profile(np.sum(dT * dT, axis=-1) / self.r_T**2)
        bN, dbN = _profile(np.sum(dN * dN, axis=-1) / self.r_N**2)
        bt, dbt = self.time_block(t)
        return dT, dN, bT, dbT, bN, dbN, bt, dbt

    def time_block(self, t):
        """Time factor and d/dt of it."""
        if self.tau is None:
            return np.ones_like(np.asarray(t, dtype=float)), np.zeros_like(np.asarray(t, dtype=float))
        b, db = _profile((np.asarray(t, dtype=float) - self.t0) ** 2 / self.tau**2)
        return b, db * 2.0 * (np.asarray(t, dtype=float) - self.t0) / self.tau**2

    def value(self, points, t=0.0):
        _, _, bT, _, bN, _, bt, _ = self._blocks(points, t)
        return bT * bN * bt

    def __call__(self, points, t=0.0):
        return self.value(points, t)

    def grad(self, points, t=0.0):
        dT, dN, bT, dbT, bN, dbN, bt, _ = self._blocks(points, t)
        gT = (dbT * bN * bt)[..., None] * (2.0 / self.r_T**2) * dT
        gN = (bT * dbN * bt)[..., None] * (2.0 / self.r_N**2) * dN
        return np.concatenate([gT, gN], axis=-1)

    def time_derivative(self, points, t=0.0):
        if self.tau is None:
            return np.zeros(np.shape(points)[:-1])
        _, _, bT, _, bN, _, _, dbt = self._blocks(points, t)
        return bT * bN * dbt

    def describe(self):
        return {
            "center_base": self.c_T.tolist(), "center_normal": self.c_N.tolist(),
            "r_tan": self.r_T, "r_nor": self.r_N, "t0": self.t0, "tau": self.tau,
        }


class BumpVectorField:
    """g(x) = phi(x) e for a time-independent bump phi and constant vector e."""

    def __init__(self, phi: TestFunction, direction):
        self.phi = phi
        self.e = np.asarray(direction, dtype=float)

    @property
    def base_support(self):
        return self.phi.base_support

    def value(self, points):
        return self.phi.value(points)[..., None] * self.e

    def jacobian(self, points):
        # J[alpha, beta] = e^alpha d_beta phi
        return self.e[:, None] * self.phi.grad(points)[..., None, :]

    def scaled(self, c):
        return BumpVectorField(self.phi, c * self.e)


@dataclass
class VelocityField:
    values: np.ndarray     # (n_slices, N, n)
    provenance: str        # "from-graph-motion" or "from-motion-law"


@dataclass
class BrakkeReport:
    phi_id: str
    t1: float
    t2: float
    lhs: float
    rhs: float
    residual: float
    scale: float
    tol: float

    @property
    def relative(self):
        return abs(self.residual) / self.scale if self.scale > 0 else 0.0

    @property
    def one_sided_ok(self):
        return self.residual >= -self.tol

    @property
    def equality_ok(self):
        return abs(self.residual) <= self.tol


def _slice_indices(flow, indices):
    return range(flow.grid.n_times) if indices is None else list(indices)


def velocity_from_graph(flow: GraphFlow, M: SpaceTimeMeasure | None = None, indices=None):
    """Normal velocity of the graphs: v = S_perp (0, d_t f)."""
    idx = _slice_indices(flow, indices)
    M = M or SpaceTimeMeasure.from_flow(flow, idx)
    grid = flow.grid
    out = []
    for V, m in zip(M.slices, idx):
        dtf = time_derivative(flow, m).reshape(-1, grid.codim)
        w = np.concatenate([np.zeros((dtf.shape[0], grid.k)), dtf], axis=1)
        out.append(project_normal(w, V.S))
    return VelocityField(np.stack(out), "from-graph-motion")


def velocity_from_motion_law(flow: GraphFlow, forcing: ForcingSpec | None,
                             M: SpaceTimeMeasure | None = None, indices=None):
    """v = h + (I - S) u(x + f, t)."""
    idx = _slice_indices(flow, indices)
    M = M or SpaceTimeMeasure.from_flow(flow, idx)
    out = []
    for V in M.slices:
        v = V.h.copy()
        if forcing is not None and forcing.kind != "zero":
            v += project_normal(forcing(V.positions, V.t), V.S)
        out.append(v)
    return VelocityField(np.stack(out), "from-motion-law")


def perpendicularity_defect(M: SpaceTimeMeasure, v: VelocityField):
    """max over nodes of |S v| / (1 + |v|)."""
    worst = 0.0
    for V, vel in zip(M.slices, v.values):
        Sv = np.einsum("nij,nj->ni", V.S, vel)
        ratio = np.linalg.norm(Sv, axis=1) / (1.0 + np.linalg.norm(vel, axis=1))
        worst = max(worst, float(ratio.max()))
    return worst


class _Stacked:
    """Slice data stacked along time for vectorized bump integrals."""

    def __init__(self, M: SpaceTimeMeasure, v: VelocityField):
        self.times = M.times
        self.dt = M.dt
        self.X = np.stack([V.positions for V in M.slices])
        self.w = np.stack([V.weights for V in M.slices])
        self.h = np.stack([V.h for V in M.slices])
        self.v = np.asarray(v.values)
        if self.v.shape != self.X.shape:
            raise ValueError("velocity field does not match the measure")


def _per_slice_terms(data: _Stacked, phi: TestFunction):
    times = data.times
    X = data.X
    w = data.w
    # spatial blocks are shared by the three time levels used per slice
    dT, dN, bT, dbT, bN, dbN, _, _ = phi._blocks(X, 0.0)
    t_next = np.append(times[1:], times[-1])
    t_prev = np.insert(times[:-1], 0, times[0])
    bt_now, dbt_now = phi.time_block(times)
    bt_next, _ = phi.time_block(t_next)
    bt_prev, _ = phi.time_block(t_prev)
    space = bT * bN
    phi_now = space * bt_now[:, None]
    gT = (dbT * bN * bt_now[:, None])[..., None] * (2.0 / phi.r_T**2) * dT
    gN = (bT * dbN * bt_now[:, None])[..., None] * (2.0 / phi.r_N**2) * dN
    grad = np.concatenate([gT, gN], axis=-1)
    A = np.sum(
        w * np.einsum("mni,mni->mn", -phi_now[..., None] * data.h + grad, data.v), axis=1
    )
    ws = np.sum(w * space, axis=1)
    mass = ws * bt_now
    supp = np.sum(np.where(phi_now > 0, w, 0.0), axis=1)
    # exact time increments of phi at frozen slice geometry; telescopes for static slices
    B_fwd = ws * (bt_next - bt_now)
    B_bwd = ws * (bt_now - bt_prev)
    return A, mass, supp, B_fwd, B_bwd


def _window_report(terms, data, phi_id, i1, i2, tol_coef):
    A, mass, supp, B_fwd, B_bwd = terms
    dt = data.dt
    lhs = float(mass[i2] - mass[i1])
    rhs = float(
        0.5 * dt * np.sum(A[i1:i2] + A[i1 + 1 : i2 + 1])
        + 0.5 * np.sum(B_fwd[i1:i2] + B_bwd[i1 + 1 : i2 + 1])
    )
    mu_supp = float(0.5 * dt * np.sum(supp[i1:i2] + supp[i1 + 1 : i2 + 1]))
    scale = max(abs(lhs), abs(rhs), mu_supp)
    return BrakkeReport(
        phi_id=phi_id, t1=float(data.times[i1]), t2=float(data.times[i2]), lhs=lhs, rhs=rhs,
        residual=rhs - lhs, scale=scale, tol=tol_coef * scale,
    )


def discretization_scale(grid: SpaceTimeGrid):
    return grid.h**2 + grid.dt


def brakke_residual(M: SpaceTimeMeasure, v: VelocityField, phi: TestFunction, t1, t2,
                    c_report=1.0, h=None, phi_id=None):
    """Both sides of the Brakke balance over [t1, t2].

    lhs = int phi(., t2) d||V_t2|| - int phi(., t1) d||V_t1||
    rhs = int_{t1}^{t2} int (-phi h + grad phi) . v + d_t phi d||V_t|| dt

    The tolerance is ``c_report * (h^2 + dt) * scale``; ``h`` defaults to the
    grid spacing of the slices.
    """
    if t1 >= t2:
        raise ValueError("need t1 < t2")
    grid = M.slices[0].grid
    phi.check_support(grid)
    i1, i2 = M.index_of(t1), M.index_of(t2)
    data = _Stacked(M, v)
    sub = slice(i1, i2 + 1)
    data.times, data.X, data.w, data.h, data.v = (
        data.times[sub], data.X[sub], data.w[sub], data.h[sub], data.v[sub]
    )
    hh = grid.h if h is None else h
    terms = _per_slice_terms(data, phi)
    return _window_report(terms, data, phi_id or phi.name or "phi", 0, i2 - i1,
                          c_report * (hh**2 + M.dt))


def _workers():
    try:
        return max(1, int(os.environ.get("GRAFLOW_THREADS", "1")))
    except ValueError:
        return 1


def brakke_reports(M: SpaceTimeMeasure, v: VelocityField, phis, windows, c_report=1.0,
                   workers=None):
    """Reports for every (phi, window); phis evaluated in parallel."""
    grid = M.slices[0].grid
    for phi in phis:
        phi.check_support(grid)
    data = _Stacked(M, v)
    idx = [(M.index_of(t1), M.index_of(t2)) for t1, t2 in windows]
    for i1, i2 in idx:
        if i1 >= i2:
            raise ValueError("need t1 < t2")
    tol_coef = c_report * discretization_scale(grid)

    def one(item):
        j, phi = item
        terms = _per_slice_terms(data, phi)
        return [_window_report(terms, data, phi.name or f"phi{j}", i1, i2, tol_coef)
                for i1, i2 in idx]

    workers = workers or _workers()
    items = list(enumerate(phis))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(one, items))
    else:
        chunks = [one(it) for it in items]
    return [r for chunk in chunks for r in chunk]


def reports_to_json(reports):
    return json.dumps([asdict(r) for r in reports], indent=2)


def standard_family(flow: GraphFlow, count=24, seed=0):
    """Deterministic family of bumps adapted to a flow.

    Base centers and radii are drawn inside the interior region, normal
    centers sit on the graph at the bump's base center and mid time, and the
    normal radius covers the graph's excursion over the window so the bump
    sees the moving surface.
    """
    grid = flow.grid
    rng = np.random.default_rng(seed)
    t_lo, t_hi = grid.t_range
    T = t_hi - t_lo
    half = min(hi - lo for lo, hi in grid.box) / 2
    axes = grid.axes
    excursion = float(np.max(np.ptp(flow.values, axis=0))) if grid.n_times > 1 else 0.0
    # leave two nodes plus a sliver between the bump and each face
    r_max = half - 2.5 * grid.h
    if r_max <= grid.h:
        raise SupportError(f"grid spacing {grid.h:.6g} leaves no room for interior test functions")
    phis = []
    for j in range(count):
        r_T = min(half * rng.uniform(0.2, 0.6), r_max)
        c_T = np.array([
            rng.uniform(lo + r_T + 2 * grid.h, hi - r_T - 2 * grid.h) for lo, hi in grid.box
        ])
        tau = T * rng.uniform(0.3, 0.499)
        t0 = rng.uniform(t_lo + tau + 0.001 * T, t_hi - tau - 0.001 * T)
        m = grid.time_index(t_lo + grid.dt * round((t0 - t_lo) / grid.dt))
        node = tuple(int(np.argmin(np.abs(ax - c))) for ax, c in zip(axes, c_T))
        c_N = flow.values[(m,) + node] + rng.uniform(-0.2, 0.2, size=grid.codim) * r_T
        r_N = excursion + r_T * rng.uniform(1.5, 3.0) + 4.0 * grid.h
        phis.append(TestFunction(c_T, c_N, r_T, r_N, t0=t0, tau=tau, grid=grid, name=f"phi{j}"))
    return phis


def standard_windows(grid: SpaceTimeGrid, count=6):
    """Windows (t1, t2) on grid times spread across the time range."""
    n = grid.n_steps
    fracs = [(0.0, 1.0), (0.1, 0.6), (0.2, 0.8), (0.4, 0.9), (0.05, 0.3), (0.5, 1.0),
             (0.25, 0.75), (0.6, 0.95)]
    out = []
    for a, b in fracs[:count]:
        i1, i2 = int(round(a * n)), int(round(b * n))
        if i2 > i1:
            out.append((float(grid.times[i1]), float(grid.times[i2])))
    return out


def identity_residual(flow: GraphFlow, v: VelocityField, time_index, slot=None):
    """Per-node |d_t f - (T_perp v) + grad f (T v)|, shape grid.shape.

    ``slot`` selects the row of ``v`` holding this time (defaults to
    ``time_index``).
    """
    grid = flow.grid
    P = gradient_of(flow.values[time_index], grid.h, grid.k).reshape(-1, grid.codim, grid.k)
    dtf = time_derivative(flow, time_index).reshape(-1, grid.codim)
    vel = v.values[time_index if slot is None else slot]
    res = dtf - vel[:, grid.k :] + np.einsum("naj,nj->na", P, vel[:, : grid.k])
    return np.linalg.norm(res, axis=1).reshape(grid.shape)


def motion_law_residual(flow: GraphFlow, forcing: ForcingSpec | None, time_index):
    """Per-node |v_graph - v_law| at one time level, shape grid.shape."""
    M = SpaceTimeMeasure.from_flow(flow, [time_index])
    vg = velocity_from_graph(flow, M, [time_index]).values[0]
    vl = velocity_from_motion_law(flow, forcing, M, [time_index]).values[0]
    return np.linalg.norm(vg - vl, axis=1).reshape(flow.grid.shape)


def interior_summary(grid: SpaceTimeGrid, field_):
    """(max, L2) of a nodewise field over interior nodes."""
    mask = grid.interior_mask()
    vals = np.asarray(field_)[mask]
    w = grid.trapezoid_weights()[mask]
    return float(vals.max()), float(np.sqrt(np.sum(vals**2 * w)))
