"""Mixed space-time norms, parabolic Hoelder seminorms and estimate reports.

Fields are sampled on a :class:`SpaceTimeGrid` with shape
``(n_times, *grid.shape[, components...])``; trailing component axes are
reduced with the Euclidean (Frobenius) norm.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .discretization import (
    GraphFlow,
    SpaceTimeGrid,
    ball_mask,
    gradient_of,
    hessian_of,
    time_derivative,
)
from .flow_solver import ForcingSpec

N_CAP = 40_000


class EmptyRegionError(ValueError):
    pass


@dataclass(frozen=True)
class NormRequest:
    p: float = 2.0
    q: float = 2.0
    radius: float | None = None     # ball radius; None means the whole box
    center: tuple | None = None
    window: tuple | None = None     # (t_lo, t_hi); None means the whole range
    target: str = "f"               # f, grad, hess, dt, u

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ValueError("p and q must be >= 1")
        if self.target not in ("f", "grad", "hess", "dt", "u"):
            raise ValueError(f"unknown norm target {self.target!r}")


def pointwise_magnitude(field_, grid: SpaceTimeGrid):
    a = np.asarray(field_, dtype=float)
    extra = a.ndim - 1 - grid.k
    if extra < 0:
        raise ValueError("field does not cover the spatial grid")
    if extra == 0:
        return np.abs(a)
    axes = tuple(range(1 + grid.k, a.ndim))
    return np.sqrt(np.sum(a * a, axis=axes))


def window_indices(grid: SpaceTimeGrid, window):
    times = grid.times
    if window is None:
        return 0, grid.n_steps
    lo, hi = window
    tol = 1e-9 * max(1.0, abs(grid.dt))
    sel = np.nonzero((times >= lo - tol) & (times <= hi + tol))[0]
    if sel.size == 0:
        raise EmptyRegionError(f"time window {window} contains no grid time")
    return int(sel[0]), int(sel[-1])


def region_mask(grid: SpaceTimeGrid, radius=None, center=None):
    if radius is None:
        return np.ones(grid.shape, dtype=bool)
    mask = ball_mask(grid, radius, center)
    if not mask.any():
        raise EmptyRegionError(f"ball of radius {radius} contains no node")
    return mask


def lpq_norm(field_, grid: SpaceTimeGrid, p=2.0, q=2.0, mask=None, window=None, weights=None):
    """(int_I (int_Omega |F|^p w dx)^(q/p) dt)^(1/q) by trapezoid rules.

    ``weights`` (same shape as the scalar field) multiplies the spatial
    measure, e.g. the area element for norms against the weight measure.
    p or q = inf selects the maximum over the sampled nodes.
    """
    mag = pointwise_magnitude(field_, grid)
    if mag.shape[0] != grid.n_times:
        raise ValueError("field does not cover the time grid")
    mask = np.ones(grid.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyRegionError("empty spatial region")
    i0, i1 = window_indices(grid, window)
    mag = mag[i0 : i1 + 1]
    if math.isinf(p):
        inner = np.max(np.where(mask, mag, 0.0).reshape(mag.shape[0], -1), axis=1)
    else:
        w = grid.trapezoid_weights() * mask
        if weights is not None:
            w = w * np.asarray(weights, dtype=float)[i0 : i1 + 1]
        w = np.broadcast_to(w, mag.shape)
        inner = np.sum((mag**p * w).reshape(mag.shape[0], -1), axis=1) ** (1.0 / p)
    if math.isinf(q):
        return float(inner.max())
    wt = grid.time_weights(i0, i1)
    if i1 == i0:
        raise EmptyRegionError("time window has zero length")
    return float(np.sum(inner**q * wt) ** (1.0 / q))


def _pairs_sup(vals, xs, ts, alpha, ia, ib):
    dv = vals[ia] - vals[ib]
    num = np.sqrt(np.sum(dv * dv, axis=1))
    dx = np.sqrt(np.sum((xs[ia] - xs[ib]) ** 2, axis=1))
    dt = np.abs(ts[ia] - ts[ib])
    den = np.maximum(dx**alpha, dt ** (alpha / 2))
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if ok.any() else 0.0


def _all_pairs_sup(vals, xs, ts, alpha, block=2048):
    n = len(vals)
    best = 0.0
    for start in range(0, n, block):
        ia = np.arange(start, min(start + block, n))
        for jstart in range(start, n, block):
            jb = np.arange(jstart, min(jstart + block, n))
            A, B = np.meshgrid(ia, jb, indexing="ij")
            keep = A < B
            if keep.any():
                best = max(best, _pairs_sup(vals, xs, ts, alpha, A[keep], B[keep]))
    return best


def holder_seminorm(values, coords, times, alpha, n_cap=N_CAP):
    """sup |F(x,t) - F(y,s)| / max(|x-y|^alpha, |t-s|^(alpha/2)) over samples.

    ``values`` has shape (n_t, *shape[, comps]), ``coords`` (*shape, k),
    ``times`` (n_t,). If all pairs exceed ``n_cap`` the supremum is taken
    over a deterministic stratified subsample: every pair of a strided
    subgrid with at most ``n_cap`` pairs, plus all pairs at dyadic offsets
    1, 2, 4, ... along each spatial axis and along time. The result is a
    lower bound for the continuum seminorm either way.
    """
    values = np.asarray(values, dtype=float)
    k = coords.shape[-1]
    shape = coords.shape[:-1]
    n_t = len(times)
    vals = values.reshape((n_t,) + shape + (-1,))
    total = n_t * int(np.prod(shape))
    flat_v = vals.reshape(total, -1)
    flat_x = np.broadcast_to(coords, (n_t,) + coords.shape).reshape(total, k)
    flat_t = np.repeat(np.asarray(times, dtype=float), int(np.prod(shape)))
    if total * (total - 1) // 2 <= n_cap:
        return _all_pairs_sup(flat_v, flat_x, flat_t, alpha)
    # stratum 1: strided subgrid, all pairs
    dims = (n_t,) + shape
    target = int(math.sqrt(2 * n_cap))
    stride = 1
    while np.prod([math.ceil(d / stride) for d in dims]) > target:
        stride += 1
    idx = np.arange(total).reshape(dims)
    sub = idx[np.ix_(*[np.arange(0, d, stride) for d in dims])].ravel()
    best = _all_pairs_sup(flat_v[sub], flat_x[sub], flat_t[sub], alpha)
    # stratum 2: dyadic neighbours along every axis (space and time)
    for axis, d in enumerate(dims):
        off = 1
        while off < d:
            a = np.take(idx, np.arange(0, d - off), axis=axis).ravel()
            b = np.take(idx, np.arange(off, d), axis=axis).ravel()
            best = max(best, _pairs_sup(flat_v, flat_x, flat_t, alpha, a, b))
            off *= 2
    return best


def time_holder(values, times, exponent):
    """sup_x sup_{t != s} |F(x,t) - F(x,s)| / |t-s|^exponent."""
    values = np.asarray(values, dtype=float)
    n_t = len(times)
    vals = values.reshape(n_t, -1)
    best = 0.0
    times = np.asarray(times, dtype=float)
    for lag in range(1, n_t):
        diff = vals[lag:] - vals[:-lag]
        dt = (times[lag:] - times[:-lag])[:, None]
        best = max(best, float(np.max(np.abs(diff) / dt**exponent)))
    return best


def flow_fields(flow: GraphFlow):
    """Gradient, Hessian and time derivative of every slice."""
    grid = flow.grid
    P = gradient_of(flow.values, grid.h, grid.k, lead=1)
    Q = hessian_of(flow.values, grid.h, grid.k, lead=1)
    D = np.stack([time_derivative(flow, m) for m in range(grid.n_times)])
    return P, Q, D


def parabolic_holder(flow_or_values, alpha, order=0, grid: SpaceTimeGrid | None = None,
                     mask=None, window=None, n_cap=N_CAP):
    """Parabolic Hoelder seminorm of order 0, 1 or 2 over sampled pairs.

    order 0: [F]_alpha
    order 1: [grad F]_alpha + sup |F(x,t) - F(x,s)| / |t-s|^((1+alpha)/2)
    order 2: [d_t F]_alpha + [grad^2 F]_alpha
    For order >= 1 pass a GraphFlow. For order 0 either a GraphFlow or raw
    values with ``grid``.
    """
    if isinstance(flow_or_values, GraphFlow):
        grid = flow_or_values.grid
        values = flow_or_values.values
    else:
        values = np.asarray(flow_or_values, dtype=float)
        if grid is None:
            raise ValueError("raw values need a grid")
        if order > 0:
            raise ValueError("derivative seminorms need a GraphFlow")
    i0, i1 = window_indices(grid, window)
    mask = np.ones(grid.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    coords = grid.coords()[mask]
    times = grid.times[i0 : i1 + 1]

    def restrict(a):
        return np.asarray(a)[i0 : i1 + 1][:, mask]

    if order == 0:
        return holder_seminorm(restrict(values), coords, times, alpha, n_cap)
    P, Q, D = flow_fields(flow_or_values)
    if order == 1:
        return (holder_seminorm(restrict(P), coords, times, alpha, n_cap)
                + time_holder(restrict(values), times, (1 + alpha) / 2))
    if order == 2:
        return (holder_seminorm(restrict(D), coords, times, alpha, n_cap)
                + holder_seminorm(restrict(Q), coords, times, alpha, n_cap))
    raise ValueError("order must be 0, 1 or 2")


@dataclass
class EstimateReport:
    kind: str
    p: float
    q: float
    R: float
    lhs: float
    rhs_parts: tuple
    ratio: float | None
    degenerate: bool = False
    refinement_level: int | None = None
    alpha: float | None = None

    def to_dict(self):
        d = asdict(self)
        d["rhs_parts"] = list(self.rhs_parts)
        for key in ("p", "q"):
            if math.isinf(d[key]):
                d[key] = "inf"
        return d


def forcing_along_graph(flow: GraphFlow, forcing):
    """u(x + f(x,t), t) at every node and time, shape (n_t, *shape, n)."""
    grid = flow.grid
    if isinstance(forcing, np.ndarray):
        return forcing
    n = grid.k + grid.codim
    if forcing is None:
        return np.zeros(flow.values.shape[:-1] + (n,))
    coords = grid.coords()
    return np.stack([
        forcing.along_graph(coords, flow.values[m], t) for m, t in enumerate(grid.times)
    ])


def _area_element(flow: GraphFlow, P=None):
    from .geometry import induced_metric

    grid = flow.grid
    P = gradient_of(flow.values, grid.h, grid.k, lead=1) if P is None else P
    return induced_metric(P).sqrt_g


def _crop(flow: GraphFlow, forcing, R, center, window):
    """Restrict a flow to the slices of ``window`` and to the bounding box of
    the ball plus two nodes, so that every node in the ball keeps its
    interior stencils. Returns (cropped flow with d_t f attached, forcing).
    """
    grid = flow.grid
    j0, j1 = window_indices(grid, window)
    c = np.zeros(grid.k) if center is None else np.asarray(center, dtype=float)
    sl, box = [], []
    for ax, x in enumerate(grid.axes):
        inside = np.nonzero(np.abs(x - c[ax]) < R)[0]
        lo = max(int(inside[0]) - 2, 0)
        hi = min(int(inside[-1]) + 2, len(x) - 1)
        if hi - lo + 1 < 5:
            lo, hi = max(0, min(lo, len(x) - 5)), min(len(x) - 1, max(hi, 4))
        sl.append(slice(lo, hi + 1))
        box.append((float(x[lo]), float(x[hi])))
    space = tuple(sl)
    D = np.stack([time_derivative(flow, m)[space] for m in range(j0, j1 + 1)])
    if isinstance(forcing, np.ndarray):
        forcing = forcing[(slice(j0, j1 + 1),) + space]
    sub = SpaceTimeGrid(k=grid.k, codim=grid.codim, box=tuple(box), h=grid.h, dt=grid.dt,
                        t_range=(float(grid.times[j0]), float(grid.times[j1])))
    cropped = GraphFlow(sub, flow.values[(slice(j0, j1 + 1),) + space], boundary=flow.boundary)
    return cropped, forcing, D


def estimate_report(flow: GraphFlow, forcing: ForcingSpec | np.ndarray | None, p=2.0, q=2.0,
                    R=1.0, center=None, t_end=None, kind="lpq", alpha=0.5,
                    u_measure="area", refinement_level=None, n_cap=N_CAP):
    """Both sides of the interior regularity estimate on Q_{R/2} vs Q_R.

    kind="lpq":
        lhs = ||d_t f||_{p,q; Q_R/2} + ||grad^2 f||_{p,q; Q_R/2}
        rhs = (R^-2 ||f||_{p,q; Q_R}, ||u||_{p,q; Q_R})
    kind="holder":
        lhs = ||d_t f||_0 + ||grad^2 f||_0 + R^a([d_t f]_a + [grad^2 f]_a)  on Q_R/2
        rhs = (R^-2 ||f||_0, ||u||_0, R^a [u]_a)                            on Q_R

    The parabolic cylinders end at ``t_end`` (default: the final grid time).
    ``u_measure`` is "area" (weight measure of the graph) or "dx".
    """
    grid = flow.grid
    t_end = grid.t_range[1] if t_end is None else t_end
    if t_end - R**2 < grid.t_range[0] - 1e-12:
        raise EmptyRegionError(f"time range does not cover Q_R with R={R}")
    for ax, (lo, hi) in enumerate(grid.box):
        c = 0.0 if center is None else center[ax]
        if c - R < lo - 1e-12 or c + R > hi + 1e-12:
            raise EmptyRegionError(f"box does not cover the ball of radius {R}")
    region_mask(grid, R, center)
    w_out = (t_end - R**2, t_end)
    w_in = (t_end - R**2 / 4, t_end)
    flow, forcing, D = _crop(flow, forcing, R, center, w_out)
    grid = flow.grid
    outer = region_mask(grid, R, center)
    inner = region_mask(grid, R / 2, center)
    P = gradient_of(flow.values, grid.h, grid.k, lead=1)
    Q = hessian_of(flow.values, grid.h, grid.k, lead=1)
    u = forcing_along_graph(flow, forcing)
    if kind == "lpq":
        lhs = (lpq_norm(D, grid, p, q, inner, w_in) + lpq_norm(Q, grid, p, q, inner, w_in))
        weights = _area_element(flow, P) if u_measure == "area" else None
        rhs = (R**-2 * lpq_norm(flow.values, grid, p, q, outer, w_out),
               lpq_norm(u, grid, p, q, outer, w_out, weights=weights))
    elif kind == "holder":
        inf = math.inf
        i0, i1 = window_indices(grid, w_in)
        coords_in = grid.coords()[inner]
        times_in = grid.times[i0 : i1 + 1]
        lhs = (lpq_norm(D, grid, inf, inf, inner, w_in) + lpq_norm(Q, grid, inf, inf, inner, w_in)
               + R**alpha * (holder_seminorm(D[i0 : i1 + 1][:, inner], coords_in, times_in, alpha, n_cap)
                             + holder_seminorm(Q[i0 : i1 + 1][:, inner], coords_in, times_in, alpha, n_cap)))
        j0, j1 = window_indices(grid, w_out)
        rhs = (R**-2 * lpq_norm(flow.values, grid, inf, inf, outer, w_out),
               lpq_norm(u, grid, inf, inf, outer, w_out),
               R**alpha * holder_seminorm(u[j0 : j1 + 1][:, outer], grid.coords()[outer],
                                          grid.times[j0 : j1 + 1], alpha, n_cap))
        p = q = inf
    else:
        raise ValueError(f"unknown estimate kind {kind!r}")
    total = float(sum(rhs))
    degenerate = total <= 0.0
    return EstimateReport(
        kind=kind, p=p, q=q, R=R, lhs=float(lhs), rhs_parts=tuple(float(r) for r in rhs),
        ratio=None if degenerate else float(lhs) / total, degenerate=degenerate,
        refinement_level=refinement_level, alpha=alpha if kind == "holder" else None,
    )
