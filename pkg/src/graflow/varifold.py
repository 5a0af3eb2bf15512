"""Time slices of a graph flow as unit-density discrete varifolds.

A slice is a node quadrature: ambient position ``x + f(x, t)``, tangent
projection ``S`` from the central-difference gradient, and area weight
``sqrt(g) * w_trap`` where ``w_trap`` is the product trapezoid cell weight.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import GraphFlow, SpaceTimeGrid, gradient_of, hessian_of
from .geometry import induced_metric, mean_curvature_of_graph, tangent_projection


class SupportError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteVarifold:
    grid: SpaceTimeGrid
    t: float
    base: np.ndarray       # (N, k) base-plane node coordinates
    positions: np.ndarray  # (N, n)
    P: np.ndarray          # (N, codim, k)
    S: np.ndarray          # (N, n, n)
    sqrt_g: np.ndarray     # (N,)
    weights: np.ndarray    # (N,) area weights
    h: np.ndarray          # (N, n) mean curvature vector

    @property
    def n(self):
        return self.positions.shape[-1]

    @classmethod
    def from_slice(cls, grid: SpaceTimeGrid, f, t):
        return _batch(grid, np.asarray(f, dtype=float)[None], [t])[0]

    @classmethod
    def from_flow(cls, flow: GraphFlow, time_index):
        return cls.from_slice(flow.grid, flow.values[time_index], flow.grid.times[time_index])

    def mask_weights(self, mask):
        if mask is None:
            return self.weights
        return np.where(np.asarray(mask, dtype=bool).reshape(-1), self.weights, 0.0)


def _batch(grid: SpaceTimeGrid, fs, times):
    """Varifolds for a stack of slices ``fs`` of shape (m, *shape, codim)."""
    m = fs.shape[0]
    N = grid.n_nodes
    n = grid.k + grid.codim
    P = gradient_of(fs, grid.h, grid.k, lead=1)
    Q = hessian_of(fs, grid.h, grid.k, lead=1)
    metric = induced_metric(P)
    S = tangent_projection(P, metric).reshape(m, N, n, n)
    hvec = mean_curvature_of_graph(P, Q, metric).reshape(m, N, n)
    base = grid.coords()
    positions = np.concatenate(
        [np.broadcast_to(base, fs.shape[:-1] + (grid.k,)), fs], axis=-1
    ).reshape(m, N, n)
    sqrt_g = metric.sqrt_g.reshape(m, N)
    weights = sqrt_g * grid.trapezoid_weights().reshape(N)
    P = P.reshape(m, N, grid.codim, grid.k)
    base = base.reshape(N, grid.k)
    return [
        DiscreteVarifold(grid=grid, t=float(times[j]), base=base, positions=positions[j],
                         P=P[j], S=S[j], sqrt_g=sqrt_g[j], weights=weights[j], h=hvec[j])
        for j in range(m)
    ]


class SpaceTimeMeasure:
    """Ordered slices with uniform spacing; realizes d mu = d||V_t|| dt."""

    def __init__(self, slices, dt):
        times = np.array([s.t for s in slices])
        if len(slices) >= 2:
            steps = np.diff(times)
            if np.any(steps <= 0):
                raise ValueError("slice times must be strictly increasing")
            if np.abs(steps - dt).max() > 1e-9 * max(1.0, abs(dt)):
                raise ValueError("slices are not uniformly spaced by dt")
        self.slices = list(slices)
        self.dt = float(dt)
        self.times = times

    @classmethod
    def from_flow(cls, flow: GraphFlow, indices=None, chunk=512):
        idx = np.arange(flow.grid.n_times) if indices is None else np.asarray(list(indices))
        slices = []
        for start in range(0, len(idx), chunk):
            part = idx[start : start + chunk]
            slices.extend(_batch(flow.grid, flow.values[part], flow.grid.times[part]))
        dt = flow.grid.dt * (int(idx[1] - idx[0]) if len(idx) > 1 else 1)
        return cls(slices, dt)

    def index_of(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-6 * max(self.dt, 1e-300):
            raise ValueError(f"t={t!r} is not a slice time")
        return i


def weight_integral(V: DiscreteVarifold, phi, mask=None):
    """Integral of phi against the weight measure; phi maps (N, n) points to (N,)."""
    vals = np.asarray(phi(V.positions), dtype=float) if callable(phi) else np.asarray(phi)
    return float(np.sum(vals * V.mask_weights(mask)))


def _check_support(V: DiscreteVarifold, field_):
    support = getattr(field_, "base_support", None)
    if support is None:
        raise SupportError("test field does not declare its support")
    center, radius = support
    grid = V.grid
    for ax, (lo, hi) in enumerate(grid.box):
        # keep clear of the face nodes, whose one-sided stencils are excluded
        if center[ax] - radius < lo + grid.h or center[ax] + radius > hi - grid.h:
            raise SupportError(
                f"test field support [{center[ax] - radius:.6g}, {center[ax] + radius:.6g}] "
                f"on axis {ax} is not inside the interior region "
                f"[{lo + grid.h:.6g}, {hi - grid.h:.6g}]"
            )


def first_variation(V: DiscreteVarifold, g_field):
    """delta V(g) = sum_nodes (grad g : S) w, with grad g supplied analytically.

    ``g_field.jacobian(points)`` returns (N, n, n) with J[alpha, beta] =
    d g^alpha / d x^beta.
    """
    _check_support(V, g_field)
    J = g_field.jacobian(V.positions)
    return float(np.sum(np.einsum("nab,nab->n", J, V.S) * V.weights))


def curvature_pairing(V: DiscreteVarifold, g_field):
    """sum_nodes g . h w."""
    gv = g_field.value(V.positions)
    return float(np.sum(np.einsum("na,na->n", gv, V.h) * V.weights))


def mean_curvature_duality_residual(V: DiscreteVarifold, g_field):
    """|delta V(g) + int g . h d||V||| / max(1, |delta V(g)|)."""
    dv = first_variation(V, g_field)
    return abs(dv + curvature_pairing(V, g_field)) / max(1.0, abs(dv))


def h_l2_norm(M: SpaceTimeMeasure, mask=None, i0=0, i1=None):
    """(int int |h|^2 d||V_t|| dt)^(1/2), trapezoid in time over slices i0..i1."""
    i1 = len(M.slices) - 1 if i1 is None else i1
    per_slice = np.array([
        np.sum(np.einsum("na,na->n", V.h, V.h) * V.mask_weights(mask))
        for V in M.slices[i0 : i1 + 1]
    ])
    w = np.full(len(per_slice), M.dt)
    w[0] = w[-1] = 0.5 * M.dt
    if len(per_slice) == 1:
        w[:] = 0.0
    return float(np.sqrt(np.sum(per_slice * w)))
