"""Uniform space-time grids, finite-difference stencils and quadrature."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

MIN_NODES = 5


class GridError(ValueError):
    pass


class FlowDataError(ValueError):
    pass


def _n_intervals(length, step, what):
    ratio = length / step
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise GridError(f"{what} length {length!r} is not an integer multiple of {step!r}")
    return n


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Box grid in the base plane with uniform spacing ``h`` and time step ``dt``."""

    k: int
    codim: int
    box: tuple            # ((lo, hi), ...) per spatial axis
    h: float
    dt: float
    t_range: tuple        # (t_start, t_end)
    shape: tuple = field(init=False)
    n_steps: int = field(init=False)

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "t_range", (float(self.t_range[0]), float(self.t_range[1])))
        if len(box) != self.k:
            raise GridError(f"box has {len(box)} axes, expected k={self.k}")
        if self.k < 1 or self.codim < 1:
            raise GridError("k and codim must be positive")
        if self.h <= 0 or self.dt <= 0:
            raise GridError("h and dt must be positive")
        shape = []
        for lo, hi in box:
            if hi <= lo:
                raise GridError(f"empty axis [{lo}, {hi}]")
            shape.append(_n_intervals(hi - lo, self.h, "box") + 1)
        if min(shape) < MIN_NODES:
            raise GridError(f"need at least {MIN_NODES} nodes per axis, got {shape}")
        t0, t1 = self.t_range
        if t1 <= t0:
            raise GridError("t_range must be increasing")
        object.__setattr__(self, "shape", tuple(shape))
        object.__setattr__(self, "n_steps", _n_intervals(t1 - t0, self.dt, "time window"))

    @classmethod
    def fitted(cls, k, codim, box, h, t_range, dt=None, sigma=0.9):
        """Grid whose spacing is the largest value <= h dividing every axis,
        and whose step is the largest value <= dt (or the CFL step) dividing
        the time window."""
        box = tuple(tuple(b) for b in box)
        lengths = [hi - lo for lo, hi in box]
        n0 = math.ceil(lengths[0] / h - 1e-9)
        h_fit = lengths[0] / n0
        for L in lengths[1:]:
            _n_intervals(L, h_fit, "box")
        if dt is None:
            dt = sigma * h_fit**2 / (2 * k)
        T = t_range[1] - t_range[0]
        n_t = math.ceil(T / dt - 1e-9)
        return cls(k=k, codim=codim, box=box, h=h_fit, dt=T / n_t, t_range=tuple(t_range))

    @property
    def n_times(self):
        return self.n_steps + 1

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    @property
    def axes(self):
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.box, self.shape)]

    @property
    def times(self):
        t0 = self.t_range[0]
        return t0 + self.dt * np.arange(self.n_times)

    def coords(self):
        """Node coordinates, shape (*shape, k)."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.k):
            idx = [slice(None)] * self.k
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def interior_mask(self):
        return ~self.boundary_mask()

    def trapezoid_weights(self):
        """Product trapezoid cell weights, shape ``self.shape``."""
        w = np.ones(self.shape)
        for ax, n in enumerate(self.shape):
            w1 = np.full(n, self.h)
            w1[0] = w1[-1] = 0.5 * self.h
            bshape = [1] * self.k
            bshape[ax] = n
            w = w * w1.reshape(bshape)
        return w

    def time_weights(self, i0=0, i1=None):
        """Trapezoid weights in time over indices i0..i1 inclusive."""
        i1 = self.n_steps if i1 is None else i1
        w = np.full(i1 - i0 + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        if i1 == i0:
            w[:] = 0.0
        return w

    def time_index(self, t):
        i = (t - self.t_range[0]) / self.dt
        j = int(round(i))
        if abs(i - j) > 1e-6 or not 0 <= j <= self.n_steps:
            raise GridError(f"t={t!r} is not a grid time")
        return j

    def refined(self, factor=2):
        """Grid with h / factor and dt / factor^2 over the same box and window."""
        return SpaceTimeGrid(
            k=self.k, codim=self.codim, box=self.box, h=self.h / factor,
            dt=self.dt / factor**2, t_range=self.t_range,
        )

    def describe(self):
        return {
            "k": self.k, "codim": self.codim, "box": [list(b) for b in self.box],
            "h": self.h, "dt": self.dt, "t_range": list(self.t_range),
            "shape": list(self.shape), "n_steps": self.n_steps,
        }


@dataclass(frozen=True)
class GraphFlow:
    """Graph values on a space-time grid.

    ``values`` has shape ``(n_times, *grid.shape, codim)``: time-major, then
    row-major spatial order, component last. The array is made read-only.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    boundary: str = "dirichlet-frozen"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        expected = (self.grid.n_times,) + self.grid.shape + (self.grid.codim,)
        if v.shape != expected:
            raise FlowDataError(f"flow values have shape {v.shape}, expected {expected}")
        bad = ~np.isfinite(v)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            coords = [float(ax[j]) for ax, j in zip(self.grid.axes, idx[1:-1])]
            raise FlowDataError(
                f"non-finite value at time index {idx[0]} (t={float(self.grid.times[idx[0]])!r}), "
                f"node {coords}, component {idx[-1]}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def slice(self, m):
        return self.values[m]


# -- stencils ---------------------------------------------------------------

def _check_axis(n):
    if n < MIN_NODES:
        raise GridError(f"axis with {n} nodes is too small for the stencils")


def gradient_of(f, h, k, lead=0):
    """Gradient of a slice ``f`` of shape (*lead_dims, *shape, codim).

    Central differences inside, 3-point one-sided second-order differences on
    the faces. Returns P with shape (*lead_dims, *shape, codim, k).
    """
    for n in f.shape[lead : lead + k]:
        _check_axis(n)
    parts = [np.gradient(f, h, axis=lead + ax, edge_order=2) for ax in range(k)]
    return np.stack(parts, axis=-1)


def _second_difference(f, h, axis):
    d = np.empty_like(f)
    f = np.moveaxis(f, axis, 0)
    out = np.moveaxis(d, axis, 0)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h**2
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h**2
    out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h**2
    return d


def hessian_of(f, h, k, lead=0):
    """Hessian of a slice, shape (*lead_dims, *shape, codim, k, k), symmetric.

    Diagonal entries use the 3-point second difference (4-point one-sided on
    faces); mixed entries compose two first differences, which is the
    four-point cross stencil inside the box.
    """
    for n in f.shape[lead : lead + k]:
        _check_axis(n)
    Q = np.empty(f.shape + (k, k))
    for i in range(k):
        Q[..., i, i] = _second_difference(f, h, lead + i)
        if i + 1 < k:
            di = np.gradient(f, h, axis=lead + i, edge_order=2)
            for j in range(i + 1, k):
                Q[..., i, j] = Q[..., j, i] = np.gradient(di, h, axis=lead + j, edge_order=2)
    return Q


def gradient(flow: GraphFlow, time_index):
    return gradient_of(flow.values[time_index], flow.grid.h, flow.grid.k)


def hessian(flow: GraphFlow, time_index):
    return hessian_of(flow.values[time_index], flow.grid.h, flow.grid.k)


def time_derivative(flow: GraphFlow, time_index):
    """d_t f at one time level: central inside, one-sided second order at the ends."""
    v = flow.values
    n = v.shape[0]
    if n < 3:
        raise GridError("time derivative needs at least 3 time levels")
    m = time_index % n
    dt = flow.grid.dt
    if m == 0:
        return (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt)
    if m == n - 1:
        return (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * dt)
    return (v[m + 1] - v[m - 1]) / (2.0 * dt)


# -- quadrature -------------------------------------------------------------

def cell_quadrature(grid: SpaceTimeGrid, field_values, weights=None, mask=None):
    """Composite trapezoid of ``field * weights`` over the masked box.

    Returns 0.0 and emits a warning when the mask selects no node.
    """
    integrand = np.asarray(field_values, dtype=float)
    if integrand.shape != grid.shape:
        raise GridError(f"field shape {integrand.shape} does not match grid {grid.shape}")
    if weights is not None:
        integrand = integrand * np.asarray(weights, dtype=float)
    w = grid.trapezoid_weights()
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            warnings.warn("quadrature over an empty mask", RuntimeWarning, stacklevel=2)
            return 0.0
        w = np.where(mask, w, 0.0)
    return float(np.sum(integrand * w))


def ball_mask(grid: SpaceTimeGrid, radius, center=None):
    """Nodes whose centers lie in the open ball |x - center| < radius.

    Nodes within relative 1e-10 of the sphere count as outside, so the mask
    does not depend on the last bit of a node coordinate.
    """
    x = grid.coords()
    c = np.zeros(grid.k) if center is None else np.asarray(center, dtype=float)
    return np.sum((x - c) ** 2, axis=-1) < radius**2 * (1.0 - 1e-10)


# -- CSV dumps --------------------------------------------------------------

def field_table(grid: SpaceTimeGrid, values, times=None):
    """Rows (axis0..axis{k-1}, t, component, value) in dump order."""
    values = np.asarray(values, dtype=float)
    times = grid.times if times is None else np.asarray(times, dtype=float)
    ncomp = values.shape[-1]
    n_t, n_x = len(times), grid.n_nodes
    coords = grid.coords().reshape(-1, grid.k)
    table = np.empty((n_t * n_x * ncomp, grid.k + 3))
    table[:, : grid.k] = np.tile(np.repeat(coords, ncomp, axis=0), (n_t, 1))
    table[:, grid.k] = np.repeat(times, n_x * ncomp)
    table[:, grid.k + 1] = np.tile(np.arange(ncomp), n_t * n_x)
    table[:, grid.k + 2] = values.reshape(-1)
    return table


def dump_field_csv(grid: SpaceTimeGrid, values, path_or_fh, times=None):
    """Write per-node values as CSV with 17 significant digits.

    ``values`` is (n_t, *shape, ncomp); rows are time-major, row-major in
    space, component-minor.
    """
    table = field_table(grid, values, times)
    header = ",".join([f"axis{i}" for i in range(grid.k)] + ["t", "component", "value"])
    fmt = ["%.17g"] * (grid.k + 1) + ["%d", "%.17g"]
    np.savetxt(path_or_fh, table, fmt=fmt, delimiter=",", header=header, comments="")


def dump_flow_csv(flow: GraphFlow, path):
    dump_field_csv(flow.grid, flow.values, path)


def load_flow_csv(path, grid: SpaceTimeGrid, boundary="dirichlet-frozen", tol=1e-9):
    """Read a flow dump and check it against ``grid``.

    Raises FlowDataError on shape mismatch, coordinate mismatch or
    non-finite values (with node coordinates in the message).
    """
    k, codim = grid.k, grid.codim
    expected = [f"axis{i}" for i in range(k)] + ["t", "component", "value"]
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != expected:
            raise FlowDataError(f"bad header {header!r}, expected {expected!r}")
        try:
            table = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise FlowDataError(f"unparsable flow dump: {exc}") from None
    n_expected = grid.n_times * grid.n_nodes * codim
    if table.shape != (n_expected, k + 3):
        raise FlowDataError(
            f"flow dump has {table.shape[0]} rows x {table.shape[1]} columns, grid expects "
            f"{n_expected} rows ({grid.n_times} times x {grid.n_nodes} nodes x {codim} "
            f"components) x {k + 3} columns"
        )
    vals = table[:, -1]
    bad = ~np.isfinite(vals)
    if bad.any():
        r = int(np.argmax(bad))
        raise FlowDataError(
            f"non-finite value at row {r + 2}: node {table[r, :k].tolist()}, "
            f"t={float(table[r, k])!r}, component {int(table[r, k + 1])}"
        )
    coords = np.repeat(np.tile(grid.coords().reshape(-1, k), (grid.n_times, 1)), codim, axis=0)
    times = np.repeat(grid.times, grid.n_nodes * codim)
    comps = np.tile(np.arange(codim), grid.n_times * grid.n_nodes)
    scale = max(1.0, float(np.max(np.abs(coords))))
    if (np.abs(table[:, :k] - coords).max() > tol * scale
            or np.abs(table[:, k] - times).max() > tol * max(1.0, np.abs(times).max())
            or np.any(table[:, k + 1] != comps)):
        raise FlowDataError("flow dump coordinates do not match the configured grid")
    values = vals.reshape((grid.n_times,) + grid.shape + (codim,))
    return GraphFlow(grid=grid, values=values, boundary=boundary)
