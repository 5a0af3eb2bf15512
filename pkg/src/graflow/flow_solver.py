"""Time stepping for forced graphical mean curvature flow.

Each component of the graph solves

    d_t f^a = g^{ij}(grad f) d_ij f^a + U^a,
    U^a     = (u_perp)^a - (u_perp)^j d_j f^a,

with u_perp the part of the ambient forcing normal to the graph, evaluated at
the graph point (x, f(x, t)).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import bicgstab

from .discretization import GraphFlow, SpaceTimeGrid, gradient_of, hessian_of
from .expr import parse_vector
from .geometry import induced_metric, project_normal, tangent_projection

log = logging.getLogger(__name__)

SCHEMES = ("explicit", "semi-implicit")
BOUNDARY_MODES = ("dirichlet-exact", "dirichlet-frozen")


class SolverError(RuntimeError):
    pass


class CFLViolation(SolverError):
    pass


class LinearSolveError(SolverError):
    pass


class GradientBlowUp(SolverError):
    def __init__(self, max_grad, g_max, time):
        self.max_grad = max_grad
        self.g_max = g_max
        self.time = time
        super().__init__(f"|grad f| = {max_grad:.6g} exceeds guard {g_max:.6g} at t = {time:.6g}")


class ForcingError(ValueError):
    pass


class ForcingSpec:
    """Ambient vector field u(x, t) with values in R^n.

    Built from component expressions, a Python callable, or samples on an
    ambient box grid (multilinear interpolation, queries outside the box
    are rejected).
    """

    def __init__(self, n, func, kind, description=None):
        self.n = n
        self._func = func
        self.kind = kind
        self.description = description

    @classmethod
    def zero(cls, n):
        return cls(n, lambda pts, t: np.zeros(np.shape(pts)[:-1] + (n,)), "zero", ["0"] * n)

    @classmethod
    def constant(cls, vec):
        vec = np.asarray(vec, dtype=float)
        n = vec.size
        return cls(
            n, lambda pts, t: np.broadcast_to(vec, np.shape(pts)[:-1] + (n,)).copy(),
            "constant", [repr(float(c)) for c in vec],
        )

    @classmethod
    def from_expressions(cls, sources, k, n):
        comps = parse_vector(sources, k, n, length=n)

        def func(pts, t):
            return np.stack([c(pts, t) for c in comps], axis=-1)

        return cls(n, func, "analytic", list(sources))

    @classmethod
    def from_callable(cls, n, func):
        return cls(n, func, "callable")

    @classmethod
    def gridded(cls, axes, values, time_axis=None):
        """Samples ``values`` of shape (*[len(a) for a in axes], [n_t,] n).

        With ``time_axis`` the last grid dimension is time.
        """
        axes = [np.asarray(a, dtype=float) for a in axes]
        values = np.asarray(values, dtype=float)
        n = values.shape[-1]
        n_space = len(axes)
        grid_axes = axes + ([np.asarray(time_axis, dtype=float)] if time_axis is not None else [])
        interp = RegularGridInterpolator(grid_axes, values, method="linear", bounds_error=True)
        lo = np.array([a[0] for a in axes])
        hi = np.array([a[-1] for a in axes])

        def func(pts, t):
            pts = np.asarray(pts, dtype=float)
            if pts.shape[-1] != n_space:
                raise ForcingError(f"gridded forcing expects {n_space}-D points")
            flat = pts.reshape(-1, n_space)
            outside = np.any((flat < lo) | (flat > hi), axis=1)
            if outside.any():
                raise ForcingError(
                    f"forcing query {flat[np.argmax(outside)].tolist()} outside gridded box"
                )
            if time_axis is not None:
                flat = np.concatenate([flat, np.full((flat.shape[0], 1), t)], axis=1)
            try:
                out = interp(flat)
            except ValueError as exc:
                raise ForcingError(str(exc)) from None
            return out.reshape(pts.shape[:-1] + (n,))

        return cls(n, func, "gridded")

    def __call__(self, points, t):
        out = np.asarray(self._func(points, t), dtype=float)
        if out.shape != np.shape(points)[:-1] + (self.n,):
            raise ForcingError(f"forcing returned shape {out.shape}")
        return out

    def along_graph(self, coords, f, t):
        """u(x + f(x, t), t) at every node; coords (..., k), f (..., codim)."""
        return self(np.concatenate([coords, f], axis=-1), t)


def forcing_term(P, S, u):
    """Graph forcing U^a = (u_perp)^a - sum_j (u_perp)^j P[a, j]."""
    P = np.asarray(P, dtype=float)
    k = P.shape[-1]
    u_perp = project_normal(u, S)
    return u_perp[..., k:] - np.einsum("...j,...aj->...a", u_perp[..., :k], P)


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "explicit"
    sigma: float = 0.9
    g_max: float = 10.0
    boundary: str = "dirichlet-frozen"
    rtol: float = 1e-10
    max_iter: int = 2000

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        if not 0.0 < self.sigma <= 1.0:
            raise ValueError("CFL safety factor must lie in (0, 1]")
        if self.g_max <= 0:
            raise ValueError("gradient guard must be positive")


@dataclass
class FlowRunReport:
    max_grad: list = field(default_factory=list)
    cfl_ratio: float = 0.0
    steps: int = 0
    wall_time: float = 0.0
    termination: str = "completed"
    scheme: str = "explicit"
    boundary: str = "dirichlet-frozen"
    linear_iterations: list = field(default_factory=list)

    def to_dict(self):
        return {
            "steps": self.steps,
            "cfl_ratio": self.cfl_ratio,
            "max_grad_final": self.max_grad[-1] if self.max_grad else None,
            "max_grad_peak": max(self.max_grad) if self.max_grad else None,
            "wall_time": self.wall_time,
            "termination": self.termination,
            "scheme": self.scheme,
            "boundary": self.boundary,
        }


def _slice_geometry(grid, coords, f, t, forcing):
    P = gradient_of(f, grid.h, grid.k)
    Q = hessian_of(f, grid.h, grid.k)
    metric = induced_metric(P)
    if forcing is None or forcing.kind == "zero":
        U = np.zeros(f.shape)
    else:
        S = tangent_projection(P, metric)
        U = forcing_term(P, S, forcing.along_graph(coords, f, t))
    return P, Q, metric, U


def _max_grad(P):
    return float(np.sqrt(np.einsum("...ai,...ai->...", P, P)).max())


def cfl_limit(grid: SpaceTimeGrid, sigma=1.0):
    # eig_max(g^ij) <= 1 makes this bound uniform in the solution
    return sigma * grid.h**2 / (2 * grid.k)


class _Laplacian:
    """Sparse g^{ij} D_ij on interior rows; boundary rows are zero."""

    def __init__(self, grid: SpaceTimeGrid):
        self.grid = grid
        self.index = np.arange(grid.n_nodes).reshape(grid.shape)
        self.interior = grid.interior_mask()

    def assemble(self, g_inv):
        grid = self.grid
        h2 = grid.h**2
        inner = tuple(slice(1, -1) for _ in range(grid.k))
        rows_c = self.index[inner].ravel()
        rows, cols, vals = [], [], []

        def add(offset, coef):
            sl = tuple(slice(1 + o, n - 1 + o) for o, n in zip(offset, grid.shape))
            rows.append(rows_c)
            cols.append(self.index[sl].ravel())
            vals.append(coef.ravel())

        gi = g_inv[inner]
        zero = (0,) * grid.k
        diag = np.zeros(gi.shape[:-2])
        for i in range(grid.k):
            e = [0] * grid.k
            e[i] = 1
            add(tuple(e), gi[..., i, i] / h2)
            e[i] = -1
            add(tuple(e), gi[..., i, i] / h2)
            diag = diag - 2.0 * gi[..., i, i] / h2
            for j in range(i + 1, grid.k):
                c = 2.0 * gi[..., i, j] / (4.0 * h2)
                for si, sj, sgn in ((1, 1, 1), (-1, -1, 1), (1, -1, -1), (-1, 1, -1)):
                    e = [0] * grid.k
                    e[i], e[j] = si, sj
                    add(tuple(e), sgn * c)
        add(zero, diag)
        n = grid.n_nodes
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )


class FlowSolver:
    """Steps one slice at a time; boundary nodes come from ``boundary_values``."""

    def __init__(self, grid: SpaceTimeGrid, config: SolverConfig, forcing: ForcingSpec | None,
                 boundary_values=None):
        self.grid = grid
        self.config = config
        self.forcing = forcing
        self.coords = grid.coords()
        self.boundary = grid.boundary_mask()
        self.boundary_values = boundary_values
        if config.boundary == "dirichlet-exact" and boundary_values is None:
            raise SolverError("dirichlet-exact boundary needs boundary data")
        if config.scheme == "explicit":
            limit = cfl_limit(grid, config.sigma)
            if grid.dt > limit * (1 + 1e-12):
                raise CFLViolation(
                    f"dt = {grid.dt:.6g} exceeds the explicit limit sigma*h^2/(2k) = {limit:.6g}"
                )
        else:
            self._lap = _Laplacian(grid)
        self.last_iterations = 0

    def _apply_boundary(self, f_new, f_old, t_new):
        if self.config.boundary == "dirichlet-exact":
            bv = np.asarray(self.boundary_values(self.coords, t_new), dtype=float)
            f_new[self.boundary] = bv[self.boundary]
        else:
            f_new[self.boundary] = f_old[self.boundary]
        return f_new

    def step(self, f, t):
        """Advance slice ``f`` (shape (*shape, codim)) from t to t + dt."""
        grid = self.grid
        P, Q, metric, U = _slice_geometry(grid, self.coords, f, t, self.forcing)
        max_grad = _max_grad(P)
        if max_grad > self.config.g_max:
            raise GradientBlowUp(max_grad, self.config.g_max, t)
        t_new = t + grid.dt
        if self.config.scheme == "explicit":
            rate = np.einsum("...ij,...aij->...a", metric.g_inv, Q) + U
            f_new = f + grid.dt * rate
        else:
            f_new = self._implicit(f, metric.g_inv, U, t_new)
        return self._apply_boundary(f_new, f, t_new), max_grad

    def _implicit(self, f, g_inv, U, t_new):
        grid = self.grid
        L = self._lap.assemble(g_inv)
        A = (sp.identity(grid.n_nodes, format="csr") - grid.dt * L).tocsr()
        bmask = self.boundary.ravel()
        if self.config.boundary == "dirichlet-exact":
            bvals = np.asarray(self.boundary_values(self.coords, t_new), dtype=float)
        else:
            bvals = f
        f_new = np.empty_like(f)
        iters = 0
        for a in range(grid.codim):
            rhs = (f[..., a] + grid.dt * U[..., a]).ravel()
            rhs[bmask] = bvals[..., a].ravel()[bmask]
            count = [0]

            def cb(_xk):
                count[0] += 1

            x, info = bicgstab(A, rhs, x0=f[..., a].ravel(), rtol=self.config.rtol, atol=0.0,
                               maxiter=self.config.max_iter, callback=cb)
            res = np.linalg.norm(A @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
            if info != 0 or res > 10 * self.config.rtol:
                raise LinearSolveError(
                    f"linear solve did not converge (info={info}, relative residual {res:.3g})"
                )
            iters += count[0]
            f_new[..., a] = x.reshape(grid.shape)
        self.last_iterations = iters
        return f_new


def run(initial, grid: SpaceTimeGrid, config: SolverConfig | None = None,
        forcing: ForcingSpec | None = None, boundary_values=None, stride=1):
    """Integrate from ``initial`` over ``grid.t_range``.

    ``initial`` is either an array (*shape, codim) or a callable
    (coords, t) -> array. Returns ``(GraphFlow, FlowRunReport)``; the flow
    keeps every ``stride``-th step. On a gradient-guard abort the report is
    tagged and the flow holds the steps computed so far (the aborted grid's
    time window is truncated accordingly).
    """
    config = config or SolverConfig()
    if grid.n_steps % stride:
        raise ValueError(f"stride {stride} does not divide {grid.n_steps} steps")
    solver = FlowSolver(grid, config, forcing, boundary_values)
    t0 = grid.t_range[0]
    coords = grid.coords()
    f = initial(coords, t0) if callable(initial) else initial
    f = np.array(f, dtype=float).reshape(grid.shape + (grid.codim,))
    if not np.all(np.isfinite(f)):
        raise SolverError("initial data is not finite")
    if config.boundary == "dirichlet-exact":
        f = solver._apply_boundary(f, f, t0)
    report = FlowRunReport(
        cfl_ratio=grid.dt / cfl_limit(grid), scheme=config.scheme, boundary=config.boundary
    )
    stored = [f.copy()]
    start = time.perf_counter()
    try:
        for m in range(grid.n_steps):
            f, mg = solver.step(f, t0 + m * grid.dt)
            report.max_grad.append(mg)
            report.steps = m + 1
            if config.scheme == "semi-implicit":
                report.linear_iterations.append(solver.last_iterations)
            if (m + 1) % stride == 0:
                stored.append(f.copy())
    except GradientBlowUp as exc:
        report.termination = "gradient-guard"
        report.wall_time = time.perf_counter() - start
        log.warning("run aborted: %s", exc)
        raise RunAborted(exc, report, _partial(grid, stored, stride, config.boundary)) from exc
    report.max_grad.append(_max_grad(gradient_of(f, grid.h, grid.k)))
    report.wall_time = time.perf_counter() - start
    out_grid = grid if stride == 1 else SpaceTimeGrid(
        k=grid.k, codim=grid.codim, box=grid.box, h=grid.h, dt=grid.dt * stride,
        t_range=grid.t_range,
    )
    return GraphFlow(out_grid, np.stack(stored), boundary=config.boundary), report


def _partial(grid, stored, stride, boundary):
    if len(stored) < 2:
        return None
    dt = grid.dt * stride
    t_end = grid.t_range[0] + dt * (len(stored) - 1)
    pgrid = SpaceTimeGrid(k=grid.k, codim=grid.codim, box=grid.box, h=grid.h, dt=dt,
                          t_range=(grid.t_range[0], t_end))
    return GraphFlow(pgrid, np.stack(stored), boundary=boundary)


class RunAborted(SolverError):
    """Controlled abort: carries the report and the partial flow."""

    def __init__(self, cause, report, partial_flow):
        self.cause = cause
        self.report = report
        self.partial_flow = partial_flow
        super().__init__(str(cause))
