"""Benchmark scenarios: initial data, forcing and (where known) exact solutions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import parse_vector
from .flow_solver import ForcingSpec

SCENARIOS = ("flat", "affine", "forced-translation", "grim-reaper", "paraboloid-cap",
             "custom-expression")


@dataclass
class Scenario:
    name: str
    k: int
    n: int
    box: tuple
    t_range: tuple
    initial: object                 # callable (coords, t) -> (*shape, codim)
    forcing: ForcingSpec
    exact: object = None            # callable or None
    params: dict = field(default_factory=dict)

    @property
    def codim(self):
        return self.n - self.k


def _cube(k, half):
    return tuple((-half, half) for _ in range(k))


def _zeros(codim):
    return lambda x, t: np.zeros(x.shape[:-1] + (codim,))


def flat(k=1, n=2, box=None, t_range=(0.0, 0.1)):
    z = _zeros(n - k)
    return Scenario("flat", k, n, box or _cube(k, 1.0), t_range, z, ForcingSpec.zero(n), z)


def affine(k=1, n=2, box=None, t_range=(0.0, 0.1), intercept=None, slope=None):
    codim = n - k
    a = np.full(codim, 0.3) if intercept is None else np.asarray(intercept, dtype=float)
    b = (np.full((codim, k), 0.5) if slope is None
         else np.asarray(slope, dtype=float).reshape(codim, k))

    def f(x, t):
        return a + np.einsum("...i,ai->...a", x, b)

    return Scenario("affine", k, n, box or _cube(k, 1.0), t_range, f, ForcingSpec.zero(n), f,
                    {"intercept": a.tolist(), "slope": b.tolist()})


def forced_translation(k=1, n=2, box=None, t_range=(0.0, 0.25), speed=0.7):
    """Flat data pushed by the constant normal field u = speed * e_n."""
    codim = n - k
    u = np.zeros(n)
    u[-1] = speed
    t0 = t_range[0]

    def exact(x, t):
        out = np.zeros(x.shape[:-1] + (codim,))
        out[..., -1] = speed * (t - t0)
        return out

    return Scenario("forced-translation", k, n, box or _cube(k, 1.0), t_range, exact,
                    ForcingSpec.constant(u), exact, {"speed": speed})


def grim_reaper(box=((-1.2, 1.2),), t_range=(-0.25, 0.0)):
    """Translating curve f(x, t) = t - log cos x."""

    def exact(x, t):
        return (t - np.log(np.cos(x[..., 0])))[..., None]

    return Scenario("grim-reaper", 1, 2, tuple(box), t_range, exact, ForcingSpec.zero(2), exact)


def paraboloid_cap(box=None, t_range=(0.0, 0.01)):
    """f = (x1^2 + x2^2)/2 over a square; no closed-form evolution."""

    def f0(x, t):
        return (0.5 * np.sum(x * x, axis=-1))[..., None]

    return Scenario("paraboloid-cap", 2, 3, box or _cube(2, 1.0), t_range, f0,
                    ForcingSpec.zero(3), None)


def custom_expression(k, n, box, t_range, initial, forcing=None, exact=None):
    """Initial data, forcing and optional exact solution from expressions.

    Initial and exact expressions may use x1..xk and t.
    """
    codim = n - k
    init = parse_vector(initial, k, n, length=codim)
    ex = parse_vector(exact, k, n, length=codim) if exact is not None else None

    def lift(x):
        return np.concatenate([x, np.zeros(x.shape[:-1] + (codim,))], axis=-1)

    def f0(x, t):
        return np.stack([e(lift(x), t) for e in init], axis=-1)

    def fex(x, t):
        return np.stack([e(lift(x), t) for e in ex], axis=-1)

    u = ForcingSpec.from_expressions(forcing, k, n) if forcing is not None else ForcingSpec.zero(n)
    return Scenario("custom-expression", k, n, tuple(box), t_range, f0, u,
                    fex if ex is not None else None,
                    {"initial": list(initial), "exact": list(exact) if exact else None})


def build(name, **kw):
    makers = {
        "flat": flat, "affine": affine, "forced-translation": forced_translation,
        "grim-reaper": grim_reaper, "paraboloid-cap": paraboloid_cap,
        "custom-expression": custom_expression,
    }
    if name not in makers:
        raise ValueError(f"unknown scenario {name!r}; expected one of {', '.join(SCENARIOS)}")
    return makers[name](**kw)
