"""Scenario configuration: JSON with a fixed, validated schema."""
from __future__ import annotations

import hashlib
import json
import math
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import scenarios
from .expr import ExpressionError, parse_vector
from .flow_solver import SolverConfig


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SolverSection(_Strict):
    scheme: Literal["explicit", "semi-implicit"] = "explicit"
    boundary: Optional[Literal["dirichlet-exact", "dirichlet-frozen"]] = None
    g_max: float = Field(10.0, gt=0)
    rtol: float = Field(1e-10, gt=0)
    max_iter: int = Field(2000, ge=1)
    stride: int = Field(1, ge=1)


class ChecksSection(_Strict):
    solution_error: bool = True
    brakke: bool = True
    identity: bool = True
    motion_law: bool = True
    duality: bool = True


class BrakkeSection(_Strict):
    n_test_functions: int = Field(24, ge=1)
    n_windows: int = Field(6, ge=1, le=8)
    seed: int = 0
    c_report: float = Field(1.0, gt=0)


class Tolerances(_Strict):
    solution_error: float = Field(5e-3, gt=0)
    identity_c: float = Field(1.0, gt=0)
    motion_law_c: float = Field(1.0, gt=0)
    duality_c: float = Field(1.0, gt=0)
    perpendicularity: float = Field(1e-10, gt=0)


Exponent = Union[float, Literal["inf"]]


class NormSection(_Strict):
    kind: Literal["lpq", "holder"] = "lpq"
    p: Exponent = 2.0
    q: Exponent = 2.0
    R: float = Field(1.0, gt=0)
    alpha: float = Field(0.5, gt=0, le=1)
    u_measure: Literal["area", "dx"] = "area"

    @field_validator("p", "q")
    @classmethod
    def _exponent(cls, v):
        if v != "inf" and v < 1:
            raise ValueError("exponent must be >= 1 or 'inf'")
        return v

    def value(self, name):
        v = getattr(self, name)
        return math.inf if v == "inf" else float(v)


class ScenarioConfig(_Strict):
    scenario: Literal[scenarios.SCENARIOS]  # type: ignore[valid-type]
    k: Optional[int] = Field(None, ge=1)
    n: Optional[int] = Field(None, ge=2)
    box: Optional[list[tuple[float, float]]] = None
    h: float = Field(gt=0)
    dt: Optional[float] = Field(None, gt=0)
    sigma: float = Field(0.9, gt=0, le=1)
    t_range: Optional[tuple[float, float]] = None
    speed: Optional[float] = None
    initial: Optional[list[str]] = None
    exact: Optional[list[str]] = None
    forcing: Optional[list[str]] = None
    solver: SolverSection = SolverSection()
    checks: ChecksSection = ChecksSection()
    brakke: BrakkeSection = BrakkeSection()
    tolerances: Tolerances = Tolerances()
    norms: list[NormSection] = []
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _consistent(self):
        name = self.scenario
        custom = name == "custom-expression"
        if not custom:
            for key in ("initial", "exact", "forcing"):
                if getattr(self, key) is not None:
                    raise ValueError(f"'{key}' is only allowed for custom-expression")
        if self.speed is not None and name != "forced-translation":
            raise ValueError("'speed' is only allowed for forced-translation")
        if name in ("grim-reaper", "paraboloid-cap"):
            fixed = (1, 2) if name == "grim-reaper" else (2, 3)
            if (self.k, self.n) not in ((None, None), fixed):
                raise ValueError(f"{name} has fixed (k, n) = {fixed}")
        if custom:
            if self.k is None or self.n is None or self.box is None or self.t_range is None:
                raise ValueError("custom-expression needs k, n, box and t_range")
            if self.initial is None:
                raise ValueError("custom-expression needs 'initial'")
        if self.k is not None and self.n is not None and self.n <= self.k:
            raise ValueError("need n > k")
        k = self.k or (2 if name == "paraboloid-cap" else 1)
        if self.box is not None:
            if len(self.box) != k:
                raise ValueError(f"box has {len(self.box)} axes, expected {k}")
            if any(hi <= lo for lo, hi in self.box):
                raise ValueError("box axes must be increasing intervals")
        if self.t_range is not None and self.t_range[1] <= self.t_range[0]:
            raise ValueError("t_range must be increasing")
        if custom:
            codim = self.n - self.k
            try:
                parse_vector(self.initial, self.k, self.n, length=codim)
                if self.exact is not None:
                    parse_vector(self.exact, self.k, self.n, length=codim)
                if self.forcing is not None:
                    parse_vector(self.forcing, self.k, self.n, length=self.n)
            except ExpressionError as exc:
                raise ValueError(str(exc)) from None
        return self

    def build_scenario(self):
        kw = {}
        if self.scenario == "custom-expression":
            return scenarios.custom_expression(
                self.k, self.n, self.box, self.t_range, self.initial, self.forcing, self.exact
            )
        if self.k is not None and self.scenario not in ("grim-reaper", "paraboloid-cap"):
            kw["k"] = self.k
        if self.n is not None and self.scenario not in ("grim-reaper", "paraboloid-cap"):
            kw["n"] = self.n
        if self.box is not None:
            kw["box"] = tuple(tuple(b) for b in self.box)
        if self.t_range is not None:
            kw["t_range"] = tuple(self.t_range)
        if self.speed is not None:
            kw["speed"] = self.speed
        return scenarios.build(self.scenario, **kw)

    def solver_config(self, has_exact):
        s = self.solver
        boundary = s.boundary or ("dirichlet-exact" if has_exact else "dirichlet-frozen")
        if boundary == "dirichlet-exact" and not has_exact:
            raise ConfigError("dirichlet-exact boundary needs a scenario with an exact solution")
        return SolverConfig(scheme=s.scheme, sigma=self.sigma, g_max=s.g_max, boundary=boundary,
                            rtol=s.rtol, max_iter=s.max_iter)

    def enabled_checks(self):
        return tuple(k for k, v in self.checks.model_dump().items() if v)

    def canonical(self):
        """Validated config with defaults filled, minus output-only fields."""
        data = self.model_dump(mode="json", exclude={"output_dir"})
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _format_validation(exc: ValidationError):
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid config: " + "; ".join(lines)


def parse_config(text: str, source="<config>"):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{source}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}"
        ) from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: config must be a JSON object")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_format_validation(exc)}") from None


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
