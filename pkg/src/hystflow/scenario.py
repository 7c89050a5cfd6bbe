"""Scenario documents: strict JSON loading, validation and problem set-up.

Every section is a frozen dataclass; unknown keys are rejected with the
full key path, and ``to_dict`` renders a document that loads back into an
equal Scenario.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .density import (
    DecayFamily,
    InitialMemory,
    Tabulated,
    UniformBox,
    build_virgin_memory,
    check_range_condition,
)
from .errors import ScenarioError, ScenarioParseError
from .grid import interval_mesh, rectangle_mesh
from .hysteresis import Polynomial, TableTransform, ThresholdGrid, Transform
from .problem import BoundaryValue, Kappa, Problem
from .stepper import StepperConfig


def _float(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ScenarioError(path, "must be finite")
    return value


def _int(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(path, f"expected an integer, got {value!r}")
    return value


def _bool(value, path):
    if not isinstance(value, bool):
        raise ScenarioError(path, f"expected true/false, got {value!r}")
    return value


def _str(value, path):
    if not isinstance(value, str):
        raise ScenarioError(path, f"expected a string, got {value!r}")
    return value


def _floats(value, path):
    if not isinstance(value, (list, tuple)):
        raise ScenarioError(path, "expected a list of numbers")
    return tuple(_float(v, f"{path}[{i}]") for i, v in enumerate(value))


def _ints(value, path):
    if not isinstance(value, (list, tuple)):
        raise ScenarioError(path, "expected a list of integers")
    return tuple(_int(v, f"{path}[{i}]") for i, v in enumerate(value))


def _matrix(value, path):
    if not isinstance(value, (list, tuple)):
        raise ScenarioError(path, "expected a list of rows")
    return tuple(_floats(row, f"{path}[{i}]") for i, row in enumerate(value))


def _float_map(value, path):
    if not isinstance(value, dict):
        raise ScenarioError(path, "expected a mapping")
    return {str(k): _float(v, f"{path}.{k}") for k, v in sorted(value.items())}


def _opt(conv):
    def inner(value, path):
        return None if value is None else conv(value, path)
    return inner


def _spec(conv, default=None, factory=None):
    if factory is not None:
        return field(default_factory=factory, metadata={"conv": conv})
    return field(default=default, metadata={"conv": conv})


def _parse_section(cls, data, path):
    if not isinstance(data, dict):
        raise ScenarioError(path, "expected a mapping")
    names = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in names:
            raise ScenarioError(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for name, f in names.items():
        if name in data:
            sub = f"{path}.{name}" if path else name
            kwargs[name] = f.metadata["conv"](data[name], sub)
    obj = cls(**kwargs)
    obj.validate(path)
    return obj


def _section(cls):
    def conv(value, path):
        return _parse_section(cls, value, path)
    return conv


def _render(obj):
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if value is None:
            continue
        if hasattr(value, "to_dict"):
            value = value.to_dict()
        elif isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        elif isinstance(value, dict):
            value = dict(value)
        out[f.name] = value
    return out


class _Section:
    def validate(self, path):
        pass

    def to_dict(self):
        return _render(self)


def _choice(path, value, options):
    if value not in options:
        raise ScenarioError(path, f"must be one of {sorted(options)}, got {value!r}")


@dataclass(frozen=True)
class MeshSpec(_Section):
    dimension: int = _spec(_int, 1)
    extent: tuple = _spec(_matrix, ((0.0, 1.0),))
    nodes: tuple = _spec(_ints, (64,))

    def validate(self, path):
        _choice(f"{path}.dimension", self.dimension, {1, 2})
        if len(self.extent) != self.dimension or len(self.nodes) != self.dimension:
            raise ScenarioError(path, "extent and nodes need one entry per dimension")
        for i, (ext, n) in enumerate(zip(self.extent, self.nodes)):
            if len(ext) != 2 or not ext[1] > ext[0]:
                raise ScenarioError(f"{path}.extent[{i}]", "need [low, high] with high > low")
            if n < 2:
                raise ScenarioError(f"{path}.nodes[{i}]", "need at least two nodes")

    def build(self):
        if self.dimension == 1:
            return interval_mesh(self.extent[0][0], self.extent[0][1], self.nodes[0])
        return rectangle_mesh(self.extent[0], self.extent[1], self.nodes[0], self.nodes[1])


_DENSITY_KEYS = {
    "decay-family": {"m", "phi0"},
    "uniform-box": {"r_range", "v_range", "height"},
    "tabulated": {"csv", "r", "v", "values"},
}


@dataclass(frozen=True)
class DensitySpec(_Section):
    kind: str = _spec(_str, "decay-family")
    G_bar: float = _spec(_float, 0.5)
    m: float = _spec(_opt(_float), None)
    phi0: float = _spec(_opt(_float), None)
    r_range: tuple = _spec(_opt(_floats), None)
    v_range: tuple = _spec(_opt(_floats), None)
    height: float = _spec(_opt(_float), None)
    csv: str = _spec(_opt(_str), None)
    r: tuple = _spec(_opt(_floats), None)
    v: tuple = _spec(_opt(_floats), None)
    values: tuple = _spec(_opt(_matrix), None)
    x_modulation: tuple = _spec(_opt(_floats), None)
    range_condition: bool = _spec(_bool, False)

    def validate(self, path):
        _choice(f"{path}.kind", self.kind, set(_DENSITY_KEYS))
        for other, keys in _DENSITY_KEYS.items():
            if other == self.kind:
                continue
            for key in keys - _DENSITY_KEYS[self.kind]:
                if getattr(self, key) is not None:
                    raise ScenarioError(f"{path}.{key}", f"not a {self.kind} parameter")
        if self.kind == "decay-family":
            if self.m is not None and self.m <= 2.0:
                raise ScenarioError(f"{path}.m", "decay exponent must exceed 2")
            if self.phi0 is not None and self.phi0 <= 0:
                raise ScenarioError(f"{path}.phi0", "must be positive")
        if self.kind == "uniform-box" and self.height is not None and self.height < 0:
            raise ScenarioError(f"{path}.height", "must be nonnegative")
        if self.kind == "tabulated":
            inline = (self.r, self.v, self.values)
            if self.csv is None and any(x is None for x in inline):
                raise ScenarioError(path, "tabulated density needs csv or r, v and values")
            if self.values is not None and any(x < 0 for row in self.values for x in row):
                raise ScenarioError(f"{path}.values", "negative density entries")

    def build(self, base_dir, n_nodes):
        mod = None
        if self.x_modulation is not None:
            if len(self.x_modulation) != n_nodes:
                raise ScenarioError("density.x_modulation", f"need {n_nodes} nodal values")
            mod = np.array(self.x_modulation)
        common = {"G_bar": self.G_bar, "x_modulation": mod}
        if self.kind == "decay-family":
            m = 4.0 if self.m is None else self.m
            phi0 = 1.0 - 2.0 / m if self.phi0 is None else self.phi0
            density = DecayFamily(m, phi0, **common)
        elif self.kind == "uniform-box":
            density = UniformBox(self.r_range or (0.0, 1.0), self.v_range or (-1.0, 1.0),
                                 1.0 if self.height is None else self.height, **common)
        elif self.csv is not None:
            density = Tabulated.from_csv(Path(base_dir) / self.csv, **common)
        else:
            density = Tabulated(self.r, self.v, self.values, **common)
        if self.range_condition and not check_range_condition(density):
            raise ScenarioError("density.range_condition",
                                "density masses do not keep the saturation in [0, 1]")
        return density


@dataclass(frozen=True)
class TransformSpec(_Section):
    kind: str = _spec(_str, "identity")
    coefficients: tuple = _spec(_opt(_floats), None)
    u: tuple = _spec(_opt(_floats), None)
    g: tuple = _spec(_opt(_floats), None)
    g_lower: float = _spec(_opt(_float), None)
    g_upper: float = _spec(_opt(_float), None)

    def validate(self, path):
        _choice(f"{path}.kind", self.kind, {"identity", "polynomial", "table"})
        if self.kind == "polynomial" and not self.coefficients:
            raise ScenarioError(f"{path}.coefficients", "required for a polynomial transform")
        if self.kind == "table" and (self.u is None or self.g is None or len(self.u) != len(self.g)):
            raise ScenarioError(path, "table transform needs u and g of equal length")

    def build(self, U):
        if self.kind == "identity":
            return Transform()
        g = Polynomial(self.coefficients) if self.kind == "polynomial" else TableTransform(self.u, self.g)
        try:
            g.validate(U, g_lower=self.g_lower, g_upper=self.g_upper)
        except ValueError as exc:
            raise ScenarioError("transform", str(exc)) from None
        return g


@dataclass(frozen=True)
class KappaSpec(_Section):
    kappa0: float = _spec(_float, 1.0)
    kappa1: float = _spec(_float, 1.0)
    formula: str = _spec(_str, "linear")
    exponent: float = _spec(_float, 1.0)

    def validate(self, path):
        _choice(f"{path}.formula", self.formula, {"linear", "constant", "power"})
        if not 0.0 < self.kappa0 <= self.kappa1:
            raise ScenarioError(path, "need 0 < kappa0 <= kappa1")
        if self.formula == "power" and self.exponent < 1.0:
            raise ScenarioError(f"{path}.exponent", "must be >= 1")

    def build(self):
        kappa = Kappa(self.kappa0, self.kappa1, self.formula, self.exponent)
        sample = kappa(None, np.linspace(-0.5, 1.5, 201))
        if sample.min() < self.kappa0 - 1e-12 or sample.max() > self.kappa1 + 1e-12:
            raise ScenarioError("kappa", "formula leaves [kappa0, kappa1]")
        return kappa


@dataclass(frozen=True)
class GravitySpec(_Section):
    enabled: bool = _spec(_bool, False)
    direction: tuple = _spec(_opt(_floats), None)

    def validate(self, path):
        if self.enabled and self.direction is not None:
            if abs(math.sqrt(sum(x * x for x in self.direction)) - 1.0) > 1e-12:
                raise ScenarioError(f"{path}.direction", "must be a unit vector")

    def vector(self, dim):
        if not self.enabled:
            return np.zeros(dim)
        if self.direction is None:
            return -np.eye(dim)[dim - 1]
        if len(self.direction) != dim:
            raise ScenarioError("gravity.direction", f"need {dim} components")
        return np.array(self.direction)


@dataclass(frozen=True)
class TimeSeriesSpec(_Section):
    kind: str = _spec(_str, "constant")
    value: float = _spec(_opt(_float), None)
    t: tuple = _spec(_opt(_floats), None)
    values: tuple = _spec(_opt(_floats), None)

    def validate(self, path):
        _choice(f"{path}.kind", self.kind, {"constant", "table"})
        if self.kind == "table" and (self.t is None or self.values is None
                                     or len(self.t) != len(self.values) or not self.t):
            raise ScenarioError(path, "table needs t and values of equal length")

    def build(self):
        if self.kind == "constant":
            return BoundaryValue(0.0 if self.value is None else self.value)
        return BoundaryValue(times=self.t, values=self.values)


@dataclass(frozen=True)
class BoundarySpec(_Section):
    b_star: dict = _spec(_float_map, factory=dict)
    u_star: TimeSeriesSpec = _spec(_section(TimeSeriesSpec), factory=TimeSeriesSpec)

    def validate(self, path):
        for seg, b in self.b_star.items():
            if b < 0:
                raise ScenarioError(f"{path}.b_star.{seg}", "must be nonnegative")


@dataclass(frozen=True)
class FieldSpec(_Section):
    kind: str = _spec(_str, "constant")
    value: float = _spec(_opt(_float), None)
    values: tuple = _spec(_opt(_floats), None)
    offset: float = _spec(_opt(_float), None)

    def validate(self, path):
        _choice(f"{path}.kind", self.kind, {"constant", "table", "hydrostatic"})
        if self.kind == "table" and self.values is None:
            raise ScenarioError(f"{path}.values", "required for a table field")

    def build(self, mesh, nu, path):
        if self.kind == "constant":
            return np.full(mesh.n_nodes, 0.0 if self.value is None else self.value)
        if self.kind == "table":
            if len(self.values) != mesh.n_nodes:
                raise ScenarioError(f"{path}.values", f"need {mesh.n_nodes} nodal values")
            return np.array(self.values)
        offset = 0.0 if self.offset is None else self.offset
        return offset - (mesh.coords - mesh.centroid) @ nu


@dataclass(frozen=True)
class InitialSpec(_Section):
    u0: FieldSpec = _spec(_section(FieldSpec), factory=FieldSpec)
    v0: FieldSpec = _spec(_section(FieldSpec), factory=FieldSpec)


@dataclass(frozen=True)
class MemorySpec(_Section):
    kind: str = _spec(_str, "virgin")
    r: tuple = _spec(_opt(_floats), None)
    values: tuple = _spec(_opt(_matrix), None)

    def validate(self, path):
        _choice(f"{path}.kind", self.kind, {"virgin", "table"})
        if self.kind == "table" and (self.r is None or self.values is None):
            raise ScenarioError(path, "table memory needs r and values")


@dataclass(frozen=True)
class TimeSpec(_Section):
    tau: float = _spec(_float, 0.01)
    T: float = _spec(_float, 1.0)

    def validate(self, path):
        if not self.T > 0:
            raise ScenarioError(f"{path}.T", "must be positive")
        if not 0 < self.tau <= self.T:
            raise ScenarioError(f"{path}.tau", "must lie in (0, T]")
        n = round(self.T / self.tau)
        if abs(n * self.tau - self.T) > 1e-9 * self.T:
            raise ScenarioError(f"{path}.tau", "T / tau must be an integer")


@dataclass(frozen=True)
class SolverSpec(_Section):
    newton_tol: float = _spec(_float, 1e-10)
    newton_max_iter: int = _spec(_int, 40)
    line_search_shrink: float = _spec(_float, 0.5)
    picard_fallback: bool = _spec(_bool, True)
    picard_max_iter: int = _spec(_int, 400)
    fd_step: float = _spec(_float, 1e-6)
    retry_halving: bool = _spec(_bool, False)

    def validate(self, path):
        if not self.newton_tol > 0:
            raise ScenarioError(f"{path}.newton_tol", "must be positive")
        if not 0 < self.line_search_shrink < 1:
            raise ScenarioError(f"{path}.line_search_shrink", "must lie in (0, 1)")
        if not self.fd_step > 0:
            raise ScenarioError(f"{path}.fd_step", "must be positive")


@dataclass(frozen=True)
class OutputSpec(_Section):
    dir: str = _spec(_str, "out")
    snapshot_every: int = _spec(_int, 0)
    checkpoint_every: int = _spec(_int, 0)

    def validate(self, path):
        if self.snapshot_every < 0 or self.checkpoint_every < 0:
            raise ScenarioError(path, "cadences must be nonnegative step counts")


@dataclass(frozen=True)
class Scenario(_Section):
    mesh: MeshSpec = _spec(_section(MeshSpec), factory=MeshSpec)
    density: DensitySpec = _spec(_section(DensitySpec), factory=DensitySpec)
    transform: TransformSpec = _spec(_section(TransformSpec), factory=TransformSpec)
    kappa: KappaSpec = _spec(_section(KappaSpec), factory=KappaSpec)
    gravity: GravitySpec = _spec(_section(GravitySpec), factory=GravitySpec)
    boundary: BoundarySpec = _spec(_section(BoundarySpec), factory=BoundarySpec)
    initial: InitialSpec = _spec(_section(InitialSpec), factory=InitialSpec)
    memory: MemorySpec = _spec(_section(MemorySpec), factory=MemorySpec)
    Lambda: float = _spec(_float, 2.0)
    thresholds: int = _spec(_int, 64)
    time: TimeSpec = _spec(_section(TimeSpec), factory=TimeSpec)
    solver: SolverSpec = _spec(_section(SolverSpec), factory=SolverSpec)
    output: OutputSpec = _spec(_section(OutputSpec), factory=OutputSpec)
    base_dir: str = field(default=".", compare=False, metadata={"conv": None})

    def validate(self, path):
        if not self.Lambda > 0:
            raise ScenarioError("Lambda", "must be positive")
        if self.thresholds < 1:
            raise ScenarioError("thresholds", "need at least one threshold")

    def to_dict(self):
        out = _render(self)
        out.pop("base_dir", None)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def _parse_scenario(data):
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "expected a mapping")
    if "base_dir" in data:
        raise ScenarioError("base_dir", "unknown key")
    return _parse_section(Scenario, data, "")


def loads(text, base_dir="."):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, exc.lineno, exc.colno) from None
    scenario = _parse_scenario(data)
    return _with_base(scenario, base_dir)


def _with_base(scenario, base_dir):
    object.__setattr__(scenario, "base_dir", str(base_dir))
    return scenario


def load_scenario(path):
    path = Path(path)
    scenario = loads(path.read_text(), base_dir=path.parent)
    # materializing checks all cross-section invariants
    build_problem(scenario)
    return scenario


def build_problem(scenario):
    mesh = scenario.mesh.build()
    nu = scenario.gravity.vector(mesh.dim)
    density = scenario.density.build(scenario.base_dir, mesh.n_nodes)
    transform = scenario.transform.build(scenario.Lambda)
    u0 = scenario.initial.u0.build(mesh, nu, "initial.u0")
    v0 = scenario.initial.v0.build(mesh, nu, "initial.v0")
    if np.max(np.abs(u0)) > scenario.Lambda:
        raise ScenarioError("initial.u0", f"sup|u0| exceeds Lambda = {scenario.Lambda}")
    w0 = transform(u0)
    if scenario.memory.kind == "virgin":
        memory = build_virgin_memory(w0, scenario.Lambda)
    else:
        values = np.array(scenario.memory.values)
        if values.shape[0] != mesh.n_nodes:
            raise ScenarioError("memory.values", f"need {mesh.n_nodes} node rows")
        memory = InitialMemory.from_table(scenario.memory.r, values, scenario.Lambda)
    try:
        return Problem(
            mesh=mesh, density=density,
            grid=ThresholdGrid.midpoint(scenario.Lambda, scenario.thresholds),
            memory=memory, u0=u0, v0=v0, kappa=scenario.kappa.build(), transform=transform,
            nu=nu, b_star=dict(scenario.boundary.b_star), u_star=scenario.boundary.u_star.build(),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError("scenario", str(exc)) from None


def stepper_config(scenario, tau=None):
    s = scenario.solver
    return StepperConfig(
        tau=scenario.time.tau if tau is None else tau, T=scenario.time.T,
        newton_tol=s.newton_tol, newton_max_iter=s.newton_max_iter,
        line_search_shrink=s.line_search_shrink, picard_fallback=s.picard_fallback,
        picard_max_iter=s.picard_max_iter, fd_step=s.fd_step, retry_halving=s.retry_halving,
    )
