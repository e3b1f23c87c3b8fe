"""Scenario files: a strict INI-style description of one problem instance.

Format: UTF-8 text, ``[section]`` headers, ``key = value`` pairs, ``#``
starts a comment anywhere on a line, blank lines ignored.  The schema is
closed: a missing required key, an unknown key, or an unknown section is
a load error with file/line diagnostics (silent typos in coefficient
names would invalidate results).  Expression values use the toolkit
expression language.

Sections and keys:

    [geometry]      n, R
    [coefficients]  a, b, c                  expressions in (r, t)
    [nonlinearity]  h                        expression in (r, t, u)
    [boundary]      kind (robin|neumann|dirichlet), psi (expression in u)
    [disturbances]  f (r, t), d (t), sup_f_override?, sup_d_override?
    [initial]       phi                      expression in (r)
    [grid]          nr, dt, T, snapshot_stride
    [bounds]        a_lower, a_upper, b_upper, c_lower,
                    trace_constant?, trace_safety_factor, neumann_gain_measure
    [verify]        tol

When ``trace_constant`` is omitted, the radial trace constant is
estimated at load time (resolution 256) and inflated by
``trace_safety_factor``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .exprlang import ExprError, parse, to_text
from .geometry import BallGeometry, estimate_trace_constant
from .problem import (
    BoundaryKind,
    BoundConstants,
    ProblemSpec,
    ProblemSpecError,
)
from .solver import RadialGrid, TimeGrid

_TRACE_ESTIMATE_RESOLUTION = 256


class ScenarioError(ValueError):
    """Scenario file cannot be loaded; message carries file/line context."""


@dataclass(frozen=True)
class LoadedScenario:
    spec: ProblemSpec
    grid: RadialGrid
    timegrid: TimeGrid
    snapshot_stride: int
    verify_tol: float
    sup_f_override: float | None
    sup_d_override: float | None
    neumann_gain_measure: str
    trace_safety_factor: float
    trace_source: str  # "declared" or "estimated"
    path: str


_REQUIRED = object()
_OPTIONAL = object()

_SCHEMA = {
    "geometry": {"n": _REQUIRED, "R": _REQUIRED},
    "coefficients": {"a": _REQUIRED, "b": _REQUIRED, "c": _REQUIRED},
    "nonlinearity": {"h": _REQUIRED},
    "boundary": {"kind": _REQUIRED, "psi": _REQUIRED},
    "disturbances": {
        "f": _REQUIRED,
        "d": _REQUIRED,
        "sup_f_override": _OPTIONAL,
        "sup_d_override": _OPTIONAL,
    },
    "initial": {"phi": _REQUIRED},
    "grid": {"nr": _REQUIRED, "dt": _REQUIRED, "T": _REQUIRED, "snapshot_stride": _REQUIRED},
    "bounds": {
        "a_lower": _REQUIRED,
        "a_upper": _REQUIRED,
        "b_upper": _REQUIRED,
        "c_lower": _REQUIRED,
        "trace_constant": _OPTIONAL,
        "trace_safety_factor": _REQUIRED,
        "neumann_gain_measure": _REQUIRED,
    },
    "verify": {"tol": _REQUIRED},
}


def _read_sections(path: str) -> dict[str, dict[str, tuple[str, int]]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw_lines = fh.readlines()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario file ({exc})") from exc

    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(raw_lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SCHEMA:
                raise ScenarioError(f"{path}:{lineno}: unknown section [{name}]")
            if name in sections:
                raise ScenarioError(f"{path}:{lineno}: duplicate section [{name}]")
            sections[name] = {}
            current = name
            continue
        if "=" not in line:
            raise ScenarioError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        if current is None:
            raise ScenarioError(f"{path}:{lineno}: key outside of any section")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA[current]:
            raise ScenarioError(f"{path}:{lineno}: unknown key {key!r} in section [{current}]")
        if key in sections[current]:
            raise ScenarioError(f"{path}:{lineno}: duplicate key {key!r} in [{current}]")
        if not value:
            raise ScenarioError(f"{path}:{lineno}: empty value for {key!r}")
        sections[current][key] = (value, lineno)

    for name, keys in _SCHEMA.items():
        if name not in sections:
            raise ScenarioError(f"{path}: missing section [{name}]")
        for key, kind in keys.items():
            if kind is _REQUIRED and key not in sections[name]:
                raise ScenarioError(f"{path}: missing key {key!r} in section [{name}]")
    return sections


class _SectionReader:
    def __init__(self, path: str, sections):
        self.path = path
        self.sections = sections

    def _raw(self, section, key, default=None):
        entry = self.sections[section].get(key)
        if entry is None:
            return default, None
        return entry

    def text(self, section, key, default=None):
        value, _ = self._raw(section, key, default)
        return value

    def number(self, section, key, default=None, *, integer=False):
        value, lineno = self._raw(section, key, default)
        if value is default and lineno is None:
            return default
        try:
            return int(value) if integer else float(value)
        except (TypeError, ValueError) as exc:
            kind = "an integer" if integer else "a number"
            raise ScenarioError(
                f"{self.path}:{lineno}: {key!r} must be {kind}, got {value!r}"
            ) from exc

    def expression(self, section, key):
        value, lineno = self._raw(section, key)
        try:
            return parse(value)
        except ExprError as exc:
            raise ScenarioError(f"{self.path}:{lineno}: {key!r}: {exc}") from exc


def load_scenario(path: str) -> LoadedScenario:
    """Parse, type-check, and assemble a scenario file."""
    sections = _read_sections(path)
    reader = _SectionReader(path, sections)

    n = reader.number("geometry", "n", integer=True)
    radius = reader.number("geometry", "R")
    try:
        geometry = BallGeometry(dimension=n, radius=radius)
    except ValueError as exc:
        raise ScenarioError(f"{path}: [geometry]: {exc}") from exc

    kind_text = reader.text("boundary", "kind")
    try:
        kind = BoundaryKind(kind_text.lower())
    except ValueError as exc:
        raise ScenarioError(
            f"{path}: [boundary] kind must be robin, neumann or dirichlet, got {kind_text!r}"
        ) from exc

    measure = reader.text("bounds", "neumann_gain_measure")
    if measure not in ("sphere", "ball"):
        raise ScenarioError(
            f"{path}: [bounds] neumann_gain_measure must be 'sphere' or 'ball', got {measure!r}"
        )

    safety = reader.number("bounds", "trace_safety_factor")
    declared_trace = reader.number("bounds", "trace_constant", default=None)
    if declared_trace is None:
        estimate = estimate_trace_constant(geometry, _TRACE_ESTIMATE_RESOLUTION)
        trace_constant = estimate.value * safety
        trace_source = "estimated"
    else:
        trace_constant = declared_trace
        trace_source = "declared"

    try:
        constants = BoundConstants(
            a_lower=reader.number("bounds", "a_lower"),
            a_upper=reader.number("bounds", "a_upper"),
            b_upper=reader.number("bounds", "b_upper"),
            c_lower=reader.number("bounds", "c_lower"),
            trace_constant=trace_constant,
        )
    except ProblemSpecError as exc:
        raise ScenarioError(f"{path}: [bounds]: {exc}") from exc

    nr = reader.number("grid", "nr", integer=True)
    dt = reader.number("grid", "dt")
    horizon = reader.number("grid", "T")
    stride = reader.number("grid", "snapshot_stride", integer=True)
    try:
        grid = RadialGrid(node_count=nr, radius=radius)
        timegrid = TimeGrid(dt=dt, horizon=horizon)
    except ValueError as exc:
        raise ScenarioError(f"{path}: [grid]: {exc}") from exc
    if stride < 1:
        raise ScenarioError(f"{path}: [grid]: snapshot_stride must be at least 1")

    try:
        spec = ProblemSpec(
            geometry=geometry,
            a=reader.expression("coefficients", "a"),
            b_radial=reader.expression("coefficients", "b"),
            c=reader.expression("coefficients", "c"),
            h=reader.expression("nonlinearity", "h"),
            psi=reader.expression("boundary", "psi"),
            f=reader.expression("disturbances", "f"),
            d=reader.expression("disturbances", "d"),
            phi=reader.expression("initial", "phi"),
            boundary=kind,
            constants=constants,
            horizon=horizon,
        )
    except ProblemSpecError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc

    return LoadedScenario(
        spec=spec,
        grid=grid,
        timegrid=timegrid,
        snapshot_stride=stride,
        verify_tol=reader.number("verify", "tol"),
        sup_f_override=reader.number("disturbances", "sup_f_override", default=None),
        sup_d_override=reader.number("disturbances", "sup_d_override", default=None),
        neumann_gain_measure=measure,
        trace_safety_factor=safety,
        trace_source=trace_source,
        path=path,
    )


def scenario_text(loaded: LoadedScenario) -> str:
    """Render a loaded scenario back into the file format.

    Expressions are re-printed from their trees, so formatting may differ
    from the source file, but re-loading the result reconstructs an equal
    problem.  A scenario whose trace constant was estimated at load time
    is written without a ``trace_constant`` key (it will be re-estimated,
    deterministically, on the next load).
    """
    spec = loaded.spec
    lines = [
        "[geometry]",
        f"n = {spec.geometry.dimension}",
        f"R = {spec.geometry.radius!r}",
        "",
        "[coefficients]",
        f"a = {to_text(spec.a)}",
        f"b = {to_text(spec.b_radial)}",
        f"c = {to_text(spec.c)}",
        "",
        "[nonlinearity]",
        f"h = {to_text(spec.h)}",
        "",
        "[boundary]",
        f"kind = {spec.boundary.value}",
        f"psi = {to_text(spec.psi)}",
        "",
        "[disturbances]",
        f"f = {to_text(spec.f)}",
        f"d = {to_text(spec.d)}",
    ]
    if loaded.sup_f_override is not None:
        lines.append(f"sup_f_override = {loaded.sup_f_override!r}")
    if loaded.sup_d_override is not None:
        lines.append(f"sup_d_override = {loaded.sup_d_override!r}")
    lines += [
        "",
        "[initial]",
        f"phi = {to_text(spec.phi)}",
        "",
        "[grid]",
        f"nr = {loaded.grid.node_count}",
        f"dt = {loaded.timegrid.dt!r}",
        f"T = {loaded.timegrid.horizon!r}",
        f"snapshot_stride = {loaded.snapshot_stride}",
        "",
        "[bounds]",
        f"a_lower = {spec.constants.a_lower!r}",
        f"a_upper = {spec.constants.a_upper!r}",
        f"b_upper = {spec.constants.b_upper!r}",
        f"c_lower = {spec.constants.c_lower!r}",
    ]
    if loaded.trace_source == "declared":
        lines.append(f"trace_constant = {spec.constants.trace_constant!r}")
    lines += [
        f"trace_safety_factor = {loaded.trace_safety_factor!r}",
        f"neumann_gain_measure = {loaded.neumann_gain_measure}",
        "",
        "[verify]",
        f"tol = {loaded.verify_tol!r}",
        "",
    ]
    return "\n".join(lines)


def _example_text(kind: str) -> str:
    return f"""\
# Superlinear reaction-diffusion benchmark on the unit disk (n = 2).
# Interior equation: u_t - div(a grad u) + c u + u ln(1 + u^2) = f
# Boundary coupling ({kind}) with psi(u) = u + u^3, driven by d(t) = sin(t)^2.

[geometry]
n = 2
R = 1.0

[coefficients]
a = 1
b = 0
c = 1

[nonlinearity]
h = u*ln(1+u^2)

[boundary]
kind = {kind}
psi = u + u^3

[disturbances]
f = 0
d = sin(t)^2
sup_d_override = 1.0

[initial]
phi = 0

[grid]
nr = 201
dt = 0.001
T = 2.0
snapshot_stride = 100

[bounds]
a_lower = 1.0
a_upper = 1.0
b_upper = 0.0
c_lower = 1.0
trace_safety_factor = 1.1
neumann_gain_measure = sphere

[verify]
tol = 0.02
"""


EXAMPLE_SCENARIOS = {
    "example_robin.scenario": _example_text("robin"),
    "example_dirichlet.scenario": _example_text("dirichlet"),
    "example_neumann.scenario": _example_text("neumann"),
}
