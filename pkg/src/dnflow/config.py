"""Scenario configuration: a line-oriented INI dialect with named sections.

A scenario document describes one evolution run (optionally a comparison
pair) using only primitive values, so configs diff cleanly and round-trip:
``parse_scenario(serialize_scenario(sc))`` reproduces ``sc`` exactly.  The
grammar is strict; unknown sections, unknown keys, and keys that the chosen
kind does not use are all rejected with the offending name in the message.

Sections::

    [domain]    cells, extents, dimension
    [time]      horizon, steps
    [graph]     kind (power | identity | tan | log1p | rational), exponent
    [flux]      kind (power | sum), p, epsilon, exponents, weights
    [source]    kind (zero | linear | power | sine | quadratic),
                coefficient, exponent, frequency, monotone, truncation
    [forcing]   kind (none | separable), space, time, amplitude, rate
    [initial]   preset (eigenmode | bump | constant | samples),
                amplitude, value, samples
    [initial2]  same grammar as [initial]; presence enables the comparison
    [forcing2]  same grammar as [forcing]; only with [initial2]
    [mode]      kind (inverse-lipschitz | lipschitz | monotone-source)
    [monitors]  enabled, sup, energy, chain, mode, sup-tolerance,
                energy-tolerance, chain-tolerance, mode-tolerance,
                gronwall-absolute, gronwall-relative
    [output]    directory, snapshots, figures

[domain], [time], [graph], [flux], and [initial] are required, the rest are
optional.  Numbers serialize with 17 significant digits so a round-trip
never moves a value.  The source ``monotone`` key, when present, must agree
with what the constructors derive; the comparison machinery trusts that
flag and a config cannot be allowed to overrule it.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .comparison import ComparisonRun
from .evolution import (ConfigurationError, EvolutionConfig, MODES,
                        MODE_INVERSE_LIPSCHITZ, MODE_LIPSCHITZ,
                        MODE_MONOTONE_SOURCE)
from .graphs import (GraphSpecError, SourceLaw, construct_graph,
                     linear_source, p_laplacian, power_source,
                     quadratic_source, sine_source, sum_p_laplacian,
                     zero_source)
from .grid import Grid, GridField, first_eigenmode

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "parse_scenario",
    "load_scenario",
    "serialize_scenario",
    "build_grid",
    "build_evolution",
    "build_comparison",
    "monitor_tolerances",
    "preset_names",
    "preset_text",
]


class ConfigError(ConfigurationError):
    """A scenario document problem, carrying the offending section and key."""

    def __init__(self, section: str, key: Optional[str], message: str):
        self.section = section
        self.key = key
        where = f"[{section}]" + (f" {key}" if key else "")
        super().__init__(f"{where}: {message}")


# -- typed sections -------------------------------------------------------------


@dataclass(frozen=True)
class GraphSpec:
    kind: str
    exponent: Optional[float] = None


@dataclass(frozen=True)
class FluxSpec:
    kind: str
    p: Optional[float] = None
    epsilon: Optional[float] = None
    exponents: tuple = ()
    weights: tuple = ()


@dataclass(frozen=True)
class SourceSpec:
    kind: str
    coefficient: float = 1.0
    exponent: Optional[float] = None
    frequency: Optional[float] = None
    truncation: Optional[float] = None


@dataclass(frozen=True)
class ForcingSpec:
    space: str = "constant"
    time: str = "constant"
    amplitude: float = 1.0
    rate: float = 1.0


@dataclass(frozen=True)
class InitialSpec:
    preset: str
    amplitude: float = 1.0
    value: Optional[float] = None
    samples: tuple = ()


@dataclass(frozen=True)
class MonitorSpec:
    enabled: bool = True
    sup: bool = True
    energy: bool = True
    chain: bool = True
    mode: bool = True
    sup_tolerance: Optional[float] = None
    energy_tolerance: Optional[float] = None
    chain_tolerance: Optional[float] = None
    mode_tolerance: Optional[float] = None
    gronwall_absolute: Optional[float] = None
    gronwall_relative: Optional[float] = None


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "output"
    snapshots: Optional[tuple] = None     # None: initial and final states
    figures: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    cells: tuple
    extents: tuple
    horizon: float
    steps: int
    graph: GraphSpec
    flux: FluxSpec
    source: SourceSpec = SourceSpec("zero")
    forcing: Optional[ForcingSpec] = None
    initial: InitialSpec = InitialSpec("constant", value=0.0)
    initial2: Optional[InitialSpec] = None
    forcing2: Optional[ForcingSpec] = None
    forcing2_given: bool = False     # absent [forcing2] means: share [forcing]
    mode: str = MODE_INVERSE_LIPSCHITZ
    monitors: MonitorSpec = MonitorSpec()
    output: OutputSpec = OutputSpec()

    @property
    def comparison_configured(self) -> bool:
        return self.initial2 is not None

    @property
    def effective_forcing2(self) -> Optional[ForcingSpec]:
        return self.forcing2 if self.forcing2_given else self.forcing


# -- parsing --------------------------------------------------------------------

_SECTION_KEYS = {
    "domain": ("cells", "extents", "dimension"),
    "time": ("horizon", "steps"),
    "graph": ("kind", "exponent"),
    "flux": ("kind", "p", "epsilon", "exponents", "weights"),
    "source": ("kind", "coefficient", "exponent", "frequency", "monotone",
               "truncation"),
    "forcing": ("kind", "space", "time", "amplitude", "rate"),
    "initial": ("preset", "amplitude", "value", "samples"),
    "initial2": ("preset", "amplitude", "value", "samples"),
    "forcing2": ("kind", "space", "time", "amplitude", "rate"),
    "mode": ("kind",),
    "monitors": ("enabled", "sup", "energy", "chain", "mode",
                 "sup-tolerance", "energy-tolerance", "chain-tolerance",
                 "mode-tolerance", "gronwall-absolute", "gronwall-relative"),
    "output": ("directory", "snapshots", "figures"),
}

_REQUIRED_SECTIONS = ("domain", "time", "graph", "flux", "initial")

_GRAPH_KINDS = ("power", "identity", "tan", "log1p", "rational")
_FLUX_KINDS = ("power", "sum")
_SOURCE_KINDS = ("zero", "linear", "power", "sine", "quadratic")
_FORCING_KINDS = ("none", "separable")
_FORCING_SPACES = ("eigenmode", "bump", "constant")
_FORCING_TIMES = ("constant", "cos", "sin", "decay")
_INITIAL_PRESETS = ("eigenmode", "bump", "constant", "samples")


class _Section:
    """One parsed section with consumption tracking for unknown-key reports."""

    def __init__(self, name: str, pairs: dict):
        self.name = name
        self.pairs = dict(pairs)
        self.taken = set()

    def get(self, key: str) -> Optional[str]:
        if key in self.pairs:
            self.taken.add(key)
            return self.pairs[key]
        return None

    def require(self, key: str) -> str:
        value = self.get(key)
        if value is None:
            raise ConfigError(self.name, key, "required key is missing")
        return value

    def reject_unused(self, reason: str) -> None:
        for key in self.pairs:
            if key not in self.taken:
                raise ConfigError(self.name, key, reason)


def _parse_float(sec: _Section, key: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(sec.name, key, f"expected a number, got {raw!r}")
    if not math.isfinite(value):
        raise ConfigError(sec.name, key, "value must be finite")
    return value


def _parse_int(sec: _Section, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(sec.name, key, f"expected an integer, got {raw!r}")


def _parse_bool(sec: _Section, key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigError(sec.name, key, f"expected true or false, got {raw!r}")


def _parse_float_list(sec: _Section, key: str, raw: str) -> tuple:
    items = [part.strip() for part in raw.split(",") if part.strip()]
    return tuple(_parse_float(sec, key, part) for part in items)


def _parse_int_list(sec: _Section, key: str, raw: str) -> tuple:
    items = [part.strip() for part in raw.split(",") if part.strip()]
    return tuple(_parse_int(sec, key, part) for part in items)


def _choice(sec: _Section, key: str, raw: str, allowed: tuple) -> str:
    value = raw.strip()
    if value not in allowed:
        raise ConfigError(sec.name, key,
                          f"expected one of {', '.join(allowed)}; got {value!r}")
    return value


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse a scenario document; reject anything outside the grammar."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError("document", None, str(err))

    sections = {}
    for name in parser.sections():
        if name not in _SECTION_KEYS:
            raise ConfigError(name, None, "unknown section")
        sec = _Section(name, dict(parser.items(name)))
        for key in sec.pairs:
            if key not in _SECTION_KEYS[name]:
                raise ConfigError(name, key, "unknown key")
        sections[name] = sec
    for name in _REQUIRED_SECTIONS:
        if name not in sections:
            raise ConfigError(name, None, "required section is missing")

    cells, extents = _read_domain(sections["domain"])
    horizon, steps = _read_time(sections["time"])
    graph = _read_graph(sections["graph"])
    flux = _read_flux(sections["flux"])
    source = (_read_source(sections["source"])
              if "source" in sections else SourceSpec("zero"))
    forcing = (_read_forcing(sections["forcing"])
               if "forcing" in sections else None)
    initial = _read_initial(sections["initial"], cells)
    initial2 = (_read_initial(sections["initial2"], cells)
                if "initial2" in sections else None)
    forcing2_given = "forcing2" in sections
    forcing2 = _read_forcing(sections["forcing2"]) if forcing2_given else None
    if forcing2_given and initial2 is None:
        raise ConfigError("forcing2", None,
                          "a second forcing needs a second initial datum")
    mode = (_read_mode(sections["mode"]) if "mode" in sections
            else MODE_INVERSE_LIPSCHITZ)
    monitors = (_read_monitors(sections["monitors"])
                if "monitors" in sections else MonitorSpec())
    output = (_read_output(sections["output"])
              if "output" in sections else OutputSpec())

    sc = ScenarioConfig(cells, extents, horizon, steps, graph, flux, source,
                        forcing, initial, initial2, forcing2, forcing2_given,
                        mode, monitors, output)
    _validate_buildable(sc)
    return sc


def load_scenario(path) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text())


def _read_domain(sec: _Section):
    cells = _parse_int_list(sec, "cells", sec.require("cells"))
    if not cells or len(cells) > 2:
        raise ConfigError(sec.name, "cells", "need one or two cell counts")
    if any(c < 1 for c in cells):
        raise ConfigError(sec.name, "cells", "cell counts must be positive")
    raw_extents = sec.get("extents")
    if raw_extents is None:
        extents = tuple(1.0 for _ in cells)
    else:
        extents = _parse_float_list(sec, "extents", raw_extents)
        if len(extents) != len(cells):
            raise ConfigError(sec.name, "extents",
                              "one extent per cell count required")
        if any(not e > 0.0 for e in extents):
            raise ConfigError(sec.name, "extents", "extents must be positive")
    raw_dim = sec.get("dimension")
    if raw_dim is not None and _parse_int(sec, "dimension", raw_dim) != len(cells):
        raise ConfigError(sec.name, "dimension",
                          "dimension disagrees with the cell list")
    sec.reject_unused("unknown key")
    return cells, extents


def _read_time(sec: _Section):
    horizon = _parse_float(sec, "horizon", sec.require("horizon"))
    steps = _parse_int(sec, "steps", sec.require("steps"))
    if not horizon > 0.0:
        raise ConfigError(sec.name, "horizon", "horizon must be positive")
    if steps < 1:
        raise ConfigError(sec.name, "steps", "need at least one step")
    sec.reject_unused("unknown key")
    return horizon, steps


def _read_graph(sec: _Section) -> GraphSpec:
    kind = _choice(sec, "kind", sec.require("kind"), _GRAPH_KINDS)
    exponent = None
    raw = sec.get("exponent")
    if kind == "power":
        if raw is None:
            raise ConfigError(sec.name, "exponent",
                              "the power graph needs an exponent")
        exponent = _parse_float(sec, "exponent", raw)
        if not exponent > 1.0:
            raise ConfigError(sec.name, "exponent",
                              f"exponent must exceed 1, got {exponent:g}")
    elif raw is not None:
        raise ConfigError(sec.name, "exponent",
                          f"key not used by graph kind {kind}")
    sec.reject_unused("unknown key")
    return GraphSpec(kind, exponent)


def _read_flux(sec: _Section) -> FluxSpec:
    kind = _choice(sec, "kind", sec.get("kind") or "power", _FLUX_KINDS)
    epsilon = None
    raw_eps = sec.get("epsilon")
    if raw_eps is not None:
        epsilon = _parse_float(sec, "epsilon", raw_eps)
        if epsilon < 0.0:
            raise ConfigError(sec.name, "epsilon",
                              "regularization must be nonnegative")
    if kind == "power":
        p = _parse_float(sec, "p", sec.require("p"))
        if not p > 1.0:
            raise ConfigError(sec.name, "p", f"p must exceed 1, got {p:g}")
        spec = FluxSpec("power", p=p, epsilon=epsilon)
    else:
        exponents = _parse_float_list(sec, "exponents", sec.require("exponents"))
        if not exponents:
            raise ConfigError(sec.name, "exponents", "need at least one exponent")
        if any(not p > 1.0 for p in exponents):
            raise ConfigError(sec.name, "exponents", "all exponents must exceed 1")
        weights = ()
        raw_w = sec.get("weights")
        if raw_w is not None:
            weights = _parse_float_list(sec, "weights", raw_w)
            if len(weights) != len(exponents):
                raise ConfigError(sec.name, "weights",
                                  "one weight per exponent required")
            if any(not w > 0.0 for w in weights):
                raise ConfigError(sec.name, "weights", "weights must be positive")
        spec = FluxSpec("sum", epsilon=epsilon, exponents=exponents,
                        weights=weights)
    sec.reject_unused(f"key not used by flux kind {kind}")
    return spec


def _read_source(sec: _Section) -> SourceSpec:
    kind = _choice(sec, "kind", sec.get("kind") or "zero", _SOURCE_KINDS)
    coefficient = 1.0
    raw_c = sec.get("coefficient")
    if raw_c is not None:
        if kind == "zero":
            raise ConfigError(sec.name, "coefficient",
                              "key not used by source kind zero")
        coefficient = _parse_float(sec, "coefficient", raw_c)
    exponent = None
    raw_e = sec.get("exponent")
    if kind == "power":
        if raw_e is None:
            raise ConfigError(sec.name, "exponent",
                              "the power source needs an exponent")
        exponent = _parse_float(sec, "exponent", raw_e)
        if not exponent > 1.0:
            raise ConfigError(sec.name, "exponent",
                              f"exponent must exceed 1, got {exponent:g}")
    elif raw_e is not None:
        raise ConfigError(sec.name, "exponent",
                          f"key not used by source kind {kind}")
    frequency = None
    raw_f = sec.get("frequency")
    if kind == "sine":
        frequency = _parse_float(sec, "frequency", raw_f) if raw_f else 1.0
    elif raw_f is not None:
        raise ConfigError(sec.name, "frequency",
                          f"key not used by source kind {kind}")
    truncation = None
    raw_t = sec.get("truncation")
    if raw_t is not None:
        truncation = _parse_float(sec, "truncation", raw_t)
        if not truncation > 0.0:
            raise ConfigError(sec.name, "truncation",
                              "truncation level must be positive")
    spec = SourceSpec(kind, coefficient, exponent, frequency, truncation)
    raw_m = sec.get("monotone")
    if raw_m is not None:
        claimed = _parse_bool(sec, "monotone", raw_m)
        actual = _source_law(spec).monotone
        if claimed != actual:
            raise ConfigError(
                sec.name, "monotone",
                f"this source is {'monotone' if actual else 'not monotone'}; "
                "the flag cannot overrule the law")
    sec.reject_unused(f"key not used by source kind {kind}")
    return spec


def _read_forcing(sec: _Section) -> Optional[ForcingSpec]:
    kind = _choice(sec, "kind", sec.require("kind"), _FORCING_KINDS)
    if kind == "none":
        sec.reject_unused("key not used by forcing kind none")
        return None
    space = _choice(sec, "space", sec.get("space") or "constant",
                    _FORCING_SPACES)
    time = _choice(sec, "time", sec.get("time") or "constant", _FORCING_TIMES)
    amplitude = 1.0
    raw_a = sec.get("amplitude")
    if raw_a is not None:
        amplitude = _parse_float(sec, "amplitude", raw_a)
    rate = 1.0
    raw_r = sec.get("rate")
    if raw_r is not None:
        if time == "constant":
            raise ConfigError(sec.name, "rate",
                              "key not used by time profile constant")
        rate = _parse_float(sec, "rate", raw_r)
    sec.reject_unused("unknown key")
    return ForcingSpec(space, time, amplitude, rate)


def _read_initial(sec: _Section, cells: tuple) -> InitialSpec:
    preset = _choice(sec, "preset", sec.require("preset"), _INITIAL_PRESETS)
    amplitude = 1.0
    raw_a = sec.get("amplitude")
    if raw_a is not None:
        if preset in ("constant", "samples"):
            raise ConfigError(sec.name, "amplitude",
                              f"key not used by preset {preset}")
        amplitude = _parse_float(sec, "amplitude", raw_a)
    value = None
    raw_v = sec.get("value")
    if preset == "constant":
        if raw_v is None:
            raise ConfigError(sec.name, "value",
                              "the constant preset needs a value")
        value = _parse_float(sec, "value", raw_v)
    elif raw_v is not None:
        raise ConfigError(sec.name, "value",
                          f"key not used by preset {preset}")
    samples = ()
    raw_s = sec.get("samples")
    if preset == "samples":
        if raw_s is None:
            raise ConfigError(sec.name, "samples",
                              "the samples preset needs sample values")
        samples = _parse_float_list(sec, "samples", raw_s)
        expected = int(np.prod(cells))
        if len(samples) != expected:
            raise ConfigError(sec.name, "samples",
                              f"expected {expected} samples, got {len(samples)}")
    elif raw_s is not None:
        raise ConfigError(sec.name, "samples",
                          f"key not used by preset {preset}")
    sec.reject_unused("unknown key")
    return InitialSpec(preset, amplitude, value, samples)


def _read_mode(sec: _Section) -> str:
    mode = _choice(sec, "kind", sec.require("kind"), MODES)
    sec.reject_unused("unknown key")
    return mode


def _read_monitors(sec: _Section) -> MonitorSpec:
    def flag(key, default=True):
        raw = sec.get(key)
        return default if raw is None else _parse_bool(sec, key, raw)

    def tol(key):
        raw = sec.get(key)
        if raw is None:
            return None
        value = _parse_float(sec, key, raw)
        if value < 0.0:
            raise ConfigError(sec.name, key, "tolerance must be nonnegative")
        return value

    spec = MonitorSpec(
        enabled=flag("enabled"), sup=flag("sup"), energy=flag("energy"),
        chain=flag("chain"), mode=flag("mode"),
        sup_tolerance=tol("sup-tolerance"),
        energy_tolerance=tol("energy-tolerance"),
        chain_tolerance=tol("chain-tolerance"),
        mode_tolerance=tol("mode-tolerance"),
        gronwall_absolute=tol("gronwall-absolute"),
        gronwall_relative=tol("gronwall-relative"))
    sec.reject_unused("unknown key")
    return spec


def _read_output(sec: _Section) -> OutputSpec:
    directory = sec.get("directory") or "output"
    snapshots = None
    raw_s = sec.get("snapshots")
    if raw_s is not None:
        snapshots = _parse_float_list(sec, "snapshots", raw_s)
        if any(t < 0.0 for t in snapshots):
            raise ConfigError(sec.name, "snapshots",
                              "snapshot times must be nonnegative")
    figures = True
    raw_f = sec.get("figures")
    if raw_f is not None:
        figures = _parse_bool(sec, "figures", raw_f)
    sec.reject_unused("unknown key")
    return OutputSpec(directory, snapshots, figures)


def _validate_buildable(sc: ScenarioConfig) -> None:
    # constructors see every value at parse time, so a loaded scenario
    # cannot fail later for grammar reasons
    build_evolution(sc)
    if sc.comparison_configured:
        build_comparison(sc)


# -- serialization ----------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def serialize_scenario(sc: ScenarioConfig) -> str:
    """Render the canonical explicit form; every resolved value appears."""
    doc = []

    def section(name, pairs):
        doc.append(f"[{name}]")
        for key, value in pairs:
            if value is not None:
                doc.append(f"{key} = {_fmt(value)}")
        doc.append("")

    section("domain", [("cells", sc.cells), ("extents", sc.extents)])
    section("time", [("horizon", sc.horizon), ("steps", sc.steps)])
    section("graph", [("kind", sc.graph.kind),
                      ("exponent", sc.graph.exponent)])
    if sc.flux.kind == "power":
        section("flux", [("kind", "power"), ("p", sc.flux.p),
                         ("epsilon", sc.flux.epsilon)])
    else:
        section("flux", [("kind", "sum"), ("exponents", sc.flux.exponents),
                         ("weights", sc.flux.weights or None),
                         ("epsilon", sc.flux.epsilon)])
    src = sc.source
    pairs = [("kind", src.kind)]
    if src.kind != "zero":
        pairs.append(("coefficient", src.coefficient))
    pairs += [("exponent", src.exponent),
              ("frequency", src.frequency if src.kind == "sine" else None),
              ("truncation", src.truncation)]
    section("source", pairs)
    def forcing_section(name, spec):
        section(name, [("kind", "separable"), ("space", spec.space),
                       ("time", spec.time), ("amplitude", spec.amplitude),
                       ("rate", spec.rate if spec.time != "constant"
                        else None)])

    if sc.forcing is not None:
        forcing_section("forcing", sc.forcing)
    if sc.forcing2_given:
        if sc.forcing2 is None:
            section("forcing2", [("kind", "none")])
        else:
            forcing_section("forcing2", sc.forcing2)
    for name, spec in (("initial", sc.initial), ("initial2", sc.initial2)):
        if spec is not None:
            section(name, [
                ("preset", spec.preset),
                ("amplitude", spec.amplitude
                 if spec.preset in ("eigenmode", "bump") else None),
                ("value", spec.value),
                ("samples", spec.samples or None)])
    section("mode", [("kind", sc.mode)])
    mon = sc.monitors
    section("monitors", [
        ("enabled", mon.enabled), ("sup", mon.sup), ("energy", mon.energy),
        ("chain", mon.chain), ("mode", mon.mode),
        ("sup-tolerance", mon.sup_tolerance),
        ("energy-tolerance", mon.energy_tolerance),
        ("chain-tolerance", mon.chain_tolerance),
        ("mode-tolerance", mon.mode_tolerance),
        ("gronwall-absolute", mon.gronwall_absolute),
        ("gronwall-relative", mon.gronwall_relative)])
    section("output", [("directory", sc.output.directory),
                       ("snapshots", sc.output.snapshots),
                       ("figures", sc.output.figures)])
    return "\n".join(doc)


# -- builders ---------------------------------------------------------------------


def build_grid(sc: ScenarioConfig) -> Grid:
    return Grid(sc.cells, sc.extents)


def _build_graph(sc: ScenarioConfig):
    params = {}
    if sc.graph.exponent is not None:
        params["q"] = sc.graph.exponent
    try:
        return construct_graph(sc.graph.kind, **params)
    except GraphSpecError as err:
        raise ConfigError("graph", "kind", str(err))


def _build_flux(sc: ScenarioConfig):
    try:
        if sc.flux.kind == "power":
            return p_laplacian(sc.flux.p, epsilon=sc.flux.epsilon)
        return sum_p_laplacian(sc.flux.exponents,
                               weights=sc.flux.weights or None,
                               epsilon=sc.flux.epsilon)
    except GraphSpecError as err:
        raise ConfigError("flux", "kind", str(err))


def _source_law(spec: SourceSpec) -> SourceLaw:
    if spec.kind == "zero":
        return zero_source()
    if spec.kind == "linear":
        return linear_source(spec.coefficient)
    if spec.kind == "power":
        return power_source(spec.exponent, spec.coefficient)
    if spec.kind == "sine":
        return sine_source(spec.coefficient, spec.frequency or 1.0)
    return quadratic_source(spec.coefficient)


def _build_initial(spec: InitialSpec, grid: Grid) -> GridField:
    if spec.preset == "eigenmode":
        return first_eigenmode(grid) * spec.amplitude
    if spec.preset == "bump":
        def bump(*coords):
            out = 1.0
            for axis, x in enumerate(coords):
                out = out * np.sin(np.pi * x / grid.extents[axis]) ** 2
            return spec.amplitude * out
        return GridField.from_function(grid, bump)
    if spec.preset == "constant":
        return GridField.full(grid, spec.value)
    values = np.asarray(spec.samples, dtype=float).reshape(grid.cells)
    return GridField(grid, values)


def _build_forcing(spec: Optional[ForcingSpec],
                   extents: tuple) -> Optional[Callable]:
    if spec is None:
        return None

    def space_profile(coords):
        if spec.space == "constant":
            return np.ones(np.broadcast(*coords).shape) if len(coords) > 1 \
                else np.ones_like(coords[0])
        out = 1.0
        for axis, x in enumerate(coords):
            phase = np.pi * x / extents[axis]
            out = out * (np.sin(phase) if spec.space == "eigenmode"
                         else np.sin(phase) ** 2)
        return out

    def time_profile(t):
        if spec.time == "constant":
            return 1.0
        if spec.time == "cos":
            return math.cos(spec.rate * t)
        if spec.time == "sin":
            return math.sin(spec.rate * t)
        return math.exp(-spec.rate * t)

    def forcing(t, *coords):
        return spec.amplitude * time_profile(t) * space_profile(coords)

    return forcing


def build_evolution(sc: ScenarioConfig) -> EvolutionConfig:
    """The run the document describes, with every library validation applied."""
    grid = build_grid(sc)
    graph = _build_graph(sc)
    initial = _build_initial(sc.initial, grid)
    if not graph.contains(initial.values):
        raise ConfigError("initial", None,
                          "initial datum leaves the open domain of the graph")
    try:
        return EvolutionConfig(
            graph, _build_flux(sc), _source_law(sc.source),
            _build_forcing(sc.forcing, sc.extents), initial,
            sc.horizon, sc.steps, mode=sc.mode,
            truncation_level=sc.source.truncation)
    except ConfigError:
        raise
    except ConfigurationError as err:
        raise ConfigError("mode", "kind", str(err))


def build_comparison(sc: ScenarioConfig) -> ComparisonRun:
    """The comparison pair, when a second initial datum is configured.

    The second member shares [forcing] unless a [forcing2] section appears;
    an explicit ``kind = none`` there runs it unforced.
    """
    if not sc.comparison_configured:
        raise ConfigError("initial2", None,
                          "comparison needs a second initial datum")
    grid = build_grid(sc)
    graph = _build_graph(sc)
    second = _build_initial(sc.initial2, grid)
    if not graph.contains(second.values):
        raise ConfigError("initial2", None,
                          "initial datum leaves the open domain of the graph")
    try:
        return ComparisonRun(
            graph, _build_flux(sc), _source_law(sc.source),
            _build_initial(sc.initial, grid), second,
            _build_forcing(sc.forcing, sc.extents),
            _build_forcing(sc.effective_forcing2, sc.extents),
            sc.horizon, sc.steps,
            truncation_level=sc.source.truncation)
    except ConfigError:
        raise
    except ConfigurationError as err:
        raise ConfigError("flux", "kind", str(err))


def monitor_tolerances(sc: ScenarioConfig) -> dict:
    mon = sc.monitors
    overrides = {}
    for name, value in (("sup", mon.sup_tolerance),
                        ("energy", mon.energy_tolerance),
                        ("chain", mon.chain_tolerance),
                        ("mode", mon.mode_tolerance)):
        if value is not None:
            overrides[name] = value
    return overrides


# -- presets ----------------------------------------------------------------------

_PRESETS = {
    "heat": (
        "linear diffusion on the eigenmode; the analytic-amplitude case",
        """\
[domain]
cells = 64

[time]
horizon = 0.1
steps = 100

[graph]
kind = identity

[flux]
kind = power
p = 2

[initial]
preset = eigenmode
amplitude = 1

[mode]
kind = inverse-lipschitz

[output]
directory = heat
"""),
    "porous-medium": (
        "slow diffusion, steep transform near zero",
        """\
[domain]
cells = 64

[time]
horizon = 0.1
steps = 100

[graph]
kind = power
exponent = 1.5

[flux]
kind = power
p = 2

[initial]
preset = bump
amplitude = 1

[mode]
kind = inverse-lipschitz

[output]
directory = porous-medium
"""),
    "fast-diffusion": (
        "singular flux with a superlinear transform; goes extinct",
        """\
[domain]
cells = 64

[time]
horizon = 0.004
steps = 40

[graph]
kind = power
exponent = 3

[flux]
kind = power
p = 1.5

[initial]
preset = eigenmode
amplitude = 0.05

[mode]
kind = lipschitz

[output]
directory = fast-diffusion
"""),
    "reaction-power": (
        "doubly nonlinear with a monotone power reaction",
        """\
[domain]
cells = 48

[time]
horizon = 0.1
steps = 100

[graph]
kind = power
exponent = 3

[flux]
kind = power
p = 3

[source]
kind = power
exponent = 3
coefficient = 1

[initial]
preset = bump
amplitude = 1

[mode]
kind = monotone-source

[output]
directory = reaction-power
"""),
    "comparison-bumps": (
        "ordered pair under a linear reaction; distance envelopes",
        """\
[domain]
cells = 64

[time]
horizon = 0.1
steps = 50

[graph]
kind = power
exponent = 3

[flux]
kind = power
p = 2

[source]
kind = linear
coefficient = 1

[initial]
preset = bump
amplitude = 0.7

[initial2]
preset = bump
amplitude = 1

[mode]
kind = inverse-lipschitz

[output]
directory = comparison-bumps
"""),
    "heat-2d": (
        "two-dimensional linear diffusion on the product eigenmode",
        """\
[domain]
cells = 24, 24

[time]
horizon = 0.05
steps = 50

[graph]
kind = identity

[flux]
kind = power
p = 2

[initial]
preset = eigenmode
amplitude = 1

[mode]
kind = inverse-lipschitz

[output]
directory = heat-2d
"""),
}


def preset_names() -> tuple:
    return tuple(_PRESETS)


def preset_description(name: str) -> str:
    if name not in _PRESETS:
        raise ConfigError("preset", name, "unknown preset")
    return _PRESETS[name][0]


def preset_text(name: str) -> str:
    """The scenario document for a named preset, in canonical form."""
    if name not in _PRESETS:
        raise ConfigError("preset", name, "unknown preset")
    return serialize_scenario(parse_scenario(_PRESETS[name][1]))
