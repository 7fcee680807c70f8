"""Scenario configuration files.

A config is sectioned ``key = value`` text (``#`` starts a comment)::

    [scenario]
    type = uniform_collimation_scan
    seed = 42
    particles = 100000

    [beam]
    depth_j = -2e-28
    waist_um = 30

    [cloud]
    temperature_uk = 0.2
    radius_um = 0.1
    velocity_z = 0.3

    [sweep]
    variable = lo_over_f
    min = 0.5
    max = 50
    steps = 41
    scale = log

Quantities may be given in convenience units; the suffix names the unit and
values are converted to SI once, here. Problems are reported with the line
they come from.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .units import G_ACCEL, SPECIES_PRESETS, AtomSpecies, GaussianBeam

SCENARIOS = (
    "uniform_collimation_scan",
    "gravity_rabi_scan",
    "focusing_snapshot",
    "fwhm_vs_time",
    "collimation_vs_temperature",
    "lens_law_check",
    "gravity_lens_law_check",
)

GRAVITY_SCENARIOS = {"gravity_rabi_scan", "focusing_snapshot", "fwhm_vs_time",
                     "collimation_vs_temperature", "gravity_lens_law_check"}

# sweep variable -> (factor to SI, scenarios that accept it)
SWEEP_VARIABLES = {
    "lo_over_f": (1.0, {"uniform_collimation_scan", "lens_law_check"}),
    "object_distance_mm": (1e-3, {"uniform_collimation_scan", "lens_law_check"}),
    "rabi_mhz": (2 * math.pi * 1e6, {"gravity_rabi_scan"}),
    "temperature_uk": (1e-6, {"focusing_snapshot", "collimation_vs_temperature"}),
    "temperature_nk": (1e-9, {"focusing_snapshot", "collimation_vs_temperature"}),
    "tf_over_ti": (1.0, {"fwhm_vs_time"}),
    "height_mm": (1e-3, {"gravity_lens_law_check"}),
}

# scenarios that cannot run without a sweep
NEEDS_SWEEP = set(SCENARIOS)

# quantity -> {key: factor to SI}
_UNITS = {
    ("beam", "depth"): {"depth_j": 1.0},
    ("beam", "rabi"): {"rabi_mhz": 2 * math.pi * 1e6, "rabi_rad_s": 1.0},
    ("beam", "detuning"): {"detuning_ghz": 2 * math.pi * 1e9, "detuning_rad_s": 1.0},
    ("beam", "waist"): {"waist_um": 1e-6, "waist_m": 1.0},
    ("beam", "center_y"): {"center_y_um": 1e-6, "center_y_m": 1.0},
    ("beam", "center_z"): {"center_z_um": 1e-6, "center_z_m": 1.0},
    ("cloud", "temperature"): {"temperature_uk": 1e-6, "temperature_nk": 1e-9, "temperature_k": 1.0},
    ("cloud", "radius"): {"radius_um": 1e-6, "radius_m": 1.0},
    ("cloud", "velocity_z"): {"velocity_z": 1.0},
    ("cloud", "height"): {"height_mm": 1e-3, "height_m": 1.0},
    ("cloud", "t_o"): {"t_o_ms": 1e-3, "t_o_s": 1.0},
    ("cloud", "t_f"): {"t_f_ms": 1e-3, "t_f_s": 1.0},
    ("species", "mass"): {"mass_kg": 1.0},
    ("species", "linewidth"): {"linewidth_mhz": 2 * math.pi * 1e6},
    ("species", "transition_freq"): {"transition_thz": 2 * math.pi * 1e12},
}

_ANALYSIS_DEFAULTS = {
    "traced_points": 5,
    "traced_waists_um": None,
    "rays": 20,
    "ray_max_h": 0.05,
    "bins": 400,
    "profile_span": 4.0,
    "expect_min": None,
    "agreement": 0.04,
    "vertical_tolerance": 0.01,
    "lens_tolerance": 0.02,
    "height_tolerance": 0.03,
    "vertex_tolerance": 0.1,
    "min_r2": 0.99,
}

_KNOWN = {
    "scenario": {"type", "seed", "particles", "gravity", "output"},
    "species": {"preset", "name"} | {k for (s, _), d in _UNITS.items() if s == "species" for k in d},
    "beam": {k for (s, _), d in _UNITS.items() if s == "beam" for k in d} | {"waists_um"},
    "cloud": {k for (s, _), d in _UNITS.items() if s == "cloud" for k in d},
    "sweep": {"variable", "min", "max", "steps", "scale", "values"},
    "integrator": {"steps_per_waist", "cutoff_radii", "max_transits", "launch_radii"},
    "analysis": set(_ANALYSIS_DEFAULTS),
}

REGIME_RATIO = 10.0


class ConfigError(ValueError):
    """Invalid configuration; ``diagnostics`` lists every problem found."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" or "warning"
    message: str
    line: int | None = None
    source: str | None = None

    def __str__(self):
        where = self.source or "<config>"
        if self.line is not None:
            where = f"{where}:{self.line}"
        return f"{where}: {self.level}: {self.message}"


@dataclass(frozen=True)
class Sweep:
    variable: str
    values: tuple[float, ...]  # in the variable's own (config) units
    scale: str = "linear"

    @property
    def si_values(self) -> np.ndarray:
        return np.asarray(self.values) * SWEEP_VARIABLES[self.variable][0]


@dataclass(frozen=True)
class IntegratorOverrides:
    steps_per_waist: float = 200.0
    cutoff_radii: float = 6.0
    max_transits: float = 200.0
    launch_radii: float = 8.0


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    species: AtomSpecies
    waists: tuple[float, ...]
    depth: float | None = None
    rabi: float | None = None
    detuning: float | None = None
    center_y: float = 0.0
    center_z: float = 0.0
    temperature: float | None = None
    radius: float = 0.0
    velocity_z: float | None = None
    height: float | None = None
    t_f: float | None = None
    sweep: Sweep | None = None
    gravity: bool = False
    seed: int = 0
    particles: int = 100_000
    integrator: IntegratorOverrides = field(default_factory=IntegratorOverrides)
    analysis: dict = field(default_factory=dict)
    output_path: str | None = None
    source: str | None = None
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def waist(self) -> float:
        return self.waists[0]

    @property
    def t_o(self) -> float | None:
        """Fall time from rest to the beam centre."""
        return None if self.height is None else math.sqrt(2 * self.height / G_ACCEL)

    def beam(self, *, waist: float | None = None, rabi: float | None = None) -> GaussianBeam:
        w = self.waist if waist is None else waist
        r = self.rabi if rabi is None else rabi
        if self.depth is not None and rabi is None:
            return GaussianBeam(self.depth, w, self.center_y, self.center_z)
        return GaussianBeam.from_rabi(self.species, r, self.detuning, w, self.center_y, self.center_z)

    def option(self, key):
        return self.analysis.get(key, _ANALYSIS_DEFAULTS.get(key))

    def with_overrides(self, *, seed=None, particles=None, output=None) -> "ScenarioConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if particles is not None:
            changes["particles"] = int(particles)
        if output is not None:
            changes["output_path"] = str(output)
        return replace(self, **changes)


# -- parsing

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^([^\s#;=:][^=:]*?)\s*[=:]")


def _line_map(text: str) -> dict:
    lines = {}
    section = None
    for n, raw in enumerate(text.splitlines(), 1):
        m = _SECTION_RE.match(raw)
        if m:
            section = m.group(1).strip().lower()
            lines.setdefault((section, None), n)
            continue
        m = _KEY_RE.match(raw)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), n)
    return lines


class _Reader:
    def __init__(self, parser, lines, source):
        self.p = parser
        self.lines = lines
        self.source = source
        self.diags: list[Diagnostic] = []

    def error(self, msg, section=None, key=None):
        line = self.lines.get((section, key)) or self.lines.get((section, None))
        self.diags.append(Diagnostic("error", msg, line, self.source))

    def raw(self, section, key):
        if not self.p.has_section(section):
            return None
        return self.p[section].get(key)

    def number(self, section, key, *, integer=False):
        s = self.raw(section, key)
        if s is None:
            return None
        try:
            v = int(s) if integer else float(s)
        except ValueError:
            kind = "an integer" if integer else "a number"
            self.error(f"[{section}] {key} must be {kind}, got {s!r}", section, key)
            return None
        if not integer and not math.isfinite(v):
            self.error(f"[{section}] {key} must be finite", section, key)
            return None
        return v

    def numbers(self, section, key):
        s = self.raw(section, key)
        if s is None:
            return None
        try:
            vals = tuple(float(x) for x in s.replace(",", " ").split())
        except ValueError:
            self.error(f"[{section}] {key} must be a list of numbers, got {s!r}", section, key)
            return None
        if not vals:
            self.error(f"[{section}] {key} is empty", section, key)
            return None
        return vals

    def given_key(self, section, name):
        """Which unit-suffixed spelling of ``name`` the file used, if any."""
        for k in _UNITS[(section, name)]:
            if self.raw(section, k) is not None:
                return k
        return None

    def quantity(self, section, name):
        found = [(k, f) for k, f in _UNITS[(section, name)].items() if self.raw(section, k) is not None]
        if len(found) > 1:
            keys = ", ".join(k for k, _ in found)
            self.error(f"[{section}] {name} given more than once ({keys})", section, found[1][0])
            return None
        if not found:
            return None
        k, factor = found[0]
        v = self.number(section, k)
        return None if v is None else v * factor

    def boolean(self, section, key):
        s = self.raw(section, key)
        if s is None:
            return None
        try:
            return self.p[section].getboolean(key)
        except ValueError:
            self.error(f"[{section}] {key} must be true or false, got {s!r}", section, key)
            return None


def parse_config(text: str, source: str | None = None) -> ScenarioConfig:
    """Parse and check a config; raise :class:`ConfigError` listing every error."""
    cfg, diags = _parse(text, source)
    errors = [d for d in diags if d.level == "error"]
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def _parse(text: str, source: str | None):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       comment_prefixes=("#", ";"), default_section="__none__")
    try:
        parser.read_string(text, source or "<config>")
    except configparser.Error as exc:
        if isinstance(exc, configparser.MissingSectionHeaderError):
            return None, [Diagnostic("error", "syntax: key outside any [section]", exc.lineno, source)]
        if isinstance(exc, configparser.ParsingError):
            return None, [Diagnostic("error", f"syntax: cannot parse {bad}", line, source)
                          for line, bad in exc.errors]
        line = getattr(exc, "lineno", None)
        msg = exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc)
        msg = re.sub(r"^While reading from .*?\]: ", "", msg)
        return None, [Diagnostic("error", f"syntax: {msg}", line, source)]
    r = _Reader(parser, _line_map(text), source)

    for section in parser.sections():
        if section not in _KNOWN:
            r.error(f"unknown section [{section}]", section)
            continue
        for key in parser[section]:
            if key not in _KNOWN[section]:
                r.error(f"unknown key {key!r} in [{section}]", section, key)

    scenario = r.raw("scenario", "type")
    if scenario is None:
        r.error("[scenario] type is required", "scenario")
    elif scenario not in SCENARIOS:
        r.error(f"unknown scenario type {scenario!r}; expected one of {', '.join(SCENARIOS)}",
                "scenario", "type")
        scenario = None

    seed = r.number("scenario", "seed", integer=True)
    if seed is not None and not 0 <= seed < 2**64:
        r.error("[scenario] seed must be an unsigned 64-bit integer", "scenario", "seed")
    particles = r.number("scenario", "particles", integer=True)
    if particles is not None and particles < 2:
        r.error("[scenario] particles must be at least 2", "scenario", "particles")
    gravity = r.boolean("scenario", "gravity")
    if scenario is not None:
        expected = scenario in GRAVITY_SCENARIOS
        if gravity is not None and gravity != expected:
            r.error(f"scenario {scenario} runs with gravity={'true' if expected else 'false'}",
                    "scenario", "gravity")
        gravity = expected

    species = _species(r)

    depth = r.quantity("beam", "depth")
    rabi = r.quantity("beam", "rabi")
    detuning = r.quantity("beam", "detuning")
    waist = r.quantity("beam", "waist")
    waists = r.numbers("beam", "waists_um")
    if waists is not None:
        waists = tuple(w * 1e-6 for w in waists)
        if waist is not None:
            r.error("[beam] give either waist or waists_um, not both", "beam", "waists_um")
    elif waist is not None:
        waists = (waist,)
    if waists is None:
        r.error("[beam] a waist is required", "beam")
        waists = ()
    elif any(not w > 0 for w in waists):
        key = "waists_um" if len(waists) > 1 else r.given_key("beam", "waist")
        r.error("[beam] waists must be positive", "beam", key)

    cloud = {name: r.quantity("cloud", name) for (s, name) in _UNITS if s == "cloud"}
    height = cloud["height"]
    if cloud["t_o"] is not None:
        if height is not None:
            r.error("[cloud] give either a height or t_o, not both", "cloud", "t_o_ms")
        elif cloud["t_o"] > 0:
            height = 0.5 * G_ACCEL * cloud["t_o"] ** 2
        else:
            r.error("[cloud] t_o must be positive", "cloud", "t_o_ms")
    if cloud["temperature"] is not None and cloud["temperature"] < 0:
        r.error("[cloud] temperature must be non-negative", "cloud",
                r.given_key("cloud", "temperature"))
    if cloud["radius"] is not None and cloud["radius"] < 0:
        r.error("[cloud] radius must be non-negative", "cloud", r.given_key("cloud", "radius"))

    sweep = _sweep(r, scenario)

    integ = {}
    for key in _KNOWN["integrator"]:
        v = r.number("integrator", key)
        if v is not None:
            integ[key] = v
    if integ.get("cutoff_radii", 6.0) < 3:
        r.error("[integrator] cutoff_radii must be at least 3", "integrator", "cutoff_radii")
    for key in ("steps_per_waist", "max_transits", "launch_radii"):
        if key in integ and not integ[key] > 0:
            r.error(f"[integrator] {key} must be positive", "integrator", key)

    analysis = {}
    for key in _KNOWN["analysis"]:
        if r.raw("analysis", key) is None:
            continue
        if key in ("expect_min", "traced_waists_um"):
            v = r.numbers("analysis", key)
            if key == "expect_min" and v is not None and (len(v) != 2 or v[0] > v[1]):
                r.error("[analysis] expect_min needs two ordered bounds", "analysis", key)
        else:
            integer = key in ("traced_points", "rays", "bins")
            v = r.number("analysis", key, integer=integer)
        if v is not None:
            analysis[key] = v
    if analysis.get("bins", 400) < 8:
        r.error("[analysis] bins must be at least 8", "analysis", "bins")
    if analysis.get("rays", 20) < 1:
        r.error("[analysis] rays must be at least 1", "analysis", "rays")

    if scenario is not None:
        _required(r, scenario, depth, rabi, detuning, cloud, height)

    if any(d.level == "error" for d in r.diags):
        return None, r.diags
    cfg = ScenarioConfig(
        scenario=scenario, species=species, waists=waists, depth=depth, rabi=rabi,
        detuning=detuning, center_y=cloud_default(r.quantity("beam", "center_y")),
        center_z=cloud_default(r.quantity("beam", "center_z")),
        temperature=cloud["temperature"], radius=cloud_default(cloud["radius"]),
        velocity_z=cloud["velocity_z"], height=height, t_f=cloud["t_f"], sweep=sweep,
        gravity=gravity, seed=int(seed or 0), particles=int(particles or 100_000),
        integrator=IntegratorOverrides(**integ), analysis=analysis,
        output_path=r.raw("scenario", "output"), source=source, lines=r.lines)
    return cfg, r.diags


def cloud_default(v):
    return 0.0 if v is None else v


def _species(r: _Reader) -> AtomSpecies:
    name = (r.raw("species", "preset") or "rb87").lower()
    if name not in SPECIES_PRESETS:
        r.error(f"unknown species preset {name!r}", "species", "preset")
        name = "rb87"
    base = SPECIES_PRESETS[name]
    over = {}
    for q in ("mass", "linewidth", "transition_freq"):
        v = r.quantity("species", q)
        if v is not None:
            over[q] = v
    if r.raw("species", "name"):
        over["name"] = r.raw("species", "name")
    if not over:
        return base
    try:
        return replace(base, **over)
    except ValueError as exc:
        r.error(str(exc), "species")
        return base


def _sweep(r: _Reader, scenario):
    if not r.p.has_section("sweep"):
        if scenario in NEEDS_SWEEP:
            r.error(f"scenario {scenario} needs a [sweep] section", "scenario", "type")
        return None
    var = r.raw("sweep", "variable")
    if var is None:
        r.error("[sweep] variable is required", "sweep")
        return None
    if var not in SWEEP_VARIABLES:
        r.error(f"unknown sweep variable {var!r}", "sweep", "variable")
        return None
    if scenario is not None and scenario not in SWEEP_VARIABLES[var][1]:
        r.error(f"sweep variable {var!r} does not exist in scenario {scenario}", "sweep", "variable")
        return None
    scale = (r.raw("sweep", "scale") or "linear").lower()
    if scale not in ("linear", "log"):
        r.error(f"[sweep] scale must be linear or log, got {scale!r}", "sweep", "scale")
        return None
    values = r.numbers("sweep", "values")
    if values is not None:
        if any(r.raw("sweep", k) is not None for k in ("min", "max", "steps")):
            r.error("[sweep] give either values or min/max/steps", "sweep", "values")
            return None
        return Sweep(var, values, scale)
    lo = r.number("sweep", "min")
    hi = r.number("sweep", "max")
    steps = r.number("sweep", "steps", integer=True)
    missing = [k for k, v in (("min", lo), ("max", hi), ("steps", steps)) if v is None]
    if missing:
        r.error(f"[sweep] missing {', '.join(missing)}", "sweep")
        return None
    if lo > hi:
        r.error(f"[sweep] bounds out of order: min {lo} > max {hi}", "sweep", "max")
        return None
    if steps < 2:
        r.error("[sweep] steps must be at least 2", "sweep", "steps")
        return None
    if scale == "log":
        if not lo > 0:
            r.error("[sweep] log scale needs min > 0", "sweep", "min")
            return None
        vals = np.geomspace(lo, hi, steps)
        vals[0], vals[-1] = lo, hi
    else:
        vals = np.linspace(lo, hi, steps)
    return Sweep(var, tuple(float(v) for v in vals), scale)


def _required(r: _Reader, scenario, depth, rabi, detuning, cloud, height):
    swept = None
    if r.p.has_section("sweep"):
        swept = r.raw("sweep", "variable")
    if depth is None:
        if scenario == "gravity_rabi_scan":
            if detuning is None:
                r.error("[beam] detuning is required for a Rabi scan", "beam")
            if rabi is not None:
                r.error("[beam] rabi is set by the sweep in gravity_rabi_scan", "beam", "rabi_mhz")
        elif rabi is None or detuning is None:
            r.error("[beam] give depth_j, or rabi and detuning", "beam")
        elif detuning == 0:
            r.error("[beam] detuning must be non-zero", "beam", "detuning_ghz")
    elif rabi is not None or detuning is not None:
        r.error("[beam] give depth_j or rabi/detuning, not both", "beam", "depth_j")
    elif scenario == "gravity_rabi_scan":
        r.error("[beam] gravity_rabi_scan sweeps the Rabi frequency; give detuning, not depth",
                "beam", "depth_j")

    needs_t = scenario not in ("lens_law_check", "gravity_lens_law_check")
    if needs_t and cloud["temperature"] is None and swept not in ("temperature_uk", "temperature_nk"):
        r.error("[cloud] temperature is required", "cloud")
    if scenario in GRAVITY_SCENARIOS:
        if height is None and swept != "height_mm":
            r.error("[cloud] height_mm or t_o_ms is required with gravity", "cloud")
        elif height is not None and not height > 0:
            r.error("[cloud] height must be positive", "cloud",
                    r.given_key("cloud", "height") or r.given_key("cloud", "t_o"))
        if cloud["velocity_z"] is not None:
            r.error("[cloud] velocity_z is fixed by the drop height in gravity scenarios",
                    "cloud", "velocity_z")
    else:
        v = cloud["velocity_z"]
        if v is None:
            r.error("[cloud] velocity_z is required without gravity", "cloud")
        elif not v > 0:
            r.error("[cloud] velocity_z must be positive", "cloud", "velocity_z")
    if scenario in ("focusing_snapshot", "collimation_vs_temperature"):
        if cloud["t_f"] is None:
            r.error("[cloud] t_f_ms is required", "cloud")
        elif not cloud["t_f"] > 0:
            r.error("[cloud] t_f must be positive", "cloud", "t_f_ms")


# -- semantic validation

def validate(cfg_or_text, source: str | None = None) -> list[Diagnostic]:
    """All problems with a config, errors and regime warnings, without running it."""
    if isinstance(cfg_or_text, ScenarioConfig):
        cfg, diags = cfg_or_text, []
    else:
        cfg, diags = _parse(cfg_or_text, source)
        if cfg is None:
            return diags
    return diags + _regime(cfg)


def _regime(cfg: ScenarioConfig) -> list[Diagnostic]:
    out = []

    def warn(msg, section, key=None):
        line = cfg.lines.get((section, key)) or cfg.lines.get((section, None))
        out.append(Diagnostic("warning", msg, line, cfg.source))

    depths = _depth_extremes(cfg)
    if any(d > 0 for d in depths):
        warn("repulsive beam defocuses: depth > 0 (blue detuning) cannot focus or collimate",
             "beam", "depth_j" if cfg.depth is not None else "detuning_ghz")
    U = max((abs(d) for d in depths), default=0.0)
    for label, E0 in _kinetic_energies(cfg):
        if U > 0 and E0 < REGIME_RATIO * U:
            warn(f"impulse regime: E0 = {E0:.3g} J is only {E0 / U:.2g} x |U0| ({label}); "
                 f"the thin-lens formulas assume E0 >> |U0| (warning below {REGIME_RATIO:g} x)",
                 "cloud")
    return out


def _depth_extremes(cfg: ScenarioConfig) -> list[float]:
    if cfg.depth is not None:
        return [cfg.depth]
    if cfg.scenario == "gravity_rabi_scan" and cfg.sweep is not None:
        rabis = [float(np.max(np.abs(cfg.sweep.si_values)))]
    else:
        rabis = [cfg.rabi]
    return [cfg.beam(rabi=r).depth for r in rabis]


def _kinetic_energies(cfg: ScenarioConfig):
    m = cfg.species.mass
    if not cfg.gravity:
        yield "v_z0", 0.5 * m * cfg.velocity_z**2
        return
    if cfg.sweep is not None and cfg.sweep.variable == "height_mm":
        H = float(np.min(cfg.sweep.si_values))
        yield f"H = {H * 1e3:g} mm", m * G_ACCEL * H
    else:
        yield f"H = {cfg.height * 1e3:.3g} mm", m * G_ACCEL * cfg.height


# -- bundled presets

def preset_names() -> list[str]:
    from importlib import resources
    files = resources.files("atomlens").joinpath("presets").iterdir()
    return sorted(p.name[:-4] for p in files if p.name.endswith(".ini"))


def preset_text(name: str) -> str:
    from importlib import resources
    if name not in preset_names():
        raise KeyError(f"no preset named {name!r}; available: {', '.join(preset_names())}")
    return resources.files("atomlens").joinpath("presets", f"{name}.ini").read_text()


def load_preset(name: str) -> ScenarioConfig:
    return parse_config(preset_text(name), f"preset:{name}")
