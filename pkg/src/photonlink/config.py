"""Scenario configuration files.

A config is a YAML mapping with sections ``scenario``, ``device``, ``pulses``,
``output_dir`` and ``seed``. Every dimensioned key carries a unit suffix;
frequencies given in ``_hz`` are converted to angular rates on load. Errors
carry the 1-based line of the offending key.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ConfigError

TWO_PI = 2 * np.pi

# unit kind -> {suffix: factor to SI / rad s^-1}
UNITS = {
    "rate": {"_hz": TWO_PI, "_rad_s": 1.0},
    "time": {"_s": 1.0},
    "length": {"_m": 1.0},
    "capacitance": {"_f": 1.0},
    "inductance": {"_h": 1.0},
    "cap_per_length": {"_f_per_m": 1.0},
    "ind_per_length": {"_h_per_m": 1.0},
    "resistance": {"_ohm": 1.0},
    "angle": {"_rad": 1.0},
}

SCENARIOS = ("transfer", "modes", "emit_recapture", "noon", "tomography", "circuit", "optimize")
STATE_NAMES = ("qubit_e", "fock1", "fock2", "sup01", "sup02")


@dataclass(frozen=True)
class Field:
    kind: str  # a UNITS key, or int / float / bool / str / str_list / float_list
    default: object = None
    choices: tuple | None = None


def _f(kind, default=None, choices=None):
    return Field(kind, default, choices)


INF = float("inf")

NODE = {
    "g_qr": _f("rate", TWO_PI * 6.8e6),
    "qubit_t1": _f("time", INF),
    "qubit_t2": _f("time", INF),
    "resonator_t1": _f("time", INF),
    "resonator_t2": _f("time", INF),
    "qubit_levels": _f("int", 3),
    "resonator_truncation": _f("int", 5),
    "ef_element": _f("float", float(np.sqrt(2))),
}

DEVICE = {
    "node1": NODE,
    "node2": NODE,
    "waveguide": {
        "length": _f("length", 2.0),
        "epsilon_r": _f("float", 11.4),
        "g_rw": _f("rate", TWO_PI * 1.5e6),
        "n_modes": _f("int", 5),
        "mode_t1": _f("time", INF),
    },
    "resonator": {
        "length": _f("length", 20.5e-3),
        "capacitance_per_length": _f("cap_per_length", 173e-12),
        "inductance_per_length": _f("ind_per_length", 402e-9),
        "end_capacitance": _f("capacitance", 1e-14),
        "squid_inductance": _f("inductance", 0.3e-9),
        "mode_index": _f("int", 2),
    },
    "coupler": {
        "junction_inductance": _f("inductance", 0.6e-9),
        "ground_inductance": _f("inductance", 0.2e-9),
        "stray_inductance": _f("inductance", 0.1e-9),
        "beta": _f("float", 0.33),
        "load_impedance": _f("resistance", 50.0),
        "topology": _f("str", "grounded_stray", ("grounded_stray", "series_stray")),
    },
}

PULSES = {
    "kappa_c": _f("rate", 5e8),
    "kappa_m": _f("rate", 0.6e9),
    "t0": _f("time", 2.62e-9),
    "before": _f("time", 20e-9),
    "after": _f("time", 20e-9),
    "dt": _f("time", 0.1e-9),
    "filter_sigma": _f("time", 3e-9),
    "line_phase": _f("angle", 0.0),
    "line_loss": _f("float", 0.0),
}

SCENARIO_FIELDS = {
    "transfer": {
        "states": _f("str_list", ["fock1"]),
        "direction": _f("int", 12, (12, 21)),
        "fit_phase": _f("bool", True),
        "simultaneous": _f("bool", False),
        "node1_state": _f("str", "fock2", STATE_NAMES),
        "node2_state": _f("str", "fock1", STATE_NAMES),
    },
    "modes": {
        "detuning_min": _f("rate", -TWO_PI * 40e6),
        "detuning_max": _f("rate", TWO_PI * 40e6),
        "detuning_points": _f("int", 41),
        "hold_max": _f("time", 1e-6),
        "hold_points": _f("int", 51),
        "photons": _f("int", 1),
    },
    "emit_recapture": {
        "detuning_min": _f("rate", -TWO_PI * 20e6),
        "detuning_max": _f("rate", TWO_PI * 20e6),
        "detuning_points": _f("int", 41),
        "delay_min": _f("time", 0.0),
        "delay_max": _f("time", 200e-9),
        "delay_points": _f("int", 41),
        "explicit": _f("bool", False),
    },
    "noon": {
        "n": _f("int", 1, (1, 2)),
        "noise": _f("float", 0.02),
        "repeats": _f("int", 5),
        "grid_points": _f("int", 3),
        "grid_extent": _f("float", 1.8),
        "n_max": _f("int", 2),
    },
    "tomography": {
        "states": _f("str_list", ["sup01", "sup02"]),
        "via_transfer": _f("bool", True),
        "noise": _f("float", 0.02),
        "repeats": _f("int", 5),
        "grid_points": _f("int", 5),
        "grid_extent": _f("float", 1.8),
        "n_max": _f("int", 4),
        "wigner_points": _f("int", 41),
        "wigner_extent": _f("float", 2.0),
    },
    "circuit": {
        "calculation": _f("str", "boxmodes", ("boxmodes", "anharmonicity", "lifetime")),
        "sweep_points": _f("int", 200),
        "flux_min": _f("float", 0.0),
        "flux_max": _f("float", 1.0),
        "flux_points": _f("int", 101),
        "window_min": _f("rate", TWO_PI * 3.5e9),
        "window_max": _f("rate", TWO_PI * 4.5e9),
        "max_index": _f("int", 2),
    },
    "optimize": {
        "stage": _f("str", "emission", ("emission", "capture", "joint")),
        "n_knots": _f("int", 6),
        "budget": _f("int", 150),
        "knot_half_span": _f("time", 10e-9),
        "kappa_max": _f("rate", TWO_PI * 55e6),
    },
}

TOP = {"name", "description", "scenario", "device", "pulses", "output_dir", "seed"}


@dataclass
class ScenarioConfig:
    kind: str
    params: dict
    device: dict
    pulses: dict
    output_dir: Path
    seed: int = 0
    name: str = ""
    source: str = ""
    raw: dict = field(default_factory=dict)

    def summary(self) -> dict:
        """Resolved values in SI units, suitable for the JSON summary."""
        return {"kind": self.kind, "name": self.name, "seed": self.seed, "scenario": self.params,
                "device": self.device, "pulses": self.pulses}


# ---------------------------------------------------------------- parsing


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads 6.8e6 (no exponent sign) as a string; accept plain scientific notation
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)?(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


def _compose(text: str):
    try:
        return yaml.compose(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None


def _plain(node):
    """Convert a YAML node to Python, returning (value, {dotted_path: line})."""
    lines = {}

    def walk(n, path):
        if isinstance(n, yaml.MappingNode):
            out = {}
            for k, v in n.value:
                key = _Loader("").construct_object(k)
                if not isinstance(key, str):
                    raise ConfigError(f"keys must be strings, got {key!r}", k.start_mark.line + 1)
                if key in out:
                    raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1)
                p = f"{path}.{key}" if path else key
                lines[p] = k.start_mark.line + 1
                out[key] = walk(v, p)
            return out
        if isinstance(n, yaml.SequenceNode):
            return [walk(v, f"{path}[{i}]") for i, v in enumerate(n.value)]
        return _Loader("").construct_object(n)

    return (walk(node, "") if node is not None else {}), lines


def _split_unit(key: str, schema: dict):
    """Resolve a suffixed key to (field name, Field, factor)."""
    if key in schema:
        f = schema[key]
        if isinstance(f, Field) and f.kind in UNITS:
            opts = " or ".join(f"{key}{s}" for s in UNITS[f.kind])
            raise ConfigError(f"'{key}' needs a unit suffix ({opts})")
        return key, f, 1.0
    for name, f in schema.items():
        if isinstance(f, Field) and f.kind in UNITS and key.startswith(name + "_"):
            suffix = key[len(name):]
            if suffix in UNITS[f.kind]:
                return name, f, UNITS[f.kind][suffix]
            opts = ", ".join(UNITS[f.kind])
            raise ConfigError(f"'{key}': unit '{suffix}' not accepted for {name} (use {opts})")
    raise ConfigError(f"unknown key '{key}'")


def _coerce(value, f: Field, factor: float, where: str):
    kind = f.kind
    try:
        if kind == "bool":
            if not isinstance(value, bool):
                raise TypeError
            out = value
        elif kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            out = value
        elif kind == "str":
            if not isinstance(value, str):
                raise TypeError
            out = value
        elif kind == "str_list":
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise TypeError
            out = list(value)
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            out = float(value) * factor
    except TypeError:
        raise ConfigError(f"{where}: expected {kind.replace('_', ' ')}, got {value!r}") from None
    if f.choices is not None:
        vals = out if isinstance(out, list) else [out]
        bad = [v for v in vals if v not in f.choices]
        if bad:
            raise ConfigError(f"{where}: {bad[0]!r} not one of {list(f.choices)}")
    return out


def _section(data, schema: dict, path: str, lines: dict) -> dict:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"'{path}' must be a mapping", lines.get(path))
    out = {}
    for key, value in data.items():
        p = f"{path}.{key}"
        try:
            name, f, factor = _split_unit(key, schema)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}", lines.get(p)) from None
        if isinstance(f, dict):
            out[name] = _section(value, f, p, lines)
            continue
        if name in out:
            raise ConfigError(f"'{name}' given twice with different units", lines.get(p))
        try:
            out[name] = _coerce(value, f, factor, p)
        except ConfigError as exc:
            raise ConfigError(str(exc), lines.get(p)) from None
    for name, f in schema.items():
        if name not in out:
            out[name] = _section({}, f, f"{path}.{name}", lines) if isinstance(f, dict) else f.default
    return out


def _check_ranges(cfg: ScenarioConfig, lines: dict):
    p = cfg.params
    for key in ("detuning_points", "delay_points", "hold_points", "grid_points", "flux_points",
                "sweep_points", "wigner_points", "repeats"):
        if key in p and p[key] < 1:
            raise ConfigError(f"scenario.{key} must be >= 1", lines.get(f"scenario.{key}"))
    if cfg.kind == "transfer" and not cfg.params["simultaneous"]:
        bad = [s for s in p["states"] if s not in STATE_NAMES]
        if bad:
            raise ConfigError(f"scenario.states: unknown state {bad[0]!r}", lines.get("scenario.states"))
    if cfg.kind == "tomography":
        bad = [s for s in p["states"] if s not in STATE_NAMES[1:]]
        if bad:
            raise ConfigError(f"scenario.states: unknown state {bad[0]!r}", lines.get("scenario.states"))
    if cfg.kind == "optimize" and not 3 <= p["n_knots"] <= 24:
        raise ConfigError("scenario.n_knots must lie in [3, 24]", lines.get("scenario.n_knots"))
    if cfg.kind == "optimize" and p["budget"] < 20:
        raise ConfigError("scenario.budget must be >= 20", lines.get("scenario.budget"))
    if not 0 <= cfg.pulses["line_loss"] <= 1:
        raise ConfigError("pulses.line_loss must lie in [0, 1]", lines.get("pulses.line_loss"))
    for k in ("node1", "node2"):
        n = cfg.device[k]
        if n["qubit_t2"] > 2 * n["qubit_t1"] or n["resonator_t2"] > 2 * n["resonator_t1"]:
            raise ConfigError(f"device.{k}: t2 exceeds 2*t1", lines.get(f"device.{k}"))


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings; values are parsed as YAML scalars."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, text = item.split("=", 1)
        try:
            value = yaml.load(text, Loader=_Loader)
        except yaml.YAMLError:
            raise ConfigError(f"--set {key}: cannot parse value {text!r}") from None
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: '{part}' is not a section")
        base = _base_name(parts[-1])
        for k in [k for k in node if _base_name(k) == base]:
            del node[k]  # an override replaces the field whatever unit it used
        node[parts[-1]] = value
    return data


_SUFFIXES = sorted({s for u in UNITS.values() for s in u}, key=len, reverse=True)


def _base_name(key: str) -> str:
    for s in _SUFFIXES:
        if key.endswith(s) and len(key) > len(s):
            return key[: -len(s)]
    return key


def parse_config(text: str, overrides=(), source: str = "<string>", base_dir: Path | None = None) -> ScenarioConfig:
    data, lines = _plain(_compose(text))
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    data = apply_overrides(data, overrides)
    unknown = sorted(set(data) - TOP)
    if unknown:
        raise ConfigError(f"unknown top-level key '{unknown[0]}'", lines.get(unknown[0]))
    scen = data.get("scenario")
    if not isinstance(scen, dict) or "kind" not in scen:
        raise ConfigError("'scenario' must be a mapping with a 'kind'", lines.get("scenario"))
    kind = scen["kind"]
    if kind not in SCENARIOS:
        raise ConfigError(f"scenario.kind {kind!r} not one of {list(SCENARIOS)}", lines.get("scenario.kind"))
    params = _section({k: v for k, v in scen.items() if k != "kind"}, SCENARIO_FIELDS[kind], "scenario", lines)
    device = _section(data.get("device"), DEVICE, "device", lines)
    pulses = _section(data.get("pulses"), PULSES, "pulses", lines)
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer", lines.get("seed"))
    out = data.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError("output_dir must be a string", lines.get("output_dir"))
    out_path = Path(out)
    if not out_path.is_absolute() and base_dir is not None:
        out_path = base_dir / out_path
    name = data.get("name", "")
    if not isinstance(name, str):
        raise ConfigError("name must be a string", lines.get("name"))
    if not isinstance(data.get("description", ""), str):
        raise ConfigError("description must be a string", lines.get("description"))
    cfg = ScenarioConfig(kind, params, device, pulses, out_path, seed, name, source, data)
    _check_ranges(cfg, lines)
    return cfg


def load_config(path, overrides=(), output_dir: Path | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    cfg = parse_config(text, overrides, source=str(path), base_dir=Path.cwd())
    if output_dir is not None:
        cfg.output_dir = Path(output_dir)
    return cfg
