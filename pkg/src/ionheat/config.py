"""INI run configuration with explicit frequency units.

Every frequency must carry a unit suffix (``Hz``, ``kHz``, ``MHz`` for cyclic
frequencies, ``rad/s`` for angular). Values are stored internally in rad/s and
serialised back as ``<value> rad/s``, so parse -> serialise -> parse is a fixed
point.
"""
from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .physics import TWO_PI


class ConfigError(ValueError):
    """Invalid configuration; the message names the section, key and line."""


_UNIT = {"hz": TWO_PI, "khz": TWO_PI * 1e3, "mhz": TWO_PI * 1e6, "rad/s": 1.0}
_FREQ_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-z/]+)\s*$")

# section -> key -> (kind, default). Kinds: freq, float, int, bool, str, floats, freqs.
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "run": {
        "scenario": ("str", "ambient"),
        "seed": ("int", 0),
    },
    "ion": {
        "mass_amu": ("float", 170.936323),
        "wavelength_m": ("float", 369.5e-9),
        "linewidth": ("freq", TWO_PI * 19.6e6),
        "zeeman_splitting": ("freq", TWO_PI * 5.288e6),
    },
    "trap": {
        "secular_frequency": ("freq", TWO_PI * 1.09e6),
        "lamb_dicke_x": ("float", 0.104),
        "lamb_dicke_y": ("float", 0.112),
        "mode_ratio": ("float", 1.48),
    },
    "laser": {
        "saturation": ("float", 1.27),
        "detuning": ("freq", 0.0),
        "absorption_geometry": ("float", 0.25),
        "emission_geometry": ("float", 1.0 / 3.0),
    },
    "initial": {
        # state = ground | thermal | double_thermal
        "state": ("str", "ground"),
        "nbar": ("float", 0.0),
        "p0": ("float", 0.9),
        "p1": ("float", 0.08),
        "nbar_hot": ("float", 10.0),
        "n_max": ("int", 400),
    },
    "ambient": {
        "heating_rate": ("float", 770.0),
        "t_max": ("float", 8e-3),
        "n_points": ("int", 17),
        "n_traj": ("int", 1000),
        "qtt_step": ("float", 1e-6),
        "n_levels": ("int", 40),
    },
    "measure": {
        "dark_heating_rate": ("float", 770.0),
        "t_max": ("float", 100e-6),
        "n_points": ("int", 11),
        "n_traj": ("int", 1000),
        "bright_background": ("bool", True),
        "emission": ("str", "isotropic"),
        "dark_t_max": ("float", 8e-3),
        "n_levels": ("int", 40),
    },
    "scan": {
        "detunings": ("freqs", [-TWO_PI * 11e6, -TWO_PI * 1e6, TWO_PI * 9e6]),
        "saturations": ("floats", []),
        "events_max": ("float", 5000.0),
        "n_points": ("int", 101),
        "band": ("freq", TWO_PI * 2e6),
        "nbar0": ("float", 0.0),
        "qtt_traj": ("int", 0),
        "qtt_points": ("int", 11),
    },
    "fit": {
        "rabi": ("freq", 2 * np.pi / 60e-6 / 0.104),
        "eta": ("float", 0.104),
        "svd_levels": ("int", 10),
        "n_bootstrap": ("int", 1000),
        "levels": ("str", "0,1"),
        "weighted": ("bool", True),
        "readout_error": ("float", 0.0),
    },
    "synth": {
        # truth = bath | qtt | eq7; kind = blue_sideband | carrier | populations
        "truth": ("str", "bath"),
        "kind": ("str", "blue_sideband"),
        "heating_rate": ("float", 770.0),
        "delays_max": ("float", 4e-3),
        "n_delays": ("int", 9),
        "durations_max": ("float", 300e-6),
        "n_durations": ("int", 60),
        "shots": ("int", 500),  # 0 = analytic (exact probabilities)
        "rabi": ("freq", 2 * np.pi / 60e-6 / 0.104),
        "n_traj": ("int", 1000),
    },
}

_CHOICES = {
    ("initial", "state"): {"ground", "thermal", "double_thermal"},
    ("synth", "truth"): {"bath", "qtt", "eq7"},
    ("synth", "kind"): {"blue_sideband", "carrier", "populations"},
    ("measure", "emission"): {"isotropic", "none"},
}

_POSITIVE = {
    ("ion", "mass_amu"), ("ion", "wavelength_m"), ("ion", "linewidth"), ("trap", "secular_frequency"),
    ("ambient", "t_max"), ("ambient", "n_points"), ("ambient", "n_traj"), ("ambient", "qtt_step"),
    ("ambient", "n_levels"), ("measure", "t_max"), ("measure", "n_points"), ("measure", "n_traj"),
    ("measure", "dark_t_max"), ("measure", "n_levels"), ("scan", "events_max"), ("scan", "n_points"),
    ("fit", "rabi"), ("fit", "svd_levels"), ("fit", "n_bootstrap"), ("synth", "n_delays"),
    ("synth", "durations_max"), ("synth", "n_durations"), ("synth", "rabi"),
    ("synth", "n_traj"), ("initial", "n_max"),
}

_NONNEGATIVE = {
    ("laser", "saturation"), ("laser", "absorption_geometry"), ("laser", "emission_geometry"),
    ("ambient", "heating_rate"), ("measure", "dark_heating_rate"), ("synth", "heating_rate"),
    ("initial", "nbar"), ("initial", "nbar_hot"), ("scan", "nbar0"), ("scan", "qtt_traj"),
    ("synth", "delays_max"), ("fit", "readout_error"),
}


def parse_frequency(text: str) -> float:
    """'1.09 MHz' -> rad/s. A bare number is rejected."""
    m = _FREQ_RE.match(text)
    if not m:
        raise ValueError(f"frequency {text!r} needs a unit suffix (Hz, kHz, MHz or rad/s)")
    unit = m.group(2).lower()
    if unit not in _UNIT:
        raise ValueError(f"unknown frequency unit {m.group(2)!r}; use Hz, kHz, MHz or rad/s")
    return float(m.group(1)) * _UNIT[unit]


def _convert(kind: str, raw: str):
    raw = raw.strip()
    if kind == "freq":
        return parse_frequency(raw)
    if kind == "float":
        return float(raw)
    if kind == "int":
        return int(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "str":
        return raw
    items = [s for s in (p.strip() for p in raw.split(",")) if s]
    if kind == "floats":
        return [float(s) for s in items]
    if kind == "freqs":
        return [parse_frequency(s) for s in items]
    raise AssertionError(kind)


def _format(kind: str, value) -> str:
    if kind == "freq":
        return f"{float(value)!r} rad/s"
    if kind == "freqs":
        return ", ".join(f"{float(v)!r} rad/s" for v in value)
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == section:
                return i
        elif current == section and key is not None and re.match(rf"^{re.escape(key)}\s*[=:]", s):
            return i
    return None


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def serialize(self) -> str:
        out = []
        for sec, keys in SCHEMA.items():
            out.append(f"[{sec}]")
            for key, (kind, _) in keys.items():
                out.append(f"{key} = {_format(kind, self.values[sec][key])}")
            out.append("")
        return "\n".join(out)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]

    def replace(self, section: str, **kw) -> "RunConfig":
        vals = {s: dict(d) for s, d in self.values.items()}
        for k, v in kw.items():
            if k not in SCHEMA[section]:
                raise ConfigError(f"[{section}] unknown key {k!r}")
            vals[section][k] = v
        return RunConfig(vals)


def default_config() -> RunConfig:
    return RunConfig({s: {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse INI text on top of the defaults; unknown sections/keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    cfg = default_config()
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}:{_line_of(text, sec, None)}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            line = _line_of(text, sec, key)
            where = f"{source}:{line}: [{sec}] {key}"
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{where}: unknown key")
            kind = SCHEMA[sec][key][0]
            try:
                val = _convert(kind, raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: {exc}") from exc
            if (sec, key) in _CHOICES and val not in _CHOICES[(sec, key)]:
                raise ConfigError(f"{where}: must be one of {sorted(_CHOICES[(sec, key)])}")
            if (sec, key) in _POSITIVE and not val > 0:
                raise ConfigError(f"{where}: must be > 0")
            if (sec, key) in _NONNEGATIVE and not val >= 0:
                raise ConfigError(f"{where}: must be >= 0")
            if kind in ("float", "freq") and not np.isfinite(val):
                raise ConfigError(f"{where}: must be finite")
            cfg.values[sec][key] = val
    _check(cfg, source)
    return cfg


def _check(cfg: RunConfig, source: str):
    if cfg["synth"]["shots"] < 0:
        raise ConfigError(f"{source}: [synth] shots must be >= 0")
    if cfg["run"]["seed"] < 0:
        raise ConfigError(f"{source}: [run] seed must be >= 0")
    sats = cfg["scan"]["saturations"]
    if sats and len(sats) != len(cfg["scan"]["detunings"]):
        raise ConfigError(f"{source}: [scan] saturations must match detunings in length")
    if not cfg["scan"]["detunings"]:
        raise ConfigError(f"{source}: [scan] detunings is empty")
    try:
        levels = [int(x) for x in cfg["fit"]["levels"].split(",")]
    except ValueError as exc:
        raise ConfigError(f"{source}: [fit] levels: {exc}") from exc
    if not levels or min(levels) < 0:
        raise ConfigError(f"{source}: [fit] levels must be non-negative integers")


def load_config(path) -> RunConfig:
    """Read and parse a config file. I/O failures surface as OSError."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, source=str(path))
