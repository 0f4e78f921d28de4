"""Line-oriented scenario configuration with explicit units.

Each non-blank line is ``section.key = value [unit]``; ``#`` starts a comment.
Dimensional keys must carry a unit, dimensionless keys must not::

    opo.pump_parameter = 0.3747
    channel.fiber_length = 10 km
    lock.linewidth_source = 100 Hz

Missing keys fall back to the defaults file (``SQZSIM_DEFAULTS`` or the
shipped ``defaults.cfg``), then to the dataclass defaults; each fallback is
recorded as a notice.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .lockloop import LockParams, gains_for_bandwidth
from .scenarios import MODES, ScenarioConfig
from .sqzmodel import ChannelParams, OpoParams, ParameterError

UNITS = {
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "length": {"km": 1.0, "m": 1e-3},
    "level": {"dB": 1.0},
    "attenuation": {"dB/km": 1.0},
    "angle": {"rad": 1.0, "mrad": 1e-3},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6},
    "ratio": {"ppm": 1.0},
    "wavelength": {"nm": 1.0},
    "freq_per_rad": {"Hz/rad": 1.0},
    "snu": {"SNU": 1.0},
}
BASE_UNIT = {dim: next(iter(u)) for dim, u in UNITS.items()}

# key -> dimension; None marks a bare dimensionless number
SCHEMA = {
    "opo.pump_parameter": None,
    "opo.eta_total": None,
    "opo.cavity_hwhm": "frequency",
    "opo.pilot_freq": "frequency",
    "opo.pilot_cnr": "level",
    "channel.fiber_length": "length",
    "channel.attenuation": "attenuation",
    "channel.wdm_insertion_loss": "level",
    "channel.connector_loss": "level",
    "channel.coexistence_loss": "level",
    "channel.excess_noise": "snu",
    "lock.loop_rate": "frequency",
    "lock.unity_gain_bw": "frequency",
    "lock.kp": None,
    "lock.ki": "freq_per_rad",
    "lock.linewidth_source": "frequency",
    "lock.linewidth_llo": "frequency",
    "lock.clock_offset_ppm": "ratio",
    "lock.demod_freq": "frequency",
    "lock.detector_phase_noise_floor": "angle",
    "lock.piezo_bandwidth": "frequency",
    "lock.piezo_range": "frequency",
    "lock.eom_range": "angle",
    "lock.initial_offset": "angle",
    "scenario.mode": "token",
    "scenario.duration": "time",
    "scenario.seed": "integer",
    "scenario.sample_rate": "frequency",
    "scenario.f_center": "frequency",
    "scenario.rbw": "frequency",
    "scenario.electronic_clearance": "level",
    "scenario.pin_sigma": "angle",
    "scenario.classical_wavelength": "wavelength",
    "sweep.fiber_length_start": "length",
    "sweep.fiber_length_stop": "length",
    "sweep.points": "integer",
}

# config key -> ScenarioConfig attribute, where they differ
_SCENARIO_ATTR = {
    "electronic_clearance": "electronic_clearance_db",
    "classical_wavelength": "classical_wavelength_nm",
}

_LINE = re.compile(r"^([a-z_]+)\.([a-z_]+)\s*=\s*(\S+)(?:\s+(\S+))?$")


class ConfigSyntaxError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ConfigUnitError(ValueError):
    def __init__(self, lineno, key, message):
        super().__init__(f"line {lineno}: {key}: {message}")
        self.lineno = lineno
        self.key = key


class ConfigValueError(ValueError):
    """A value parsed cleanly but violates its field's invariant."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SweepSpec:
    fiber_length_start: float = 0.0
    fiber_length_stop: float = 20.0
    points: int = 21


@dataclass
class ParsedConfig:
    config: ScenarioConfig
    sweep: SweepSpec = field(default_factory=SweepSpec)
    notices: list = field(default_factory=list)


def _parse_value(key, raw, unit, lineno):
    dim = SCHEMA[key]
    if dim == "token":
        if unit is not None:
            raise ConfigSyntaxError(lineno, f"{key} takes a single token")
        return raw
    if dim == "integer":
        if unit is not None:
            raise ConfigUnitError(lineno, key, "integer keys take no unit")
        try:
            return int(raw)
        except ValueError:
            raise ConfigSyntaxError(lineno, f"{key}: expected an integer, got {raw!r}") from None
    try:
        number = float(raw)
    except ValueError:
        raise ConfigSyntaxError(lineno, f"{key}: expected a number, got {raw!r}") from None
    if not math.isfinite(number):
        raise ConfigSyntaxError(lineno, f"{key}: value must be finite")
    if dim is None:
        if unit is not None:
            raise ConfigUnitError(lineno, key, f"dimensionless key given unit {unit!r}")
        return number
    if unit is None:
        raise ConfigUnitError(lineno, key,
                              f"bare number rejected; expected a {dim} unit "
                              f"({', '.join(UNITS[dim])})")
    if unit not in UNITS[dim]:
        raise ConfigUnitError(lineno, key,
                              f"unit {unit!r} is not a {dim} unit ({', '.join(UNITS[dim])})")
    return number * UNITS[dim][unit]


def parse_entries(text):
    """Tokenise config text into {key: value in base units}; no defaults applied."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigSyntaxError(lineno, f"expected 'section.key = value [unit]', got {line!r}")
        section, name, raw, unit = m.groups()
        key = f"{section}.{name}"
        if key not in SCHEMA:
            raise ConfigSyntaxError(lineno, f"unknown key {key!r}")
        if key in entries:
            raise ConfigSyntaxError(lineno, f"duplicate key {key!r}")
        entries[key] = _parse_value(key, raw, unit, lineno)
    return entries


def default_config_path():
    env = os.environ.get("SQZSIM_DEFAULTS")
    if env:
        return Path(env)
    return Path(str(resources.files("sqzsim") / "data" / "defaults.cfg"))


def _build(section_cls, prefix, values, attr_map=None):
    kwargs = {}
    attr_map = attr_map or {}
    for key, val in values.items():
        sec, name = key.split(".")
        if sec == prefix:
            kwargs[attr_map.get(name, name)] = val
    try:
        return section_cls(**kwargs)
    except ParameterError as exc:
        name = _offending_field(str(exc), kwargs, attr_map)
        raise ConfigValueError(f"{prefix}.{name}" if name else prefix, str(exc)) from None


def _offending_field(message, kwargs, attr_map):
    inverse = {v: k for k, v in attr_map.items()}
    for attr in kwargs:
        if message.startswith(attr):
            return inverse.get(attr, attr)
    for attr in kwargs:
        if attr in message:
            return inverse.get(attr, attr)
    return None


def load_config(text, defaults_text=None):
    """Parse, fill defaults, validate. Returns a :class:`ParsedConfig`."""
    user = parse_entries(text)
    if defaults_text is None:
        path = default_config_path()
        if os.environ.get("SQZSIM_DEFAULTS") or path.exists():
            defaults_text = path.read_text()
        else:
            defaults_text = ""
    defaults = parse_entries(defaults_text)

    values = dict(defaults)
    values.update(user)
    notices = []
    for key in SCHEMA:
        if key in user:
            continue
        if key in defaults:
            notices.append(f"defaulted {key} from defaults file")
        else:
            notices.append(f"defaulted {key} to built-in default")

    if "scenario.mode" in values and values["scenario.mode"] not in MODES:
        raise ConfigValueError("scenario.mode", f"must be one of {MODES}")

    # Gains: explicit user kp/ki, else the unity-gain bandwidth (user first),
    # else whatever the defaults file pins.
    lock_vals = {k: v for k, v in values.items() if k.startswith("lock.")}
    ugb = lock_vals.pop("lock.unity_gain_bw", None)
    if ugb is not None and "lock.unity_gain_bw" in user:
        for key in ("lock.kp", "lock.ki"):
            if key not in user:
                lock_vals.pop(key, None)
    if ugb is not None and ("lock.kp" not in lock_vals or "lock.ki" not in lock_vals):
        rate = lock_vals.get("lock.loop_rate", LockParams().loop_rate)
        try:
            kp, ki = gains_for_bandwidth(ugb, rate)
        except ParameterError as exc:
            raise ConfigValueError("lock.unity_gain_bw", str(exc)) from None
        lock_vals.setdefault("lock.kp", kp)
        lock_vals.setdefault("lock.ki", ki)

    opo = _build(OpoParams, "opo", values)
    channel = _build(ChannelParams, "channel", values)
    lock = _build(LockParams, "lock", lock_vals)
    scen = {k: v for k, v in values.items() if k.startswith("scenario.")}
    sweep = _build(SweepSpec, "sweep", values)
    if sweep.points < 2 or sweep.fiber_length_stop < sweep.fiber_length_start:
        raise ConfigValueError("sweep", "need points >= 2 and stop >= start")
    kwargs = {_SCENARIO_ATTR.get(k.split(".")[1], k.split(".")[1]): v for k, v in scen.items()}
    try:
        cfg = ScenarioConfig(opo=opo, channel=channel, lock=lock, **kwargs)
    except ParameterError as exc:
        name = _offending_field(str(exc), kwargs, _SCENARIO_ATTR)
        raise ConfigValueError(f"scenario.{name}" if name else "scenario", str(exc)) from None
    return ParsedConfig(cfg, sweep, notices)


def parse_config(text, defaults_text=None):
    return load_config(text, defaults_text).config


def _fmt(value, dim):
    if dim == "token":
        return str(value)
    if dim == "integer":
        return str(int(value))
    text = repr(float(value))
    return text if dim is None else f"{text} {BASE_UNIT[dim]}"


def serialize(config, sweep=None):
    """Config text that parses back to an identical ScenarioConfig."""
    lines = []
    for section, obj in (("opo", config.opo), ("channel", config.channel), ("lock", config.lock)):
        for f in fields(obj):
            key = f"{section}.{f.name}"
            lines.append(f"{key} = {_fmt(getattr(obj, f.name), SCHEMA[key])}")
    inverse = {v: k for k, v in _SCENARIO_ATTR.items()}
    for f in fields(config):
        if f.name in ("opo", "channel", "lock"):
            continue
        value = getattr(config, f.name)
        if value is None:
            continue
        key = f"scenario.{inverse.get(f.name, f.name)}"
        lines.append(f"{key} = {_fmt(value, SCHEMA[key])}")
    if sweep is not None:
        for f in fields(sweep):
            key = f"sweep.{f.name}"
            lines.append(f"{key} = {_fmt(getattr(sweep, f.name), SCHEMA[key])}")
    return "\n".join(lines) + "\n"


def shipped_config(name):
    """Path of a config file shipped with the package (e.g. ``calib_10km.cfg``)."""
    return Path(str(resources.files("sqzsim") / "data" / name))



_CALIB_HEADER = """\
# {title}
# Reconstruction, not measured data: the pump parameter is solved so the
# transmitted-LO reference detects -3.5 dB at 4 MHz, and the loss lines marked
# "fitted" are solved so the closed-form budget reproduces the reported level.
# eta_total, cavity width, electronic clearance and all lock-loop settings are
# documented defaults; none of them is published.
"""

_CALIB_TITLES = {
    "tlo_scan": "Transmitted-LO reference, LO phase scanned (reported -3.5 dB)",
    "llo_b2b": "Local LO, back-to-back coexistence (reported -1.3 dB, sigma pinned 0.039 rad)",
    "llo_10km": "Local LO over 10 km SMF with coexistence (reported -0.5 dB)",
}

CALIB_FILES = {"tlo_scan": "calib_tlo.cfg", "llo_b2b": "calib_b2b.cfg", "llo_10km": "calib_10km.cfg"}


def calibration_config_text(mode, calibration=None):
    from .scenarios import link_calibration

    calibration = link_calibration() if calibration is None else calibration
    body = serialize(calibration[mode])
    marked = []
    for line in body.splitlines():
        key = line.split(" = ")[0]
        if mode != "tlo_scan" and key == "channel.wdm_insertion_loss":
            line += "  # fitted: lumped WDM + connector insertion loss"
        elif mode == "llo_10km" and key == "channel.coexistence_loss":
            line += "  # fitted: extra loss over the 10 km coexistence link"
        elif key == "opo.pump_parameter":
            line += "  # calibrated to -3.5 dB at 4 MHz"
        marked.append(line)
    return _CALIB_HEADER.format(title=_CALIB_TITLES[mode]) + "\n".join(marked) + "\n"


def write_calibration_configs(directory):
    """Regenerate the shipped calib_*.cfg calibration files."""
    from .scenarios import link_calibration

    calibration = link_calibration()
    directory = Path(directory)
    for mode, name in CALIB_FILES.items():
        (directory / name).write_text(calibration_config_text(mode, calibration))
