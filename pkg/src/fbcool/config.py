"""Declarative run configuration: JSON with explicit units.

Every physical quantity in a config file is a "number unit" string
("39.9 kHz", "12 ng", "10 fm/rtHz"); bare numbers are accepted only for
dimensionless fields.  Values are converted to SI at parse time, unknown
keys are rejected, and a canonical serialization (SI values, canonical
units, sorted keys) makes config hashing stable: two files describing the
same physics hash identically.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .experiments import SweepSpec
from .langevin import (
    CalibrationTone,
    FeedbackFilter,
    SimulationConfig,
    design_feedback_filter,
)
from .model import DeviceGeometry, Measurement, Oscillator

__all__ = ["ConfigError", "RunConfig", "AnalysisOptions", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Configuration problem, annotated with the offending location."""

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


_PREFIX_EXPONENTS = {
    "a": -18,
    "f": -15,
    "p": -12,
    "n": -9,
    "u": -6,
    "µ": -6,
    "m": -3,
    "": 0,
    "k": 3,
    "M": 6,
    "G": 9,
    "T": 12,
}


def _prefixed(symbol: str, base_exponent: int = 0) -> dict[str, float]:
    # combine decimal exponents so e.g. "ng" maps to exactly 1e-12 kg
    return {
        prefix + symbol: 10.0 ** (exp + base_exponent)
        for prefix, exp in _PREFIX_EXPONENTS.items()
    }


_UNIT_TABLES: dict[str, dict[str, float]] = {
    "frequency": _prefixed("Hz"),
    "time": _prefixed("s"),
    "length": _prefixed("m"),
    "mass": _prefixed("g", -3),
    "temperature": _prefixed("K"),
    "power": _prefixed("W"),
    "stress": _prefixed("Pa"),
    "force": _prefixed("N"),
    "asd": _prefixed("m/rtHz"),  # amplitude spectral density; squared downstream
    "angle": {"rad": 1.0, "mrad": 1e-3, "urad": 1e-6, "deg": math.pi / 180.0},
    "conductivity": {"W/(m K)": 1.0, "W/(m·K)": 1.0, "W/m/K": 1.0},
    "dimensionless": {"": 1.0, "ppm": 1e-6, "ppb": 1e-9, "%": 1e-2},
}

_CANONICAL_UNIT = {
    "frequency": "Hz",
    "time": "s",
    "length": "m",
    "mass": "kg",
    "temperature": "K",
    "power": "W",
    "stress": "Pa",
    "force": "N",
    "asd": "m/rtHz",
    "angle": "rad",
    "conductivity": "W/(m K)",
    "dimensionless": "",
}

_REQUIRED = object()


@dataclass(frozen=True)
class _Field:
    kind: str  # quantity | number | int | bool | str | enum | section | values
    dimension: str | None = None
    default: Any = _REQUIRED
    optional: bool = False
    allow_auto: bool = False
    choices: tuple | None = None
    schema: Any = None  # nested schema for kind == "section"


def _parse_quantity(value: Any, dimension: str, where: str) -> float:
    table = _UNIT_TABLES[dimension]
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if dimension == "dimensionless":
            return float(value)
        raise ConfigError(
            f"expected a unit suffix for this {dimension} quantity, e.g. "
            f'"1.0 {_CANONICAL_UNIT[dimension]}"; got bare number {value!r}',
            where,
        )
    if not isinstance(value, str):
        raise ConfigError(f"expected a quantity string, got {type(value).__name__}", where)
    parts = value.split(None, 1)
    if not parts:
        raise ConfigError("empty quantity string", where)
    try:
        number = float(parts[0])
    except ValueError:
        raise ConfigError(f"cannot parse number from {value!r}", where) from None
    unit = parts[1].strip() if len(parts) > 1 else ""
    if unit not in table:
        raise ConfigError(
            f"unknown unit {unit!r} for a {dimension} quantity "
            f"(canonical: {_CANONICAL_UNIT[dimension]!r})",
            where,
        )
    return number * table[unit]


def _parse_value(value: Any, fld: _Field, where: str) -> Any:
    if fld.allow_auto and value == "auto":
        return "auto"
    if fld.kind == "quantity":
        return _parse_quantity(value, fld.dimension, where)
    if fld.kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", where)
        return float(value)
    if fld.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", where)
        return int(value)
    if fld.kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", where)
        return value
    if fld.kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", where)
        return value
    if fld.kind == "enum":
        if value not in fld.choices:
            raise ConfigError(f"expected one of {fld.choices}, got {value!r}", where)
        return value
    if fld.kind == "section":
        if not isinstance(value, dict):
            raise ConfigError("expected an object", where)
        return _parse_section(value, fld.schema, where)
    raise AssertionError(f"unhandled field kind {fld.kind}")


def _parse_section(raw: dict, schema: dict[str, _Field], where: str) -> dict:
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}", where)
    out: dict[str, Any] = {}
    for key, fld in schema.items():
        here = f"{where}.{key}"
        if key not in raw:
            if fld.optional:
                out[key] = None
            elif fld.default is _REQUIRED:
                raise ConfigError("missing required field", here)
            elif fld.kind == "quantity" and isinstance(fld.default, str) and fld.default != "auto":
                out[key] = _parse_quantity(fld.default, fld.dimension, here)
            else:
                out[key] = fld.default
        else:
            out[key] = _parse_value(raw[key], fld, here)
    return out


_TONE_SCHEMA = {
    "frequency": _Field("quantity", "frequency"),
    "amplitude": _Field("quantity", "length"),
}

_SWEEP_VALUE_DIMENSION = {
    "power": "power",
    "gain": "dimensionless",
    "temperature": "temperature",
}

_SCHEMA: dict[str, dict[str, _Field]] = {
    "oscillator": {
        "frequency": _Field("quantity", "frequency"),
        "quality_factor": _Field("number"),
        "mass": _Field("quantity", "mass"),
        "bath_temperature": _Field("quantity", "temperature", default="300 K"),
    },
    "measurement": {
        "power": _Field("quantity", "power"),
        "wavelength": _Field("quantity", "length"),
        "reflectance": _Field("number"),
        "efficiency": _Field("number"),
        "extraneous_floor": _Field("quantity", "asd", default="0 m/rtHz"),
    },
    "feedback_filter": {
        "gain": _Field("number", default=0.0),
        "band_low": _Field("quantity", "frequency", optional=True),
        "band_high": _Field("quantity", "frequency", optional=True),
        "delay_samples": _Field("int", default="auto", allow_auto=True),
        "order": _Field("int", default=2),
        "max_force": _Field("quantity", "force", optional=True),
    },
    "simulation": {
        "sample_rate": _Field("quantity", "frequency", default="auto", allow_auto=True),
        "duration": _Field("quantity", "time"),
        "seed": _Field("int", default=0),
        "include_backaction": _Field("bool", default=False),
        "include_imprecision": _Field("bool", default=True),
        "calibration_tone": _Field("section", schema=_TONE_SCHEMA, optional=True),
        "initial_displacement": _Field("quantity", "length", optional=True),
    },
    "analysis": {
        "segment_duration": _Field("quantity", "time", optional=True),
        "window": _Field("str", default="hann"),
        "overlap": _Field("number", default=0.5),
        "fit": _Field("bool", default=True),
        "fit_band": _Field("quantity", "frequency", optional=True),
        "phase": _Field("quantity", "angle", default="auto", allow_auto=True),
        "calibrate": _Field("bool", default=False),
    },
    "sweep": {
        "variable": _Field("enum", choices=("power", "gain", "temperature")),
        "values": _Field("values"),
        "replicas": _Field("int", default=1),
    },
    "geometry": {
        "tether_length": _Field("quantity", "length"),
        "tether_width": _Field("quantity", "length"),
        "thickness": _Field("quantity", "length"),
        "stress": _Field("quantity", "stress"),
        "q_material": _Field("number"),
        "thermal_conductivity": _Field("quantity", "conductivity"),
        "absorption": _Field("quantity", "dimensionless", default=0.0),
        "window_size": _Field("quantity", "length"),
    },
}


@dataclass(frozen=True)
class AnalysisOptions:
    segment_duration: float | None
    window: str
    overlap: float
    fit: bool
    fit_band: float | None
    phase: float | str  # rad, or "auto" for the realized loop phase
    calibrate: bool


@dataclass(frozen=True)
class RunConfig:
    """Parsed, SI-normalized configuration plus object builders."""

    data: dict
    source: str = "<config>"

    # ---- canonical form and hashing -------------------------------------
    def canonical_dict(self) -> dict:
        out: dict[str, Any] = {}
        for section, schema in _SCHEMA.items():
            if section not in self.data:
                continue
            out[section] = self._canonical_section(self.data[section], schema, section)
        return out

    def _canonical_section(self, values: dict, schema: dict, section: str) -> dict:
        result: dict[str, Any] = {}
        for key, fld in schema.items():
            value = values.get(key)
            if value is None and fld.optional:
                continue
            if fld.kind == "quantity":
                result[key] = self._canonical_quantity(value, fld.dimension)
            elif fld.kind == "section":
                result[key] = self._canonical_section(value, fld.schema, key)
            elif fld.kind == "values":
                dim = _SWEEP_VALUE_DIMENSION[values["variable"]]
                result[key] = [self._canonical_quantity(v, dim) for v in value]
            else:
                result[key] = value
        return result

    @staticmethod
    def _canonical_quantity(value: Any, dimension: str) -> Any:
        if value == "auto":
            return "auto"
        unit = _CANONICAL_UNIT[dimension]
        if unit == "":
            return float(value)
        return f"{float(value)!r} {unit}"

    def canonical_json(self) -> str:
        return json.dumps(self.canonical_dict(), sort_keys=True, indent=2) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "RunConfig":
        data = json.loads(json.dumps(self.data))  # deep copy of plain data
        data.setdefault("simulation", {})["seed"] = int(seed)
        return RunConfig(data, self.source)

    # ---- section access --------------------------------------------------
    def _section(self, name: str) -> dict:
        if name not in self.data:
            raise ConfigError(f"config has no '{name}' section", self.source)
        return self.data[name]

    def has_section(self, name: str) -> bool:
        return name in self.data

    # ---- builders ----------------------------------------------------------
    def oscillator(self) -> Oscillator:
        sec = self._section("oscillator")
        return Oscillator(
            omega0=2.0 * math.pi * sec["frequency"],
            q0=sec["quality_factor"],
            mass=sec["mass"],
            bath_temperature=sec["bath_temperature"],
        )

    def measurement(self) -> Measurement:
        sec = self._section("measurement")
        return Measurement(
            power=sec["power"],
            wavelength=sec["wavelength"],
            reflectance=sec["reflectance"],
            efficiency=sec["efficiency"],
            extraneous_imprecision=sec["extraneous_floor"] ** 2,
        )

    def geometry(self) -> DeviceGeometry:
        sec = self._section("geometry")
        return DeviceGeometry(
            tether_length=sec["tether_length"],
            tether_width=sec["tether_width"],
            thickness=sec["thickness"],
            stress=sec["stress"],
            q_material=sec["q_material"],
            thermal_conductivity=sec["thermal_conductivity"],
            absorption=sec["absorption"],
            window_size=sec["window_size"],
        )

    def sample_rate(self) -> float:
        sec = self._section("simulation")
        if sec["sample_rate"] == "auto":
            return 32.0 * self._section("oscillator")["frequency"]
        return sec["sample_rate"]

    def simulation_config(self, seed_override: int | None = None) -> SimulationConfig:
        sec = self._section("simulation")
        tone = None
        if sec.get("calibration_tone") is not None:
            tone = CalibrationTone(
                frequency=sec["calibration_tone"]["frequency"],
                amplitude=sec["calibration_tone"]["amplitude"],
            )
        return SimulationConfig(
            sample_rate=self.sample_rate(),
            duration=sec["duration"],
            seed=int(seed_override if seed_override is not None else sec["seed"]),
            include_backaction=sec["include_backaction"],
            include_imprecision=sec["include_imprecision"],
            calibration_tone=tone,
            initial_displacement=sec["initial_displacement"],
        )

    def feedback_filter(self) -> FeedbackFilter:
        osc = self.oscillator()
        if not self.has_section("feedback_filter"):
            return design_feedback_filter(osc, self.sample_rate(), gain=0.0)
        sec = self._section("feedback_filter")
        band_low = sec["band_low"] or 0.25 * osc.frequency
        band_high = sec["band_high"] or 1.25 * osc.frequency
        if sec["delay_samples"] == "auto":
            return design_feedback_filter(
                osc,
                self.sample_rate(),
                gain=sec["gain"],
                band=(band_low, band_high),
                order=sec["order"],
                max_force=sec["max_force"],
            )
        return FeedbackFilter(
            band_low=band_low,
            band_high=band_high,
            delay_samples=sec["delay_samples"],
            gain=sec["gain"],
            order=sec["order"],
            max_force=sec["max_force"],
        )

    def analysis_options(self) -> AnalysisOptions:
        sec = self.data.get("analysis")
        if sec is None:
            sec = _parse_section({}, _SCHEMA["analysis"], "analysis")
        return AnalysisOptions(
            segment_duration=sec["segment_duration"],
            window=sec["window"],
            overlap=sec["overlap"],
            fit=sec["fit"],
            fit_band=sec["fit_band"],
            phase=sec["phase"],
            calibrate=sec["calibrate"],
        )

    def sweep_spec(self, seed_override: int | None = None) -> SweepSpec:
        sec = self._section("sweep")
        return SweepSpec(
            variable=sec["variable"],
            values=tuple(sec["values"]),
            oscillator=self.oscillator(),
            measurement=self.measurement(),
            fb_filter=self.feedback_filter(),
            sim_config=self.simulation_config(seed_override),
            replicas=sec["replicas"],
            segment_duration=self.analysis_options().segment_duration,
            fit_band=self.analysis_options().fit_band,
        )


def parse_config(raw: dict, source: str = "<config>") -> RunConfig:
    """Validate a raw config mapping and normalize quantities to SI."""
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be an object", source)
    unknown = sorted(set(raw) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}", source)
    if "oscillator" not in raw:
        raise ConfigError("missing required section 'oscillator'", source)
    data: dict[str, Any] = {}
    for section, schema in _SCHEMA.items():
        if section not in raw:
            continue
        if section == "sweep":
            data[section] = _parse_sweep_section(raw[section], f"{source}:sweep")
        else:
            data[section] = _parse_section(
                raw[section], schema, f"{source}:{section}"
            )
    return RunConfig(data, source)


def _parse_sweep_section(raw: dict, where: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", where)
    schema = _SCHEMA["sweep"]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}", where)
    if "variable" not in raw:
        raise ConfigError("missing required field", f"{where}.variable")
    variable = _parse_value(raw["variable"], schema["variable"], f"{where}.variable")
    if "values" not in raw or not isinstance(raw["values"], list) or not raw["values"]:
        raise ConfigError("missing or empty 'values' list", f"{where}.values")
    dim = _SWEEP_VALUE_DIMENSION[variable]
    values = [
        _parse_quantity(v, dim, f"{where}.values[{i}]")
        for i, v in enumerate(raw["values"])
    ]
    replicas = (
        _parse_value(raw["replicas"], schema["replicas"], f"{where}.replicas")
        if "replicas" in raw
        else 1
    )
    return {"variable": variable, "values": values, "replicas": replicas}


def load_config(path) -> RunConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(exc), str(path)) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
            str(path),
        ) from exc
    return parse_config(raw, source=str(path))
