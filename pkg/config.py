#!/usr/bin/env python3
"""
Run configuration: sectioned INI files with unit-suffixed physical values.

Sections: particle, tweezer, environment, simulation, feedback, analysis, sweep. Every value is
converted to SI before validation; keys left out fall back to the reference defaults (silicon
sphere, 1550 nm, 300 mW) and each fallback is logged.
"""

import configparser
import hashlib
import json
import logging
import math
import re
from pathlib import Path
from typing import ClassVar, Dict, Iterable, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator
from scipy import constants

from dynamics import (ColdDamping, ParametricFeedback, ParametricPLL, SimulationConfig, SimulationToggles)
from errors import ConfigError
from geometry import (Material, ParticleProperties, ParticleShape, ellipsoidal_shell, inertia_and_mass,
                      oblate_ellipsoid, prolate_ellipsoid, sphere, triaxial_ellipsoid)
from noise import GasEnvironment
from optics import TweezerField

logger = logging.getLogger(__name__)

# --- Units ---

UNITS: Dict[str, Dict[str, float]] = {
    "length": {"m": 1.0, "cm": constants.centi, "mm": constants.milli, "um": constants.micro,
               "µm": constants.micro, "nm": constants.nano},
    "time": {"s": 1.0, "ms": constants.milli, "us": constants.micro, "ns": constants.nano},
    "power": {"W": 1.0, "mW": constants.milli, "uW": constants.micro},
    "pressure": {"Pa": 1.0, "hPa": constants.hecto, "bar": constants.bar, "mbar": constants.milli * constants.bar,
                 "Torr": constants.torr, "mTorr": constants.milli * constants.torr},
    "temperature": {"K": 1.0, "mK": constants.milli},
    "angle": {"rad": 1.0, "mrad": constants.milli, "deg": constants.degree},
    "frequency": {"Hz": 1.0, "kHz": constants.kilo, "MHz": constants.mega},
    "angular_frequency": {"rad/s": 1.0, "krad/s": constants.kilo, "Mrad/s": constants.mega},
    "rate": {"1/s": 1.0, "/s": 1.0},
    "mass": {"kg": 1.0, "g": constants.gram, "u": constants.atomic_mass},
    "density": {"kg/m3": 1.0, "g/cm3": constants.gram / constants.centi ** 3},
    "psd": {"m2/Hz": 1.0, "rad2/Hz": 1.0},
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")


def parse_quantity(text, dimension: str, key: str = "value") -> float:
    """'80 nm' -> 8e-8. Bare numbers are accepted for SI-unit dimensions only when they are 0."""
    if isinstance(text, (int, float)):
        return float(text)
    match = _QUANTITY.match(str(text))
    if not match:
        raise ValueError(f"{key}: cannot parse '{text}' as a {dimension}")
    number, unit = float(match.group(1)), match.group(2)
    table = UNITS[dimension]
    if not unit:
        if number == 0.0:
            return 0.0
        raise ValueError(f"{key}: '{text}' needs a unit ({', '.join(table)})")
    if unit not in table:
        raise ValueError(f"{key}: unit '{unit}' is not a {dimension} unit ({', '.join(table)})")
    return number * table[unit]


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"cannot parse '{text}' as a boolean")


# --- Sections ---

class _Section(BaseModel):
    """Keys named in QUANTITIES are unit-converted before validation."""

    model_config = ConfigDict(extra="forbid", frozen=True)
    QUANTITIES: ClassVar[Dict[str, str]] = {}

    @model_validator(mode="before")
    @classmethod
    def _convert_units(cls, data):
        if not isinstance(data, dict):
            return data
        converted = dict(data)
        for key, dimension in cls.QUANTITIES.items():
            value = converted.get(key)
            if isinstance(value, str):
                converted[key] = None if value.strip().lower() in ("", "none", "auto") else parse_quantity(value, dimension, key)
        return converted


class ParticleSection(_Section):
    QUANTITIES: ClassVar[Dict[str, str]] = {"radius": "length", "r1": "length", "r2": "length", "r3": "length",
                                            "thickness": "length", "density": "density"}

    shape: Literal["sphere", "prolate", "oblate", "triaxial", "shell"] = "sphere"
    radius: Optional[float] = 80e-9
    r1: Optional[float] = None
    r2: Optional[float] = None
    r3: Optional[float] = None
    thickness: Optional[float] = None
    density: float = 2330.0
    permittivity: float = 12.0
    chi: Optional[Tuple[float, float, float]] = None

    @field_validator("chi", mode="before")
    @classmethod
    def _split_chi(cls, value):
        if isinstance(value, str):
            parts = [p for p in re.split(r"[,\s]+", value.strip()) if p]
            return None if parts in ([], ["none"]) else tuple(float(p) for p in parts)
        return value

    def build_shape(self) -> ParticleShape:
        def need(*names):
            values = [getattr(self, n) for n in names]
            if any(v is None for v in values):
                raise ValueError(f"particle shape '{self.shape}' needs {', '.join(names)}")
            return values

        if self.shape == "sphere":
            return sphere(*need("radius"))
        if self.shape == "prolate":
            return prolate_ellipsoid(*need("r1", "r3"))
        if self.shape == "oblate":
            return oblate_ellipsoid(*need("r1", "r3"))
        if self.shape == "triaxial":
            return triaxial_ellipsoid(*need("r1", "r2", "r3"))
        return ellipsoidal_shell(*need("r1", "r2", "r3", "thickness"))


class TweezerSection(_Section):
    QUANTITIES: ClassVar[Dict[str, str]] = {"power": "power", "wavelength": "length", "waist": "length",
                                            "rayleigh_range": "length", "psi": "angle"}

    power: float = 0.3
    wavelength: float = 1550e-9
    waist: float = 1.06e-6
    rayleigh_range: Optional[float] = None
    asymmetry: float = 1.126
    psi: float = 0.0
    field_model: Literal["first_order", "two_mode_gouy"] = "first_order"


class EnvironmentSection(_Section):
    QUANTITIES: ClassVar[Dict[str, str]] = {"pressure": "pressure", "temperature": "temperature", "gas_mass": "mass"}

    pressure: float = 0.5 * constants.milli * constants.bar
    temperature: float = 300.0
    gas_mass: float = 28.0 * constants.atomic_mass


class SimulationSection(_Section):
    QUANTITIES: ClassVar[Dict[str, str]] = {"duration": "time", "dt": "time"}

    duration: float = 10e-3
    dt: Optional[float] = None
    output_rate: Union[float, Literal["auto"], None] = None
    decimation: Optional[int] = None
    ensemble: int = 30
    seed: int = 0
    initial_state: Literal["thermal", "rest"] = "thermal"
    gradient: bool = True
    scattering: bool = True
    gas_damping: bool = True
    gas_noise: bool = True
    recoil_noise: bool = False
    rotation: Literal["auto", "on", "off"] = "auto"
    recoil_order: Tuple[int, int] = (64, 128)

    @field_validator("output_rate", mode="before")
    @classmethod
    def _output_rate(cls, value):
        if not isinstance(value, str):
            return value
        text = value.strip().lower()
        if text in ("", "none"):
            return None
        if text == "auto":
            return "auto"
        return parse_quantity(value, "frequency", "output_rate")

    @field_validator("decimation", mode="before")
    @classmethod
    def _decimation(cls, value):
        if isinstance(value, str) and value.strip().lower() in ("", "none", "auto"):
            return None
        return value

    @field_validator("gradient", "scattering", "gas_damping", "gas_noise", "recoil_noise", mode="before")
    @classmethod
    def _booleans(cls, value):
        return _parse_bool(value)

    @field_validator("recoil_order", mode="before")
    @classmethod
    def _order(cls, value):
        if isinstance(value, str):
            n_theta, n_phi = (int(v) for v in value.lower().split("x"))
            return n_theta, n_phi
        return value


class FeedbackSection(_Section):
    QUANTITIES: ClassVar[Dict[str, str]] = {"gain": "rate", "imprecision": "psd", "frequency": "angular_frequency",
                                            "bandwidth": "frequency"}

    controller: Literal["none", "cold_damping", "parametric", "parametric_pll"] = "none"
    dof: Literal["x", "y", "z", "alpha", "beta", "gamma"] = "z"
    gain: float = 0.0
    eta: float = 0.0
    imprecision: float = 0.0
    depth: float = 0.0
    frequency: Optional[float] = None
    bandwidth: float = 1.0e3
    unlock_threshold: float = 0.5
    setpoint: Optional[float] = None

    @field_validator("setpoint", mode="before")
    @classmethod
    def _setpoint(cls, value):
        # a length for x, y, z and an angle for alpha, beta, gamma
        if not isinstance(value, str):
            return value
        if value.strip().lower() in ("", "none", "auto"):
            return None
        match = _QUANTITY.match(value)
        unit = match.group(2) if match else ""
        dimension = "angle" if unit in UNITS["angle"] else "length"
        return parse_quantity(value, dimension, "setpoint")

    def build(self):
        if self.controller == "cold_damping":
            return ColdDamping(dof=self.dof, gain=self.gain, imprecision=self.imprecision, setpoint=self.setpoint)
        if self.controller == "parametric":
            return ParametricFeedback(dof=self.dof, gain=self.eta, frequency=self.frequency, setpoint=self.setpoint)
        if self.controller == "parametric_pll":
            return ParametricPLL(dof=self.dof, depth=self.depth, frequency=self.frequency, bandwidth=self.bandwidth,
                                 unlock_threshold=self.unlock_threshold, setpoint=self.setpoint)
        return None


class AnalysisSection(_Section):
    signals: Tuple[str, ...] = ("x", "y", "z", "alpha", "beta", "gamma")
    segment_length: Optional[int] = None
    fit_width: float = 0.25  # fit window half-width relative to the predicted frequency
    spectra_csv: bool = True

    @field_validator("signals", mode="before")
    @classmethod
    def _split(cls, value):
        if isinstance(value, str):
            return tuple(s for s in re.split(r"[,\s]+", value.strip()) if s)
        return value

    @field_validator("segment_length", mode="before")
    @classmethod
    def _auto(cls, value):
        if isinstance(value, str) and value.strip().lower() in ("", "auto", "none"):
            return None
        return value


class SweepSection(_Section):
    QUANTITIES: ClassVar[Dict[str, str]] = {"start": "angle", "stop": "angle"}

    parameter: Literal["psi"] = "psi"
    start: float = 0.0
    stop: float = 0.25 * math.pi
    points: int = 11
    signals: Tuple[str, ...] = ("x", "y", "z")

    @field_validator("signals", mode="before")
    @classmethod
    def _split(cls, value):
        if isinstance(value, str):
            return tuple(s for s in re.split(r"[,\s]+", value.strip()) if s)
        return value

    @field_validator("points")
    @classmethod
    def _enough_points(cls, value):
        if value < 1:
            raise ValueError(f"sweep needs at least one point, got {value}")
        return value

    def grid(self) -> List[float]:
        if self.points == 1:
            return [self.start]
        step = (self.stop - self.start) / (self.points - 1)
        return [self.start + i * step for i in range(self.points)]


SECTIONS = {
    "particle": ParticleSection,
    "tweezer": TweezerSection,
    "environment": EnvironmentSection,
    "simulation": SimulationSection,
    "feedback": FeedbackSection,
    "analysis": AnalysisSection,
    "sweep": SweepSection,
}


class LevisimConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    particle: ParticleSection = ParticleSection()
    tweezer: TweezerSection = TweezerSection()
    environment: EnvironmentSection = EnvironmentSection()
    simulation: SimulationSection = SimulationSection()
    feedback: FeedbackSection = FeedbackSection()
    analysis: AnalysisSection = AnalysisSection()
    sweep: SweepSection = SweepSection()

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump, first 16 hex characters."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def with_psi(self, psi: float) -> "LevisimConfig":
        return self.model_copy(update={"tweezer": self.tweezer.model_copy(update={"psi": float(psi)})})

    def with_seed(self, seed: int) -> "LevisimConfig":
        return self.model_copy(update={"simulation": self.simulation.model_copy(update={"seed": int(seed)})})

    # --- Domain objects ---

    def shape(self) -> ParticleShape:
        return self.particle.build_shape()

    def material(self) -> Material:
        return Material(density=self.particle.density, permittivity=self.particle.permittivity)

    def properties(self) -> ParticleProperties:
        try:
            props = inertia_and_mass(self.shape(), self.material())
        except ValueError as exc:
            raise ConfigError(f"invalid particle: {exc}") from exc
        return props if self.particle.chi is None else props.with_susceptibility(self.particle.chi)

    def field(self) -> TweezerField:
        t = self.tweezer
        return TweezerField(power=t.power, wavelength=t.wavelength, waist=t.waist, rayleigh_range=t.rayleigh_range,
                            asymmetry=t.asymmetry, psi=t.psi, model=t.field_model)

    def gas(self) -> GasEnvironment:
        e = self.environment
        return GasEnvironment(pressure=e.pressure, temperature=e.temperature, gas_mass=e.gas_mass)

    def simulation_config(self) -> SimulationConfig:
        s = self.simulation
        try:
            return SimulationConfig(
                shape=self.shape(),
                material=self.material(),
                field=self.field(),
                gas=self.gas(),
                duration=s.duration,
                dt=s.dt,
                output_rate=s.output_rate,
                decimation=s.decimation,
                ensemble=s.ensemble,
                seed=s.seed,
                toggles=SimulationToggles(gradient=s.gradient, scattering=s.scattering, gas_damping=s.gas_damping,
                                          gas_noise=s.gas_noise, recoil_noise=s.recoil_noise,
                                          rotation=s.rotation),
                feedback=self.feedback.build(),
                initial_state=s.initial_state,
                recoil_order=s.recoil_order,
                chi_override=self.particle.chi,
                config_hash=self.config_hash(),
            )
        except (ValidationError, ValueError) as exc:
            raise ConfigError(f"invalid physical parameters: {exc}") from exc


# --- Loading ---

def _apply_overrides(parser: configparser.ConfigParser, overrides: Iterable[str]):
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override '{item}' must look like section.key=value")
        path, value = item.split("=", 1)
        section, key = path.strip().split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"override '{item}': unknown section '{section}'")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key.strip(), value.strip())
        logger.info(f"Override {section}.{key.strip()} = {value.strip()}")


def _format_validation_error(section: str, exc: ValidationError) -> str:
    problems = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "(section)"
        problems.append(f"{section}.{location}: {error['msg']}")
    return "; ".join(problems)


def parse_config_text(text: str, overrides: Iterable[str] = (), source: str = "<string>") -> LevisimConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    _apply_overrides(parser, overrides)

    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {unknown}")

    sections = {}
    for name, model in SECTIONS.items():
        raw = dict(parser.items(name)) if parser.has_section(name) else {}
        for key in model.model_fields:
            if key not in raw:
                logger.warning(f"{source}: [{name}] {key} not set, using default {model.model_fields[key].default!r}")
        try:
            sections[name] = model(**raw)
        except ValidationError as exc:
            raise ConfigError(f"{source}: {_format_validation_error(name, exc)}") from exc
    config = LevisimConfig(**sections)
    logger.info(f"Loaded config {source} (hash {config.config_hash()})")
    return config


def load_config(path, overrides: Iterable[str] = ()) -> LevisimConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, overrides, source=str(path))
