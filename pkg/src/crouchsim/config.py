"""Experiment configuration: a nested YAML document mapped onto frozen dataclasses.

Every section is strict: unknown keys raise :class:`ConfigError` so a typo
cannot silently fall back to a default. Omitted keys take the defaults
below. ``dump_config(load_config(text))`` re-parses to an equal object.

Schema (all keys optional)::

    web:      WebSpec fields
    prey:     null | PreySpec fields
    spider:   SpiderConfig fields (morphology, joints, tendon)
    motor:    MotorProfile fields
    sim:      SimConfig fields
    analysis: AnalysisConfig fields
    trials:   int
    output_dir: str
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .dynamics import SimConfig
from .graph import ConstructionError
from .spider import (
    PAIRS,
    SIDES,
    TABLE1_RATIOS,
    JointMaterialSpec,
    JointSpec,
    LegSpec,
    MotorProfile,
    SegmentRatioTable,
    SpiderSpec,
    default_mount_azimuths,
    joint_stiffness,
    natural_flexions,
    segment_lengths_from_ratios,
)
from .web import PreySpec, WebSpec

SHIPPED_CONFIGS = ("paper.default", "paper.prey")


class ConfigError(ValueError):
    """The configuration document is malformed or inconsistent."""


@dataclass(frozen=True)
class SpiderConfig:
    """Config-level description of the robot, turned into a :class:`SpiderSpec` for a given web.

    Rest (pre-bend) angles default to the natural posture: the one that
    places every foot on its ring with the body ``standing_height`` below
    the web plane and joints J2-J4 sharing a common bend.
    """

    total_mass: float = 0.8
    leg_mass_fraction: float = 0.55
    tarsus_base_length: float = 0.04
    standing_height: float = 0.13
    foot_rings: dict = field(default_factory=lambda: {"front": 7, "second": 5, "third": 5, "rear": 5})
    mount_azimuths_deg: tuple | None = None
    rest_angles_deg: dict | None = None
    pitch_stiffness: float = 2.0
    lateral_stiffness: float = 4.0
    rotational_damping: float = 0.02
    tendon_moment_arm: float = 0.01
    material: JointMaterialSpec | None = None
    cable_series_stiffness: float = 2000.0
    segment_axial_stiffness: float = 5000.0
    segment_damping: float = 2.0

    def validate(self) -> None:
        if not self.total_mass > 0:
            raise ConfigError("spider.total_mass must be > 0")
        if not 0 <= self.leg_mass_fraction < 1:
            raise ConfigError("spider.leg_mass_fraction must lie in [0, 1)")
        if set(self.foot_rings) != set(PAIRS):
            raise ConfigError(f"spider.foot_rings needs exactly the keys {list(PAIRS)}")
        if self.rest_angles_deg is not None:
            if set(self.rest_angles_deg) != set(PAIRS) or any(len(v) != 4 for v in self.rest_angles_deg.values()):
                raise ConfigError("spider.rest_angles_deg maps every pair to 4 angles")
        if self.mount_azimuths_deg is not None and len(self.mount_azimuths_deg) != 8:
            raise ConfigError("spider.mount_azimuths_deg needs 8 angles")
        for name in ("tarsus_base_length", "standing_height", "pitch_stiffness", "lateral_stiffness",
                     "tendon_moment_arm", "cable_series_stiffness", "segment_axial_stiffness"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"spider.{name} must be > 0")
        if self.rotational_damping < 0 or self.segment_damping < 0:
            raise ConfigError("damping values must be >= 0")

    def joint_stiffnesses(self) -> tuple[float, float]:
        if self.material is not None:
            return joint_stiffness(self.material)
        return self.pitch_stiffness, self.lateral_stiffness

    def to_spec(self, web: WebSpec) -> SpiderSpec:
        """Concrete morphology for ``web`` (the web fixes where the feet sit, hence the rest posture)."""
        self.validate()
        table = SegmentRatioTable()
        kp, kl = self.joint_stiffnesses()
        lengths = {p: segment_lengths_from_ratios(table, p, self.tarsus_base_length) for p in PAIRS}
        total_leg_length = 2 * sum(sum(v) for v in lengths.values())
        density = self.leg_mass_fraction * self.total_mass / total_leg_length
        legs = []
        for side in SIDES:
            for p in PAIRS:
                ring = int(self.foot_rings[p])
                if self.rest_angles_deg is not None:
                    rest = [math.radians(a) for a in self.rest_angles_deg[p]]
                else:
                    rest = natural_flexions(lengths[p], web.ring_radius(ring), self.standing_height)
                joints = tuple(JointSpec(float(a), kp, kl, self.rotational_damping, self.tendon_moment_arm)
                               for a in rest)
                legs.append(LegSpec(p, side, lengths[p], joints, density, ring))
        leg_mass = sum(leg.mass for leg in legs)
        az = (default_mount_azimuths() if self.mount_azimuths_deg is None
              else tuple(math.radians(a) for a in self.mount_azimuths_deg))
        spec = SpiderSpec(self.total_mass - leg_mass, tuple(legs), az, self.tarsus_base_length,
                          self.cable_series_stiffness, self.segment_axial_stiffness, self.segment_damping)
        spec.validate()
        return spec


@dataclass(frozen=True)
class AnalysisConfig:
    filter_cutoff: float = 25.0
    filter_order: int = 4
    window: tuple = (0.3, 11.0)
    taper: str = "none"
    peak_band: tuple = (1.0, 25.0)
    baseline_band: tuple = (3.0, 5.0)
    prey_band: tuple = (5.0, 6.0)
    min_legs: int = 5
    min_prominence: float | None = None
    decay_fraction: float = 0.1

    def validate(self) -> None:
        if self.filter_order < 2 or self.filter_order % 2:
            raise ConfigError("analysis.filter_order must be a positive even integer")
        for name in ("window", "peak_band", "baseline_band", "prey_band"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"analysis.{name} must be (low, high) with low < high")
        if self.taper not in ("none", "hann"):
            raise ConfigError("analysis.taper must be 'none' or 'hann'")
        if not 1 <= self.min_legs <= 8:
            raise ConfigError("analysis.min_legs must lie in 1..8")


@dataclass(frozen=True)
class ExperimentConfig:
    web: WebSpec = field(default_factory=WebSpec)
    spider: SpiderConfig = field(default_factory=SpiderConfig)
    prey: PreySpec | None = None
    motor: MotorProfile = field(default_factory=MotorProfile)
    sim: SimConfig = field(default_factory=SimConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    trials: int = 7
    output_dir: str = "runs/default"

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        try:
            self.web.validate()
            if self.prey is not None:
                self.prey.validate()
            self.spider.validate()
            self.motor.validate()
            self.sim.validate()
        except (ConstructionError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        self.analysis.validate()
        if self.analysis.window[1] > self.sim.duration + 1e-12:
            raise ConfigError("analysis.window ends after the simulated duration")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# (de)serialization

_TUPLE_FIELDS = {"window", "peak_band", "baseline_band", "prey_band", "mount_azimuths_deg"}


def _section(cls, data: Any, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and value is not None:
            value = tuple(float(v) for v in value)
        elif key == "rest_angles_deg" and value is not None:
            value = {str(k): tuple(float(a) for a in v) for k, v in value.items()}
        elif key == "foot_rings":
            value = {str(k): int(v) for k, v in value.items()}
        elif key == "material" and value is not None:
            value = _section(JointMaterialSpec, value, f"{where}.material")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("the config document must be a mapping")
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {}
    sections = {"web": WebSpec, "spider": SpiderConfig, "motor": MotorProfile, "sim": SimConfig,
                "analysis": AnalysisConfig}
    for name, cls in sections.items():
        if name in data:
            kwargs[name] = _section(cls, data[name], name)
    if data.get("prey") is not None:
        kwargs["prey"] = _section(PreySpec, data["prey"], "prey")
    if "trials" in data:
        kwargs["trials"] = int(data["trials"])
    if "output_dir" in data:
        kwargs["output_dir"] = str(data["output_dir"])
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _plain(cfg)


def load_config(source) -> ExperimentConfig:
    """Parse YAML text, a path, or a shipped config name (``paper.default``, ``paper.prey``)."""
    if isinstance(source, str) and source in SHIPPED_CONFIGS:
        text = resources.files("crouchsim").joinpath("configs", f"{source}.yaml").read_text()
    elif isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        text = Path(source).read_text()
    elif isinstance(source, str) and source.endswith((".yaml", ".yml")) and "\n" not in source:
        raise ConfigError(f"config file not found: {source}")
    else:
        text = source
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
