"""Eight-legged robot model: morphology, joint stiffness, tendon actuation, crouch geometry.

Each leg is a planar-dominant chain body -> J2 -> J3 -> J4 -> foot with
segments femur, tibia, metatarsus and tarsus. J1 (the merged coxa/trochanter
joint) sits at the body node. Joint angles are measured in the leg's crouch
plane, the vertical plane through its mount azimuth:

* pitch flexion ``phi`` of joint j is the drop in segment elevation across it
  (J1 measures the femur against the body's vertical axis), so a straight leg
  pointing up has zero flexion and curling the leg increases it;
* lateral deflection ``psi`` is the change of out-of-plane angle across it.

Legs are numbered 1-4 on the left side and 5-8 on the right, front to rear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import ConstructionError, Node, ThreadSegment, graph_document

PAIRS = ("front", "second", "third", "rear")
SIDES = ("left", "right")
PREBEND_SET_DEG = (5.0, 15.0, 30.0, 45.0, 60.0, 75.0)

# Segment/tarsus length ratios (femur, tibia, metatarsus, tarsus) per leg pair.
TABLE1_RATIOS = {
    "front": (3.1, 2.83, 2.5, 1.0),
    "second": (1.7, 2.36, 1.55, 1.0),
    "third": (1.4, 2.0, 1.32, 1.0),
    "rear": (2.4, 2.83, 1.81, 1.0),
}

# Placeholder effective moduli (Pa) for the three silicone blends. Case 1 is
# the pure Sylgard blend and the stiffest; Dragon Skin content softens it.
DEFAULT_MODULI = {1: 1.5e6, 2: 0.6e6, 3: 0.35e6}


class UnreachableFoot(ValueError):
    """The foot lies farther from the hip axis than the leg can reach."""


@dataclass(frozen=True)
class SegmentRatioTable:
    ratios: dict = field(default_factory=lambda: dict(TABLE1_RATIOS))

    def __post_init__(self):
        for pair in PAIRS:
            row = self.ratios.get(pair)
            if row is None or len(row) != 4:
                raise ConstructionError(f"ratio table needs 4 ratios for pair {pair!r}")
            if any(not c > 0 for c in row):
                raise ConstructionError(f"ratios must be > 0, got {row} for {pair!r}")
            if row[3] != 1.0:
                raise ConstructionError(f"tarsus ratio C4 must be 1, got {row[3]} for {pair!r}")


@dataclass(frozen=True)
class JointSpec:
    rest_angle: float
    pitch_stiffness: float
    lateral_stiffness: float
    rotational_damping: float
    tendon_moment_arm: float

    def validate(self) -> None:
        if not (self.pitch_stiffness > 0 and self.lateral_stiffness > 0):
            raise ConstructionError("joint stiffnesses must be > 0")
        if not self.tendon_moment_arm > 0:
            raise ConstructionError("tendon_moment_arm must be > 0")
        if self.rotational_damping < 0:
            raise ConstructionError("rotational_damping must be >= 0")


@dataclass(frozen=True)
class JointMaterialSpec:
    material_case: int = 1
    cross_section: str = "thickened"
    width: float = 0.012
    height: float = 0.008
    joint_length: float = 0.01
    effective_modulus: float | None = None

    @property
    def modulus(self) -> float:
        return DEFAULT_MODULI[self.material_case] if self.effective_modulus is None else self.effective_modulus

    def validate(self) -> None:
        if self.material_case not in (1, 2, 3):
            raise ConstructionError(f"material_case must be 1, 2 or 3, got {self.material_case}")
        if self.cross_section not in ("regular", "thickened"):
            raise ConstructionError(f"cross_section must be 'regular' or 'thickened', got {self.cross_section!r}")
        if not (self.width > 0 and self.height > 0 and self.joint_length > 0 and self.modulus > 0):
            raise ConstructionError("joint material dimensions and modulus must be > 0")
        if self.cross_section == "thickened" and not self.width > self.height:
            raise ConstructionError("a thickened cross-section needs width > height")


@dataclass(frozen=True)
class LegSpec:
    pair_index: str
    side: str
    segment_lengths: tuple[float, float, float, float]
    joints: tuple[JointSpec, JointSpec, JointSpec, JointSpec]
    segment_linear_density: float
    foot_ring: int

    @property
    def total_length(self) -> float:
        return float(sum(self.segment_lengths))

    @property
    def mass(self) -> float:
        return self.segment_linear_density * self.total_length

    @property
    def moment_arms(self) -> np.ndarray:
        return np.array([j.tendon_moment_arm for j in self.joints])

    @property
    def pitch_stiffnesses(self) -> np.ndarray:
        return np.array([j.pitch_stiffness for j in self.joints])

    @property
    def rest_angles(self) -> np.ndarray:
        return np.array([j.rest_angle for j in self.joints])


@dataclass(frozen=True)
class SpiderSpec:
    body_mass: float
    legs: tuple[LegSpec, ...]
    mount_azimuths: tuple[float, ...]
    tarsus_base_length: float
    cable_series_stiffness: float
    segment_axial_stiffness: float = 5000.0
    segment_damping: float = 2.0

    @property
    def total_mass(self) -> float:
        return self.body_mass + sum(leg.mass for leg in self.legs)

    def validate(self) -> None:
        if len(self.legs) != 8 or len(self.mount_azimuths) != 8:
            raise ConstructionError("a spider needs exactly 8 legs and 8 mount azimuths")
        if [leg.side for leg in self.legs] != ["left"] * 4 + ["right"] * 4:
            raise ConstructionError("legs 1-4 must be on the left side and 5-8 on the right")
        if [leg.pair_index for leg in self.legs] != list(PAIRS) * 2:
            raise ConstructionError("legs must run front, second, third, rear on each side")
        for i in range(4):
            left, right = self.mount_azimuths[i], self.mount_azimuths[i + 4]
            mirrored = math.remainder(math.pi - left - right, 2 * math.pi)
            if abs(mirrored) > 1e-9:
                raise ConstructionError(f"mount azimuths of legs {i + 1} and {i + 5} are not mirror images")
        if self.body_mass < 0 or not self.total_mass > 0:
            raise ConstructionError("body mass must be >= 0 and total mass > 0")
        if not self.cable_series_stiffness > 0:
            raise ConstructionError("cable_series_stiffness must be > 0")
        for leg in self.legs:
            if any(not s > 0 for s in leg.segment_lengths):
                raise ConstructionError("segment lengths must be > 0")
            if leg.segment_linear_density < 0:
                raise ConstructionError("segment_linear_density must be >= 0")
            for j in leg.joints:
                j.validate()


@dataclass(frozen=True)
class MotorProfile:
    max_rotation: float = math.pi
    pulley_radius: float = 0.01
    ramp_up: float = 0.3
    hold: float = 0.0
    ramp_down: float = 0.3
    start_time: float = 0.4

    @property
    def duration(self) -> float:
        return self.ramp_up + self.hold + self.ramp_down

    def validate(self) -> None:
        if not 0.0 <= self.max_rotation <= 2 * math.pi:
            raise ConstructionError(f"max_rotation must be in [0, 2*pi], got {self.max_rotation}")
        if min(self.ramp_up, self.hold, self.ramp_down, self.start_time) < 0:
            raise ConstructionError("motor durations must be >= 0")
        if not self.duration > 0:
            raise ConstructionError("total crouch cycle duration must be > 0")
        if not self.pulley_radius > 0:
            raise ConstructionError("pulley_radius must be > 0")


@dataclass(frozen=True)
class CrouchDepthReport:
    delta_h: float
    initial_depth: float
    crouched_depth: float


def default_mount_azimuths() -> tuple[float, ...]:
    """Uniform bilateral placement: 45 deg apart, none on the sagittal plane."""
    step = math.pi / 4
    left = [math.pi / 2 + step / 2 + step * i for i in range(4)]
    right = [math.pi / 2 - step / 2 - step * i for i in range(4)]
    return tuple(math.remainder(a, 2 * math.pi) % (2 * math.pi) for a in left + right)


def segment_lengths_from_ratios(table: SegmentRatioTable, pair: str, tarsus_base_length: float) -> tuple[float, ...]:
    if not tarsus_base_length > 0:
        raise ConstructionError("tarsus_base_length must be > 0")
    return tuple(c * tarsus_base_length for c in table.ratios[pair])


def joint_stiffness(material: JointMaterialSpec) -> tuple[float, float]:
    """Slender rectangular beam bending stiffness E*I/L about the pitch and lateral axes."""
    material.validate()
    w, h, length = material.width, material.height, material.joint_length
    i_pitch = w * h**3 / 12.0
    i_lateral = h * w**3 / 12.0
    return material.modulus * i_pitch / length, material.modulus * i_lateral / length


def cable_retraction(profile: MotorProfile, t: float) -> float:
    """Cable length taken up by the pulley at time ``t`` (trapezoidal motor angle)."""
    return profile.pulley_radius * motor_angle(profile, t)


def motor_angle(profile: MotorProfile, t: float) -> float:
    tau = t - profile.start_time
    if tau <= 0.0 or tau >= profile.duration:
        return 0.0
    if tau < profile.ramp_up:
        return profile.max_rotation * tau / profile.ramp_up
    tau -= profile.ramp_up
    if tau <= profile.hold:
        return profile.max_rotation
    tau -= profile.hold
    return profile.max_rotation * (1.0 - tau / profile.ramp_down)


def cable_tension(retraction: float, moment_arms, joint_deflections, cable_series_stiffness: float) -> float:
    """Series-elastic tendon tension.

    Only flexion beyond the rest angle takes up cable; an extended joint
    leaves the cable slack, so zero retraction always means zero tension.
    """
    taken_up = float(np.dot(moment_arms, np.maximum(np.asarray(joint_deflections, dtype=float), 0.0)))
    return cable_series_stiffness * max(0.0, retraction - taken_up)


def actuation_torques(retraction: float, leg: LegSpec, joint_deflections, cable_series_stiffness: float):
    """Return ``(cable_tension, torques)``; torque on joint i is tension * moment arm i."""
    if retraction < 0:
        raise ValueError("retraction must be >= 0")
    arms = leg.moment_arms
    tension = cable_tension(retraction, arms, joint_deflections, cable_series_stiffness)
    return tension, tension * arms


def cable_equilibrium(retraction: float, leg: LegSpec, cable_series_stiffness: float):
    """Static crouch of an isolated leg: angular springs against the tendon.

    With deflection ``T*a_i/k_i`` per joint the tendon closure
    ``T = kc*(s - sum a_i^2 T/k_i)`` is linear in ``T``.
    Returns ``(tension, deflections)``.
    """
    arms = leg.moment_arms
    k = leg.pitch_stiffnesses
    compliance = float(np.sum(arms**2 / k))
    tension = cable_series_stiffness * max(retraction, 0.0) / (1.0 + cable_series_stiffness * compliance)
    return tension, tension * arms / k


def crouch_depth(total_chord_rest: float, total_chord_crouched: float, foot_radius: float) -> CrouchDepthReport:
    """Body height change for a hip hanging below the hub with feet on a ring of radius ``foot_radius``."""
    if not (total_chord_rest > 0 and total_chord_crouched > 0) or foot_radius < 0:
        raise ValueError("chords must be > 0 and foot_radius >= 0")
    if total_chord_rest < foot_radius:
        raise UnreachableFoot(f"chord {total_chord_rest} m cannot span foot radius {foot_radius} m")

    def depth(c: float) -> float:
        return math.sqrt(c * c - foot_radius * foot_radius) if c > foot_radius else 0.0

    h0, h1 = depth(total_chord_rest), depth(total_chord_crouched)
    return CrouchDepthReport(h0 - h1, h0, h1)


def planar_chain(lengths, flexions) -> np.ndarray:
    """Joint positions (r, z) in the crouch plane, hip first, for given pitch flexions."""
    alpha = math.pi / 2 - np.cumsum(flexions)
    steps = np.stack([np.asarray(lengths) * np.cos(alpha), np.asarray(lengths) * np.sin(alpha)], axis=1)
    return np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])


def natural_flexions(lengths, reach: float, height: float) -> np.ndarray:
    """Pitch flexions (J1, then a shared bend for J2-J4) placing the foot at (reach, height)."""
    from scipy.optimize import fsolve

    target = np.array([reach, height])
    chord = float(np.hypot(reach, height))
    if chord >= sum(lengths):
        raise UnreachableFoot(f"foot at {chord:.4f} m is beyond leg length {sum(lengths):.4f} m")

    def residual(x):
        return planar_chain(lengths, [x[0], x[1], x[1], x[1]])[-1] - target

    guess = np.array([math.pi / 2 - math.atan2(height, reach) - 0.3, 0.2])
    sol, info, ok, msg = fsolve(residual, guess, full_output=True)
    if ok != 1 or np.max(np.abs(residual(sol))) > 1e-10:
        raise UnreachableFoot(f"no natural posture found: {msg}")
    return np.array([sol[0], sol[1], sol[1], sol[1]])


def leg_basis(azimuth: float) -> tuple[np.ndarray, np.ndarray]:
    """Outward radial unit vector and crouch-plane normal for a mount azimuth."""
    r_hat = np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
    n_hat = np.array([-math.sin(azimuth), math.cos(azimuth), 0.0])
    return r_hat, n_hat


@dataclass(frozen=True)
class JointDef:
    leg: int
    index: int
    nodes: tuple[int, int, int]  # prev (-1 = body axis), mid, next
    spec: JointSpec


@dataclass(frozen=True)
class RobotGraph:
    spec: SpiderSpec
    nodes: tuple[Node, ...]
    edges: tuple[ThreadSegment, ...]
    joints: tuple[JointDef, ...]
    leg_nodes: tuple[tuple[int, int, int, int], ...]  # J2, J3, J4, foot per leg
    body_id: int = 0

    @property
    def positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes], dtype=float)

    def to_document(self) -> dict:
        joints = [{"leg": j.leg + 1, "joint": j.index + 1, "nodes": list(j.nodes), "rest_angle": j.spec.rest_angle,
                   "pitch_stiffness": j.spec.pitch_stiffness, "lateral_stiffness": j.spec.lateral_stiffness}
                  for j in self.joints]
        return graph_document(self.nodes, self.edges, body_id=self.body_id, joints=joints,
                              legs=[list(ids) for ids in self.leg_nodes])


def build_spider(spec: SpiderSpec) -> RobotGraph:
    """Point-mass robot at its rest posture with the body node at the origin."""
    spec.validate()
    positions = [np.zeros(3)]
    masses = [spec.body_mass]
    edges: list[ThreadSegment] = []
    joints: list[JointDef] = []
    leg_nodes = []
    for li, (leg, az) in enumerate(zip(spec.legs, spec.mount_azimuths)):
        r_hat, _ = leg_basis(az)
        chain = planar_chain(leg.segment_lengths, leg.rest_angles)
        ids = [0]
        for r, z in chain[1:]:
            ids.append(len(positions))
            positions.append(r * r_hat + np.array([0.0, 0.0, z]))
            masses.append(0.0)
        for s, length in enumerate(leg.segment_lengths):
            a, b = ids[s], ids[s + 1]
            lumped = 0.5 * leg.segment_linear_density * length
            masses[a] += lumped
            masses[b] += lumped
            edges.append(ThreadSegment((a, b), length, spec.segment_axial_stiffness, spec.segment_damping,
                                       "leg_segment", leg.segment_linear_density))
        for j in range(4):
            prev = -1 if j == 0 else ids[j - 1]
            joints.append(JointDef(li, j, (prev, ids[j], ids[j + 1]), leg.joints[j]))
        leg_nodes.append(tuple(ids[1:]))
    nodes = tuple(Node(i, tuple(float(c) for c in p), float(m), False) for i, (p, m) in enumerate(zip(positions, masses)))
    return RobotGraph(spec, nodes, tuple(edges), tuple(joints), tuple(leg_nodes))


def mirror_spider(spec: SpiderSpec) -> SpiderSpec:
    """Reflect across the sagittal (x = 0) plane: swap sides, azimuth -> pi - azimuth."""
    legs = tuple(replace(leg, side="right" if leg.side == "left" else "left") for leg in spec.legs)
    legs = legs[4:] + legs[:4]
    az = tuple((math.pi - a) % (2 * math.pi) for a in spec.mount_azimuths)
    return replace(spec, legs=legs, mount_azimuths=az[4:] + az[:4])
