"""Coupled web + robot (+ prey) system flattened into arrays for the integrators."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares, minimize_scalar, root

from ._kernels import Packed
from .graph import ConstructionError, graph_document
from .spider import RobotGraph, UnreachableFoot, leg_basis, planar_chain
from .web import PlacementError, WebGraph

EDGE_KIND_CODES = {"radial": 0, "spiral": 1, "leg_segment": 2, "body": 3, "cable": 4}


@dataclass(frozen=True, eq=False)
class System:
    positions: np.ndarray
    masses: np.ndarray
    anchored: np.ndarray
    edge_i: np.ndarray
    edge_j: np.ndarray
    rest_length: np.ndarray
    axial_stiffness: np.ndarray
    damping: np.ndarray
    tension_only: np.ndarray
    edge_kind: np.ndarray
    seg_a: np.ndarray
    seg_b: np.ndarray
    seg_r: np.ndarray
    seg_n: np.ndarray
    joint_in: np.ndarray
    joint_out: np.ndarray
    joint_leg: np.ndarray
    pitch_stiffness: np.ndarray
    lateral_stiffness: np.ndarray
    rotational_damping: np.ndarray
    rest_flexion: np.ndarray
    moment_arm: np.ndarray
    cable_stiffness: np.ndarray
    sensor_nodes: np.ndarray
    foot_nodes: np.ndarray
    body_id: int
    n_web: int
    web: WebGraph | None = None
    robot: RobotGraph | None = None

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def n_legs(self) -> int:
        return self.cable_stiffness.shape[0]

    def packed(self, profile=None, gravity: float = 9.81) -> Packed:
        inv_mass = np.zeros(self.n_nodes)
        free = ~self.anchored
        if np.any(self.masses[free] <= 0):
            raise ConstructionError("every non-anchored node needs positive mass")
        inv_mass[free] = 1.0 / self.masses[free]
        prof = np.zeros(6) if profile is None else np.array(
            [profile.max_rotation, profile.pulley_radius, profile.ramp_up, profile.hold, profile.ramp_down,
             profile.start_time], dtype=float)
        return Packed(
            self.masses, inv_mass, free,
            self.edge_i, self.edge_j, self.rest_length, self.axial_stiffness, self.damping, self.tension_only,
            self.seg_a, self.seg_b, self.seg_r, self.seg_n,
            self.joint_in, self.joint_out, self.joint_leg, self.pitch_stiffness, self.lateral_stiffness,
            self.rotational_damping, self.rest_flexion, self.moment_arm,
            self.cable_stiffness, prof, float(gravity),
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name in ("positions", "masses", "anchored", "edge_i", "edge_j", "rest_length", "axial_stiffness",
                     "damping", "tension_only", "seg_a", "seg_b", "seg_r", "seg_n", "joint_in", "joint_out",
                     "joint_leg", "pitch_stiffness", "lateral_stiffness", "rotational_damping", "rest_flexion",
                     "moment_arm", "cable_stiffness", "sensor_nodes"):
            arr = np.ascontiguousarray(getattr(self, name))
            h.update(name.encode())
            h.update(str(arr.dtype).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def to_document(self) -> dict:
        from .graph import Node, ThreadSegment

        kinds = {v: k for k, v in EDGE_KIND_CODES.items()}
        nodes = [Node(i, tuple(float(c) for c in self.positions[i]), float(self.masses[i]), bool(self.anchored[i]))
                 for i in range(self.n_nodes)]
        edges = [ThreadSegment((int(a), int(b)), float(l0), float(ea), float(c), kinds[int(k)])
                 for a, b, l0, ea, c, k in zip(self.edge_i, self.edge_j, self.rest_length, self.axial_stiffness,
                                               self.damping, self.edge_kind)]
        return graph_document(nodes, edges, body_id=self.body_id, sensor_nodes=self.sensor_nodes.tolist(),
                              foot_nodes=self.foot_nodes.tolist(), n_web=self.n_web)


def _empty_int(n=0):
    return np.zeros(n, dtype=np.int64)


def web_only(web: WebGraph) -> System:
    """System holding just the web (useful for static checks of the threads)."""
    return _assemble(web, None, None)


def nearest_radial(web: WebGraph, azimuth: float) -> int:
    spec = web.spec
    diffs = [abs(math.remainder(spec.radial_azimuth(r) - azimuth, 2 * math.pi)) for r in range(spec.radial_count)]
    return int(np.argmin(diffs))


def foot_targets(web: WebGraph, robot: RobotGraph) -> list[int]:
    ids = []
    for leg, az in zip(robot.spec.legs, robot.spec.mount_azimuths):
        key = (nearest_radial(web, az), leg.foot_ring)
        if key not in web.intersection_index:
            raise PlacementError(f"foot ring {leg.foot_ring} does not exist on this web")
        ids.append(web.intersection_index[key])
    return ids


def _leg_posture(lengths, k, rest, reach, height):
    """Flexions closest (stiffness-weighted) to ``rest`` that put the foot at (reach, height).

    Solves the stationarity conditions K (x - rest) = J(x)^T mu together with
    the foot constraint.
    """
    lengths = np.asarray(lengths, dtype=float)
    k = np.asarray(k, dtype=float)
    rest = np.asarray(rest, dtype=float)
    target = np.array([reach, height])
    if np.hypot(reach, height) >= lengths.sum() * (1 - 1e-9):
        raise UnreachableFoot(f"foot at distance {np.hypot(reach, height):.4f} m is beyond reach {lengths.sum():.4f} m")

    def kkt(u):
        x, mu = u[:4], u[4:]
        alpha = math.pi / 2 - np.cumsum(x)
        end = np.array([np.sum(lengths * np.cos(alpha)), np.sum(lengths * np.sin(alpha))])
        tail_r = np.cumsum((lengths * np.sin(alpha))[::-1])[::-1]
        tail_z = np.cumsum((-lengths * np.cos(alpha))[::-1])[::-1]
        jac = np.stack([tail_r, tail_z])
        return np.concatenate([k * (x - rest) - jac.T @ mu, end - target])

    def end_point(x):
        alpha = math.pi / 2 - np.cumsum(x)
        return np.array([np.sum(lengths * np.cos(alpha)), np.sum(lengths * np.sin(alpha))])

    # Penalty continuation gives a good start; the stationarity system then polishes it.
    sk = np.sqrt(k)
    x = np.asarray(rest, dtype=float).copy()
    weight = 1.0
    for weight in (1e2, 1e4, 1e6, 1e8):
        w = math.sqrt(weight)
        x = least_squares(lambda v: np.concatenate([sk * (v - rest), w * (end_point(v) - target)]), x,
                          xtol=1e-15, ftol=1e-15, gtol=1e-15).x
    mu0 = -weight * (end_point(x) - target)
    sol = root(kkt, np.concatenate([x, mu0]), method="hybr", options={"xtol": 1e-13})
    if not np.max(np.abs(kkt(sol.x))) <= 1e-9:
        raise UnreachableFoot(f"could not place leg: {sol.message}")
    x = sol.x[:4]
    return x, float(np.sum(k * (x - rest) ** 2))


def _assemble(web: WebGraph, robot: RobotGraph | None, body_depth: float | None) -> System:
    positions = [np.array(n.position, dtype=float) for n in web.nodes]
    masses = [n.mass for n in web.nodes]
    anchored = [n.anchored for n in web.nodes]
    ei, ej, rest, stiff, damp, tonly, kind = [], [], [], [], [], [], []
    for e in web.edges:
        ei.append(e.endpoints[0]); ej.append(e.endpoints[1])
        rest.append(e.rest_length); stiff.append(e.axial_stiffness); damp.append(e.damping)
        tonly.append(True); kind.append(EDGE_KIND_CODES[e.kind])
    n_web = len(positions)
    seg_a, seg_b, seg_r, seg_n = [], [], [], []
    j_in, j_out, j_leg, kp, kl, cr, jrest, arm = [], [], [], [], [], [], [], []
    kc, sensors, feet = [], [], []
    body_id = -1

    if robot is not None:
        spec = robot.spec
        feet = foot_targets(web, robot)
        web_pos = web.positions
        reach = [float(np.hypot(*web_pos[f, :2])) for f in feet]
        legs = spec.legs

        def total_energy(h):
            return sum(_leg_posture(leg.segment_lengths, leg.pitch_stiffnesses, leg.rest_angles, r, h)[1]
                       for leg, r in zip(legs, reach))

        if body_depth is None:
            hmax = min(math.sqrt(max(sum(l.segment_lengths) ** 2 - r * r, 0.0)) for l, r in zip(legs, reach))
            if hmax <= 0:
                raise UnreachableFoot("some foot is farther than its leg can reach")
            body_depth = minimize_scalar(total_energy, bounds=(0.05 * hmax, 0.98 * hmax), method="bounded",
                                         options={"xatol": 1e-6}).x
        body_id = len(positions)
        positions.append(np.array([0.0, 0.0, -body_depth]))
        rnodes = robot.nodes
        masses.append(rnodes[robot.body_id].mass)
        anchored.append(False)
        for li, (leg, az, foot, r) in enumerate(zip(legs, spec.mount_azimuths, feet, reach)):
            flex, _ = _leg_posture(leg.segment_lengths, leg.pitch_stiffnesses, leg.rest_angles, r, body_depth)
            chain = planar_chain(leg.segment_lengths, flex)
            direction = web_pos[foot, :2] / r
            rid = list(robot.leg_nodes[li])
            ids = [body_id]
            for (cr_, cz), rn in zip(chain[1:4], rid[:3]):
                ids.append(len(positions))
                positions.append(np.array([cr_ * direction[0], cr_ * direction[1], cz - body_depth]))
                masses.append(rnodes[rn].mass)
                anchored.append(False)
            ids.append(foot)
            masses[foot] += rnodes[rid[3]].mass
            r_hat, n_hat = leg_basis(math.atan2(direction[1], direction[0]))
            first_seg = len(seg_a)
            for s in range(4):
                a, b = ids[s], ids[s + 1]
                seg_a.append(a); seg_b.append(b); seg_r.append(r_hat); seg_n.append(n_hat)
                ei.append(a); ej.append(b)
                rest.append(leg.segment_lengths[s]); stiff.append(spec.segment_axial_stiffness)
                damp.append(spec.segment_damping); tonly.append(False); kind.append(EDGE_KIND_CODES["leg_segment"])
            for j, js in enumerate(leg.joints):
                j_in.append(-1 if j == 0 else first_seg + j - 1)
                j_out.append(first_seg + j)
                j_leg.append(li)
                kp.append(js.pitch_stiffness); kl.append(js.lateral_stiffness)
                cr.append(js.rotational_damping); jrest.append(js.rest_angle); arm.append(js.tendon_moment_arm)
            kc.append(spec.cable_series_stiffness)
            sensors.append(ids[3])

    f64 = lambda v, shape=None: np.array(v, dtype=float).reshape(shape) if shape else np.array(v, dtype=float)
    i64 = lambda v: np.array(v, dtype=np.int64)
    return System(
        positions=f64(positions, (-1, 3)), masses=f64(masses), anchored=np.array(anchored, dtype=bool),
        edge_i=i64(ei), edge_j=i64(ej), rest_length=f64(rest), axial_stiffness=f64(stiff), damping=f64(damp),
        tension_only=np.array(tonly, dtype=bool), edge_kind=i64(kind),
        seg_a=i64(seg_a), seg_b=i64(seg_b), seg_r=f64(seg_r, (-1, 3)) if seg_r else np.zeros((0, 3)),
        seg_n=f64(seg_n, (-1, 3)) if seg_n else np.zeros((0, 3)),
        joint_in=i64(j_in), joint_out=i64(j_out), joint_leg=i64(j_leg), pitch_stiffness=f64(kp),
        lateral_stiffness=f64(kl), rotational_damping=f64(cr), rest_flexion=f64(jrest), moment_arm=f64(arm),
        cable_stiffness=f64(kc), sensor_nodes=i64(sensors), foot_nodes=i64(feet), body_id=body_id, n_web=n_web,
        web=web, robot=robot,
    )


def assemble(web: WebGraph, robot: RobotGraph, body_depth: float | None = None) -> System:
    """Hang ``robot`` beneath the hub with each foot welded to its web node.

    Legs are placed in the vertical plane through their foot at the
    stiffness-weighted posture closest to their rest flexions; when
    ``body_depth`` is None the depth minimizing total joint strain is used.
    """
    return _assemble(web, robot, body_depth)
