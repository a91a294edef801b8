import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from crouchsim.config import SpiderConfig
from crouchsim.graph import ConstructionError
from crouchsim.spider import (
    PAIRS,
    JointMaterialSpec,
    JointSpec,
    LegSpec,
    MotorProfile,
    SegmentRatioTable,
    UnreachableFoot,
    actuation_torques,
    build_spider,
    cable_equilibrium,
    cable_retraction,
    crouch_depth,
    default_mount_azimuths,
    joint_stiffness,
    mirror_spider,
    natural_flexions,
    planar_chain,
    segment_lengths_from_ratios,
)
from crouchsim.web import WebSpec


def test_front_lengths_from_table():
    lengths = segment_lengths_from_ratios(SegmentRatioTable(), "front", 0.05)
    assert lengths == pytest.approx((0.155, 0.1415, 0.125, 0.05), abs=1e-12)


def test_identity_ratios_give_equal_lengths():
    table = SegmentRatioTable({p: (1.0, 1.0, 1.0, 1.0) for p in PAIRS})
    assert segment_lengths_from_ratios(table, "rear", 0.03) == pytest.approx((0.03,) * 4)


def test_third_pair_total_is_5_72_tarsi():
    assert sum(segment_lengths_from_ratios(SegmentRatioTable(), "third", 1.0)) == pytest.approx(5.72)


@settings(max_examples=30)
@given(t=st.floats(1e-3, 1.0), pair=st.sampled_from(PAIRS))
def test_lengths_scale_with_tarsus(t, pair):
    a = segment_lengths_from_ratios(SegmentRatioTable(), pair, t)
    b = segment_lengths_from_ratios(SegmentRatioTable(), pair, 2 * t)
    assert np.allclose(b, 2 * np.array(a), rtol=1e-12)


def test_ratio_table_validation():
    with pytest.raises(ConstructionError):
        SegmentRatioTable({p: (1.0, 1.0, 1.0, 2.0) for p in PAIRS})
    with pytest.raises(ConstructionError):
        SegmentRatioTable({"front": (1.0, 1.0, 1.0, 1.0)})


# ---------------------------------------------------------------------------
# joint stiffness


def test_square_section_is_isotropic():
    kp, kl = joint_stiffness(JointMaterialSpec(cross_section="regular", width=0.01, height=0.01))
    assert kp == pytest.approx(kl)


def test_doubling_width():
    base = JointMaterialSpec(cross_section="regular", width=0.008, height=0.008)
    kp0, kl0 = joint_stiffness(base)
    kp1, kl1 = joint_stiffness(JointMaterialSpec(cross_section="regular", width=0.016, height=0.008))
    assert kp1 / kp0 == pytest.approx(2.0)
    assert kl1 / kl0 == pytest.approx(8.0)


def test_doubling_modulus():
    a = joint_stiffness(JointMaterialSpec(effective_modulus=1e6))
    b = joint_stiffness(JointMaterialSpec(effective_modulus=2e6))
    assert b == pytest.approx(tuple(2 * v for v in a))


@settings(max_examples=40)
@given(w=st.floats(1e-3, 0.05), h=st.floats(1e-3, 0.05))
def test_anisotropy_follows_cross_section(w, h):
    kp, kl = joint_stiffness(JointMaterialSpec(cross_section="regular", width=w, height=h))
    assert (kl / kp > 1) == (w > h)


def test_material_validation():
    with pytest.raises(ConstructionError):
        joint_stiffness(JointMaterialSpec(material_case=4))
    with pytest.raises(ConstructionError):
        joint_stiffness(JointMaterialSpec(cross_section="thickened", width=0.005, height=0.008))


# ---------------------------------------------------------------------------
# motor and tendon


def test_retraction_profile():
    prof = MotorProfile(max_rotation=2 * math.pi, pulley_radius=0.01, ramp_up=0.3, hold=0.1, ramp_down=0.3,
                        start_time=0.4)
    assert cable_retraction(prof, 0.2) == 0.0
    assert cable_retraction(prof, 0.75) == pytest.approx(0.0628, abs=1e-4)
    assert cable_retraction(prof, 0.55) == pytest.approx(0.5 * 0.01 * 2 * math.pi)
    assert cable_retraction(prof, 1.2) == 0.0
    assert MotorProfile().max_rotation == pytest.approx(math.pi)


def test_motor_profile_validation():
    with pytest.raises(ConstructionError):
        MotorProfile(max_rotation=7.0).validate()
    with pytest.raises(ConstructionError):
        MotorProfile(ramp_up=0.0, hold=0.0, ramp_down=0.0).validate()


def _leg(arms=(0.01, 0.01, 0.01, 0.01), k=(1.0, 2.0, 3.0, 4.0)):
    joints = tuple(JointSpec(0.2, kk, 2 * kk, 0.0, a) for kk, a in zip(k, arms))
    return LegSpec("front", "left", (0.1, 0.1, 0.1, 0.04), joints, 0.1, 7)


def test_zero_retraction_means_no_torque():
    tension, torques = actuation_torques(0.0, _leg(), np.zeros(4), 1000.0)
    assert tension == 0.0
    assert np.all(torques == 0.0)


def test_equal_arms_give_equal_torques():
    tension, torques = actuation_torques(0.01, _leg(), np.zeros(4), 1000.0)
    assert tension == pytest.approx(10.0)
    assert np.allclose(torques, torques[0])


@settings(max_examples=30)
@given(s=st.floats(0.0, 0.05), defl=st.lists(st.floats(0.0, 2.0), min_size=4, max_size=4))
def test_slack_cable_carries_no_tension(s, defl):
    leg = _leg()
    taken_up = float(np.dot(leg.moment_arms, defl))
    tension, torques = actuation_torques(s, leg, defl, 1000.0)
    if s <= taken_up:
        assert tension == 0.0 and np.all(torques == 0.0)
    else:
        assert tension > 0


def test_static_tendon_equilibrium_matches_root_finding():
    leg = _leg(arms=(0.01, 0.012, 0.008, 0.006))
    kc, s = 800.0, 0.02
    tension, defl = cable_equilibrium(s, leg, kc)

    def closure(t):
        d = t * leg.moment_arms / leg.pitch_stiffnesses
        return t - kc * max(0.0, s - float(np.dot(leg.moment_arms, d)))

    oracle = brentq(closure, 0.0, kc * s)
    assert tension == pytest.approx(oracle, rel=1e-12)
    assert np.allclose(defl, tension * leg.moment_arms / leg.pitch_stiffnesses)
    t2, torques = actuation_torques(s, leg, defl, kc)
    assert t2 == pytest.approx(tension, rel=1e-12)
    assert np.allclose(torques, leg.pitch_stiffnesses * defl)


def test_negative_retraction_rejected():
    with pytest.raises(ValueError):
        actuation_torques(-0.01, _leg(), np.zeros(4), 100.0)


# ---------------------------------------------------------------------------
# crouch depth


def test_crouch_depth_oracle():
    rep = crouch_depth(0.30, 0.20, 0.15)
    expected = math.sqrt(0.09 - 0.0225) - math.sqrt(0.04 - 0.0225)
    assert rep.delta_h == pytest.approx(0.1275, abs=1e-4)
    assert rep.delta_h == pytest.approx(expected, abs=1e-12)
    assert rep.delta_h == pytest.approx(rep.initial_depth - rep.crouched_depth)


def test_vertical_leg_depth():
    assert crouch_depth(0.30, 0.20, 0.0).delta_h == pytest.approx(0.10)


def test_depth_clamps_when_crouched_chord_spans_radius():
    rep = crouch_depth(0.30, 0.10, 0.15)
    assert rep.crouched_depth == 0.0


def test_unreachable_foot():
    with pytest.raises(UnreachableFoot):
        crouch_depth(0.10, 0.05, 0.15)


@settings(max_examples=40)
@given(r1=st.floats(0.0, 0.19), dr=st.floats(1e-4, 0.05))
def test_depth_decreases_with_foot_radius(r1, dr):
    r2 = r1 + dr
    assert crouch_depth(0.30, 0.20, r2).initial_depth < crouch_depth(0.30, 0.20, r1).initial_depth


# ---------------------------------------------------------------------------
# assembled robot


def _spec():
    return SpiderConfig().to_spec(WebSpec())


def test_robot_has_33_mobile_nodes():
    robot = build_spider(_spec())
    assert len(robot.nodes) == 33
    assert len(robot.edges) == 32
    assert len(robot.joints) == 32


def test_robot_mass_is_total():
    spec = _spec()
    robot = build_spider(spec)
    assert sum(n.mass for n in robot.nodes) == pytest.approx(0.8)
    assert sum(leg.mass for leg in spec.legs) == pytest.approx(0.55 * 0.8)


def test_rest_posture_geometry():
    spec = _spec()
    robot = build_spider(spec)
    pos = robot.positions
    for leg, ids in zip(spec.legs, robot.leg_nodes):
        chain = [pos[0]] + [pos[i] for i in ids]
        lengths = [np.linalg.norm(b - a) for a, b in zip(chain[:-1], chain[1:])]
        assert np.allclose(lengths, leg.segment_lengths)


def test_natural_flexions_reach_target():
    lengths = segment_lengths_from_ratios(SegmentRatioTable(), "second", 0.04)
    flex = natural_flexions(lengths, 0.16, 0.13)
    tip = planar_chain(lengths, flex)[-1]
    assert tip == pytest.approx((0.16, 0.13), abs=1e-10)
    with pytest.raises(UnreachableFoot):
        natural_flexions(lengths, 1.0, 0.13)


def test_default_azimuths_are_bilateral():
    az = default_mount_azimuths()
    for i in range(4):
        assert math.remainder(math.pi - az[i] - az[i + 4], 2 * math.pi) == pytest.approx(0.0, abs=1e-12)
    assert all(abs(math.remainder(a - math.pi / 2, math.pi)) > 0.1 for a in az)


def test_mirror_symmetry_up_to_relabeling():
    spec = _spec()
    a = build_spider(spec)
    b = build_spider(mirror_spider(spec))
    pa = a.positions
    pb = b.positions * np.array([-1.0, 1.0, 1.0])
    # Round before sorting so mirrored pairs with equal height sort consistently.
    order = np.lexsort(np.round(pa, 9).T)
    order_b = np.lexsort(np.round(pb, 9).T)
    assert np.allclose(pa[order], pb[order_b], atol=1e-12)
    assert np.allclose(sorted(n.mass for n in a.nodes), sorted(n.mass for n in b.nodes))


def test_spider_spec_validation():
    spec = _spec()
    from dataclasses import replace

    with pytest.raises(ConstructionError):
        build_spider(replace(spec, legs=spec.legs[:7]))
    with pytest.raises(ConstructionError):
        build_spider(replace(spec, mount_azimuths=(0.0,) * 8))
    with pytest.raises(ConstructionError):
        build_spider(replace(spec, cable_series_stiffness=0.0))
