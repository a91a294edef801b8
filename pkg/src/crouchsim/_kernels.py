"""Compiled force/energy/integration loops over the flat system arrays.

All kernels take a :class:`Packed` named tuple so numba sees one typed record.
Segment elevation ``alpha`` and out-of-plane angle ``beta`` are measured in
the owning leg's crouch-plane basis (``seg_r`` outward, ``seg_n`` normal,
z up).
"""

from __future__ import annotations

import math
from collections import namedtuple

import numpy as np
from numba import njit

Packed = namedtuple(
    "Packed",
    [
        "mass", "inv_mass", "free",
        "ei", "ej", "rest", "stiff", "damp", "tonly",
        "seg_a", "seg_b", "seg_r", "seg_n",
        "j_in", "j_out", "j_leg", "kp", "kl", "kc_rot", "j_rest", "j_arm",
        "leg_kc", "profile", "gravity",
    ],
)

HALF_PI = 0.5 * math.pi
TWO_PI = 2.0 * math.pi

OK = 0
NONFINITE = 1
OUT_OF_BOUNDS = 2


@njit(cache=True)
def retraction_at(t, profile):
    # profile: max_rotation, pulley_radius, ramp_up, hold, ramp_down, start_time
    tau = t - profile[5]
    total = profile[2] + profile[3] + profile[4]
    if tau <= 0.0 or tau >= total:
        return 0.0
    if tau < profile[2]:
        theta = profile[0] * tau / profile[2]
    elif tau <= profile[2] + profile[3]:
        theta = profile[0]
    else:
        theta = profile[0] * (1.0 - (tau - profile[2] - profile[3]) / profile[4])
    return profile[1] * theta


@njit(cache=True)
def _wrap(a):
    return (a + math.pi) % TWO_PI - math.pi


@njit(cache=True)
def segment_angles(pos, vel, m, seg):
    """Fill seg[s] = alpha, beta, alpha_dot, beta_dot, grad_alpha(3), grad_beta(3)."""
    for s in range(m.seg_a.shape[0]):
        a = m.seg_a[s]
        b = m.seg_b[s]
        dx = pos[b, 0] - pos[a, 0]
        dy = pos[b, 1] - pos[a, 1]
        dz = pos[b, 2] - pos[a, 2]
        r0 = m.seg_r[s, 0]
        r1 = m.seg_r[s, 1]
        n0 = m.seg_n[s, 0]
        n1 = m.seg_n[s, 1]
        x = dx * r0 + dy * r1
        y = dx * n0 + dy * n1
        z = dz
        q2 = x * x + z * z
        q = math.sqrt(q2)
        p2 = q2 + y * y
        ga0 = -z * r0 / q2
        ga1 = -z * r1 / q2
        ga2 = x / q2
        gb0 = (q * n0 - y * x * r0 / q) / p2
        gb1 = (q * n1 - y * x * r1 / q) / p2
        gb2 = (-y * z / q) / p2
        dvx = vel[b, 0] - vel[a, 0]
        dvy = vel[b, 1] - vel[a, 1]
        dvz = vel[b, 2] - vel[a, 2]
        seg[s, 0] = math.atan2(z, x)
        seg[s, 1] = math.atan2(y, q)
        seg[s, 2] = ga0 * dvx + ga1 * dvy + ga2 * dvz
        seg[s, 3] = gb0 * dvx + gb1 * dvy + gb2 * dvz
        seg[s, 4] = ga0
        seg[s, 5] = ga1
        seg[s, 6] = ga2
        seg[s, 7] = gb0
        seg[s, 8] = gb1
        seg[s, 9] = gb2


@njit(cache=True)
def joint_angles(m, seg, jnt):
    """Fill jnt[j] = flexion deviation from rest, lateral angle, and their rates."""
    for j in range(m.j_out.shape[0]):
        so = m.j_out[j]
        si = m.j_in[j]
        if si < 0:
            a_in = HALF_PI
            b_in = 0.0
            ad_in = 0.0
            bd_in = 0.0
        else:
            a_in = seg[si, 0]
            b_in = seg[si, 1]
            ad_in = seg[si, 2]
            bd_in = seg[si, 3]
        jnt[j, 0] = _wrap(a_in - seg[so, 0] - m.j_rest[j])
        jnt[j, 1] = _wrap(seg[so, 1] - b_in)
        jnt[j, 2] = ad_in - seg[so, 2]
        jnt[j, 3] = seg[so, 3] - bd_in


@njit(cache=True)
def cable_tensions(m, jnt, retraction, out):
    for leg in range(out.shape[0]):
        out[leg] = 0.0
    if retraction <= 0.0:
        return
    taken = np.zeros(out.shape[0])
    for j in range(m.j_out.shape[0]):
        dev = jnt[j, 0]
        if dev > 0.0:
            taken[m.j_leg[j]] += m.j_arm[j] * dev
    for leg in range(out.shape[0]):
        slack = retraction - taken[leg]
        if slack > 0.0:
            out[leg] = m.leg_kc[leg] * slack


@njit(cache=True)
def forces(t, pos, vel, out, m, drag, actuated, seg, jnt, tension):
    n = pos.shape[0]
    g = m.gravity
    for i in range(n):
        if m.free[i]:
            out[i, 0] = -drag * m.mass[i] * vel[i, 0]
            out[i, 1] = -drag * m.mass[i] * vel[i, 1]
            out[i, 2] = -drag * m.mass[i] * vel[i, 2] - m.mass[i] * g
        else:
            out[i, 0] = 0.0
            out[i, 1] = 0.0
            out[i, 2] = 0.0

    for e in range(m.ei.shape[0]):
        a = m.ei[e]
        b = m.ej[e]
        dx = pos[b, 0] - pos[a, 0]
        dy = pos[b, 1] - pos[a, 1]
        dz = pos[b, 2] - pos[a, 2]
        length = math.sqrt(dx * dx + dy * dy + dz * dz)
        stretch = length - m.rest[e]
        if m.tonly[e] and stretch <= 0.0:
            continue
        ux = dx / length
        uy = dy / length
        uz = dz / length
        ldot = ux * (vel[b, 0] - vel[a, 0]) + uy * (vel[b, 1] - vel[a, 1]) + uz * (vel[b, 2] - vel[a, 2])
        f = m.stiff[e] * stretch / m.rest[e] + m.damp[e] * ldot
        if m.tonly[e] and f < 0.0:
            f = 0.0
        out[a, 0] += f * ux
        out[a, 1] += f * uy
        out[a, 2] += f * uz
        out[b, 0] -= f * ux
        out[b, 1] -= f * uy
        out[b, 2] -= f * uz

    if m.j_out.shape[0] == 0:
        return
    segment_angles(pos, vel, m, seg)
    joint_angles(m, seg, jnt)
    if actuated:
        cable_tensions(m, jnt, retraction_at(t, m.profile), tension)
    else:
        for leg in range(tension.shape[0]):
            tension[leg] = 0.0

    for j in range(m.j_out.shape[0]):
        q_phi = -m.kp[j] * jnt[j, 0] - m.kc_rot[j] * jnt[j, 2] + tension[m.j_leg[j]] * m.j_arm[j]
        q_psi = -m.kl[j] * jnt[j, 1] - m.kc_rot[j] * jnt[j, 3]
        so = m.j_out[j]
        a = m.seg_a[so]
        b = m.seg_b[so]
        for k in range(3):
            f = -q_phi * seg[so, 4 + k] + q_psi * seg[so, 7 + k]
            out[b, k] += f
            out[a, k] -= f
        si = m.j_in[j]
        if si >= 0:
            a = m.seg_a[si]
            b = m.seg_b[si]
            for k in range(3):
                f = q_phi * seg[si, 4 + k] - q_psi * seg[si, 7 + k]
                out[b, k] += f
                out[a, k] -= f


@njit(cache=True)
def energy(pos, vel, m, seg, jnt):
    """Kinetic + axial + angular elastic + gravitational (z = 0 reference) energy."""
    e_kin = 0.0
    e_grav = 0.0
    for i in range(pos.shape[0]):
        if m.free[i]:
            e_kin += 0.5 * m.mass[i] * (vel[i, 0] ** 2 + vel[i, 1] ** 2 + vel[i, 2] ** 2)
            e_grav += m.mass[i] * m.gravity * pos[i, 2]
    e_ax = 0.0
    for e in range(m.ei.shape[0]):
        a = m.ei[e]
        b = m.ej[e]
        dx = pos[b, 0] - pos[a, 0]
        dy = pos[b, 1] - pos[a, 1]
        dz = pos[b, 2] - pos[a, 2]
        stretch = math.sqrt(dx * dx + dy * dy + dz * dz) - m.rest[e]
        if m.tonly[e] and stretch <= 0.0:
            continue
        e_ax += 0.5 * m.stiff[e] / m.rest[e] * stretch * stretch
    e_ang = 0.0
    if m.j_out.shape[0] > 0:
        segment_angles(pos, vel, m, seg)
        joint_angles(m, seg, jnt)
        for j in range(m.j_out.shape[0]):
            e_ang += 0.5 * m.kp[j] * jnt[j, 0] ** 2 + 0.5 * m.kl[j] * jnt[j, 1] ** 2
    return e_kin + e_ax + e_ang + e_grav


@njit(cache=True)
def _check(pos, bound):
    for i in range(pos.shape[0]):
        for k in range(3):
            v = pos[i, k]
            if not math.isfinite(v):
                return NONFINITE
            if abs(v) > bound:
                return OUT_OF_BOUNDS
    return OK


@njit(cache=True)
def _rk4_step(t, pos, vel, dt, m, drag, actuated, seg, jnt, tension, buf):
    n = pos.shape[0]
    x0 = pos.copy()
    v0 = vel.copy()
    kx = np.zeros((4, n, 3))
    kv = np.zeros((4, n, 3))
    xs = pos.copy()
    vs = vel.copy()
    for stage in range(4):
        if stage == 0:
            ts = t
        elif stage == 3:
            ts = t + dt
        else:
            ts = t + 0.5 * dt
        if stage > 0:
            h = dt if stage == 3 else 0.5 * dt
            for i in range(n):
                for k in range(3):
                    xs[i, k] = x0[i, k] + h * kx[stage - 1, i, k]
                    vs[i, k] = v0[i, k] + h * kv[stage - 1, i, k]
        forces(ts, xs, vs, buf, m, drag, actuated, seg, jnt, tension)
        for i in range(n):
            for k in range(3):
                kx[stage, i, k] = vs[i, k] if m.free[i] else 0.0
                kv[stage, i, k] = buf[i, k] * m.inv_mass[i]
    for i in range(n):
        if m.free[i]:
            for k in range(3):
                pos[i, k] = x0[i, k] + dt / 6.0 * (kx[0, i, k] + 2 * kx[1, i, k] + 2 * kx[2, i, k] + kx[3, i, k])
                vel[i, k] = v0[i, k] + dt / 6.0 * (kv[0, i, k] + 2 * kv[1, i, k] + 2 * kv[2, i, k] + kv[3, i, k])


@njit(cache=True)
def _euler_step(t, pos, vel, dt, m, drag, actuated, seg, jnt, tension, buf):
    forces(t, pos, vel, buf, m, drag, actuated, seg, jnt, tension)
    for i in range(pos.shape[0]):
        if m.free[i]:
            for k in range(3):
                vel[i, k] += dt * buf[i, k] * m.inv_mass[i]
                pos[i, k] += dt * vel[i, k]


@njit(cache=True)
def integrate(pos, vel, t0, n_steps, dt, method, m, drag, actuated, stride, sensors, accel, record_energy,
              energies, bound, n_seg, n_joint, n_leg):
    """Advance ``n_steps``; sample sensor accelerations and energy every ``stride`` steps.

    Sample k is taken at step k*stride from the backward velocity difference
    over one step. Returns (status, step) with status OK when no fault occurred.
    """
    n = pos.shape[0]
    seg = np.zeros((n_seg, 10))
    jnt = np.zeros((n_joint, 4))
    tension = np.zeros(n_leg)
    buf = np.zeros((n, 3))
    vprev = np.zeros((sensors.shape[0], 3))
    forces(t0, pos, vel, buf, m, drag, actuated, seg, jnt, tension)
    for s in range(sensors.shape[0]):
        i = sensors[s]
        for k in range(3):
            vprev[s, k] = vel[i, k] - dt * buf[i, k] * m.inv_mass[i]
    n_samples = accel.shape[0]
    for step in range(n_steps + 1):
        t = t0 + step * dt
        if step % stride == 0:
            k_s = step // stride
            if k_s < n_samples:
                for s in range(sensors.shape[0]):
                    i = sensors[s]
                    for k in range(3):
                        accel[k_s, s, k] = (vel[i, k] - vprev[s, k]) / dt
                if record_energy:
                    energies[k_s] = energy(pos, vel, m, seg, jnt)
        if step == n_steps:
            break
        for s in range(sensors.shape[0]):
            i = sensors[s]
            for k in range(3):
                vprev[s, k] = vel[i, k]
        if method == 0:
            _euler_step(t, pos, vel, dt, m, drag, actuated, seg, jnt, tension, buf)
        else:
            _rk4_step(t, pos, vel, dt, m, drag, actuated, seg, jnt, tension, buf)
        if step % 64 == 0:
            status = _check(pos, bound)
            if status != OK:
                return status, step
    return _check(pos, bound), n_steps


@njit(cache=True)
def relax(pos, vel, dt, max_steps, m, drag, tol, check_every, bound, n_seg, n_joint, n_leg):
    """Damped settling: semi-implicit Euler with mass-proportional drag.

    Stops once the undamped residual acceleration of every free node is
    below ``tol``. Returns (status, steps, residual).
    """
    n = pos.shape[0]
    seg = np.zeros((n_seg, 10))
    jnt = np.zeros((n_joint, 4))
    tension = np.zeros(n_leg)
    buf = np.zeros((n, 3))
    still = np.zeros((n, 3))
    residual = np.inf
    for step in range(max_steps):
        if step % check_every == 0:
            forces(0.0, pos, still, buf, m, 0.0, False, seg, jnt, tension)
            residual = 0.0
            for i in range(n):
                if m.free[i]:
                    a = math.sqrt(buf[i, 0] ** 2 + buf[i, 1] ** 2 + buf[i, 2] ** 2) * m.inv_mass[i]
                    if a > residual:
                        residual = a
            if residual < tol:
                return OK, step, residual
            status = _check(pos, bound)
            if status != OK:
                return status, step, residual
        _euler_step(0.0, pos, vel, dt, m, drag, False, seg, jnt, tension, buf)
    return OK, max_steps, residual


@njit(cache=True)
def eval_forces(t, pos, vel, m, drag, actuated, n_seg, n_joint, n_leg):
    seg = np.zeros((n_seg, 10))
    jnt = np.zeros((n_joint, 4))
    tension = np.zeros(n_leg)
    out = np.zeros((pos.shape[0], 3))
    forces(t, pos, vel, out, m, drag, actuated, seg, jnt, tension)
    return out


@njit(cache=True)
def eval_energy(pos, vel, m, n_seg, n_joint):
    seg = np.zeros((n_seg, 10))
    jnt = np.zeros((n_joint, 4))
    return energy(pos, vel, m, seg, jnt)


@njit(cache=True)
def eval_joints(pos, vel, m, n_seg, n_joint):
    seg = np.zeros((n_seg, 10))
    jnt = np.zeros((n_joint, 4))
    if n_joint > 0:
        segment_angles(pos, vel, m, seg)
        joint_angles(m, seg, jnt)
    return jnt
