"""Time integration of the coupled system: forces, stepping, settling, trials, energy."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .spider import MotorProfile
from .system import System

logger = logging.getLogger(__name__)

INTEGRATORS = {"semi_implicit_euler": 0, "rk4": 1}


class NumericFault(FloatingPointError):
    """Non-finite values appeared in the state."""


class DivergenceError(RuntimeError):
    """The integration blew up; ``step`` is the step index where it was caught."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class SettleError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-4
    integrator: str = "semi_implicit_euler"
    gravity: float = 9.81
    duration: float = 12.0
    sensor_rate: float = 500.0
    sensor_noise_std: float = 0.0
    seed: int = 0
    initial_jitter: float = 0.0
    accel_axis: str = "vertical"
    divergence_bound: float = 100.0

    @property
    def stride(self) -> int:
        return int(round(1.0 / (self.sensor_rate * self.dt)))

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.duration * self.sensor_rate + 1e-9))

    def validate(self) -> None:
        if not self.dt > 0 or not self.duration > 0:
            raise ValueError("dt and duration must be > 0")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {sorted(INTEGRATORS)}, got {self.integrator!r}")
        if not 0 < self.sensor_rate <= 1.0 / self.dt * (1 + 1e-12):
            raise ValueError("sensor_rate must be in (0, 1/dt]")
        if abs(self.stride * self.sensor_rate * self.dt - 1.0) > 1e-9:
            raise ValueError("1/(sensor_rate*dt) must be an integer number of steps")
        if self.sensor_noise_std < 0 or self.initial_jitter < 0:
            raise ValueError("noise and jitter must be >= 0")
        if self.accel_axis not in ("vertical", "magnitude"):
            raise ValueError("accel_axis must be 'vertical' or 'magnitude'")


@dataclass(frozen=True, eq=False)
class SystemState:
    time: float
    positions: np.ndarray
    velocities: np.ndarray

    def copy(self) -> "SystemState":
        return SystemState(self.time, self.positions.copy(), self.velocities.copy())


@dataclass(frozen=True, eq=False)
class AccelTrace:
    leg_id: int
    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate


def initial_state(system: System) -> SystemState:
    return SystemState(0.0, system.positions.copy(), np.zeros_like(system.positions))


def _dims(system: System):
    return system.seg_a.shape[0], system.joint_out.shape[0], max(system.n_legs, 1)


def _check_state(state: SystemState) -> None:
    if not (np.all(np.isfinite(state.positions)) and np.all(np.isfinite(state.velocities))):
        raise NumericFault("state contains non-finite values")


def net_forces(state: SystemState, system: System, profile: MotorProfile | None = None,
               gravity: float = 9.81) -> np.ndarray:
    """Per-node force (N): axial springs/dampers, joint springs/dampers, gravity and tendon actuation."""
    _check_state(state)
    packed = system.packed(profile, gravity)
    return K.eval_forces(state.time, state.positions, state.velocities, packed, 0.0, profile is not None,
                         *_dims(system))


def mechanical_energy(state: SystemState, system: System, gravity: float = 9.81) -> float:
    packed = system.packed(None, gravity)
    n_seg, n_joint, _ = _dims(system)
    return float(K.eval_energy(state.positions, state.velocities, packed, n_seg, n_joint))


def joint_state(state: SystemState, system: System) -> np.ndarray:
    """Per joint: (flexion - rest, lateral angle, flexion rate, lateral rate)."""
    packed = system.packed()
    n_seg, n_joint, _ = _dims(system)
    return K.eval_joints(state.positions, state.velocities, packed, n_seg, n_joint)


def _raise_fault(status: int, step: int, t: float) -> None:
    if status == K.NONFINITE:
        raise DivergenceError(f"non-finite state at step {step} (t = {t:.4f} s)", step)
    if status == K.OUT_OF_BOUNDS:
        raise DivergenceError(f"position bound exceeded at step {step} (t = {t:.4f} s)", step)


def step(state: SystemState, system: System, config: SimConfig, profile: MotorProfile | None = None,
         n_steps: int = 1) -> SystemState:
    """Advance ``n_steps`` integrator steps from ``state`` (which is left untouched)."""
    config.validate()
    _check_state(state)
    out = state.copy()
    packed = system.packed(profile, config.gravity)
    n_seg, n_joint, n_leg = _dims(system)
    status, at = K.integrate(out.positions, out.velocities, state.time, n_steps, config.dt,
                             INTEGRATORS[config.integrator], packed, 0.0, profile is not None, 1,
                             np.zeros(0, dtype=np.int64), np.zeros((0, 0, 3)), False, np.zeros(0),
                             config.divergence_bound, n_seg, n_joint, n_leg)
    _raise_fault(status, at, state.time + at * config.dt)
    return SystemState(state.time + n_steps * config.dt, out.positions, out.velocities)


def simulate(state: SystemState, system: System, config: SimConfig, profile: MotorProfile | None = None,
             sensors=None, record_energy: bool = False, drag: float = 0.0):
    """Integrate for ``config.duration``; returns (final state, sampled sensor accel (n, s, 3), energies)."""
    config.validate()
    _check_state(state)
    out = state.copy()
    packed = system.packed(profile, config.gravity)
    n_seg, n_joint, n_leg = _dims(system)
    sensors = np.asarray(system.sensor_nodes if sensors is None else sensors, dtype=np.int64)
    n_samples = config.n_samples
    n_steps = n_samples * config.stride
    accel = np.zeros((n_samples, sensors.size, 3))
    energies = np.zeros(n_samples if record_energy else 0)
    status, at = K.integrate(out.positions, out.velocities, state.time, n_steps, config.dt,
                             INTEGRATORS[config.integrator], packed, float(drag), profile is not None,
                             config.stride, sensors, accel, record_energy, energies, config.divergence_bound,
                             n_seg, n_joint, n_leg)
    _raise_fault(status, at, state.time + at * config.dt)
    final = SystemState(state.time + n_steps * config.dt, out.positions, out.velocities)
    return final, accel, energies


def settle(system: System, config: SimConfig, tolerance: float = 1e-6, max_time: float = 60.0,
           damping_rate: float | None = None, state: SystemState | None = None) -> SystemState:
    """Relax to the static hang under gravity with extra mass-proportional drag.

    Converged when every free node's residual acceleration is below
    ``tolerance`` (m/s^2). The returned state has zero velocity and time 0.
    """
    config.validate()
    state = initial_state(system) if state is None else state.copy()
    packed = system.packed(None, config.gravity)
    n_seg, n_joint, n_leg = _dims(system)
    drag = 20.0 if damping_rate is None else damping_rate
    dt = config.dt
    pos, vel = state.positions, state.velocities
    status, steps, residual = K.relax(pos, vel, dt, int(max_time / dt), packed, drag, tolerance, 50,
                                      config.divergence_bound, n_seg, n_joint, n_leg)
    _raise_fault(status, steps, steps * dt)
    if not residual < tolerance:
        raise SettleError(f"no static equilibrium within {max_time} s: residual {residual:.3e} m/s^2", residual)
    logger.debug("settled in %d steps, residual %.2e", steps, residual)
    return SystemState(0.0, pos, np.zeros_like(vel))


def run_trial(settled: SystemState, system: System, profile: MotorProfile, config: SimConfig) -> list[AccelTrace]:
    """One crouch-recovery cycle from ``settled``; returns one vertical-acceleration trace per leg.

    Seeded variability: an initial velocity jitter on free nodes (``initial_jitter``
    m/s) and i.i.d. Gaussian sensor noise (``sensor_noise_std``).
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    state = settled.copy()
    if config.initial_jitter > 0:
        jitter = rng.normal(0.0, config.initial_jitter, state.velocities.shape)
        jitter[system.anchored] = 0.0
        state = SystemState(state.time, state.positions, state.velocities + jitter)
    _, accel, _ = simulate(state, system, config, profile)
    if config.accel_axis == "vertical":
        samples = accel[:, :, 2]
    else:
        samples = np.linalg.norm(accel, axis=2)
    if config.sensor_noise_std > 0:
        samples = samples + rng.normal(0.0, config.sensor_noise_std, samples.shape)
    return [AccelTrace(i + 1, np.ascontiguousarray(samples[:, i]), config.sensor_rate, settled.time)
            for i in range(samples.shape[1])]


def stiffness_matrix(state: SystemState, system: System, gravity: float = 9.81, h: float = 1e-7) -> np.ndarray:
    """Central-difference tangent stiffness -dF/dx over the free degrees of freedom."""
    free = np.flatnonzero(~system.anchored)
    dofs = [(i, k) for i in free for k in range(3)]
    n = len(dofs)
    kmat = np.zeros((n, n))
    packed = system.packed(None, gravity)
    n_seg, n_joint, n_leg = _dims(system)
    vel = np.zeros_like(state.positions)
    for col, (i, k) in enumerate(dofs):
        pos = state.positions.copy()
        pos[i, k] += h
        fp = K.eval_forces(0.0, pos, vel, packed, 0.0, False, n_seg, n_joint, n_leg)
        pos[i, k] -= 2 * h
        fm = K.eval_forces(0.0, pos, vel, packed, 0.0, False, n_seg, n_joint, n_leg)
        kmat[:, col] = -((fp - fm) / (2 * h))[free].reshape(-1)
    return 0.5 * (kmat + kmat.T)


def linear_modes(state: SystemState, system: System, gravity: float = 9.81, count: int = 10):
    """Small-oscillation natural frequencies (Hz) and mass-normalized shapes about ``state``."""
    from scipy.linalg import eigh

    kmat = stiffness_matrix(state, system, gravity)
    free = np.flatnonzero(~system.anchored)
    m = np.repeat(system.masses[free], 3)
    w2, vecs = eigh(kmat, np.diag(m))
    order = np.argsort(w2)[:count]
    freqs = np.sqrt(np.clip(w2[order], 0.0, None)) / (2 * math.pi)
    return freqs, vecs[:, order]
