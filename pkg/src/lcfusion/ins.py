"""Strapdown mechanization in the local-level NED frame.

One step maps the state at ``t_k`` and the (bias-corrected) IMU sample
taken at ``t_k`` to the state at ``t_k + dt``:

* attitude: ``q <- exp(-w_in dt) * q * exp(w_b dt)`` with the Earth and
  transport rates evaluated at the start of the step;
* velocity: ``v <- v + dt (C_avg f_b + g - (2 w_ie + w_en) x v)`` where
  ``C_avg`` is the mean of the start and end attitude matrices;
* position: trapezoidal integration of the start and end velocities.

Coning and sculling corrections are not applied. The scheme is exactly
invertible, which :func:`inverse_mechanize` uses to synthesise ideal IMU
streams from a truth trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geo import (
    Attitude,
    GeodeticPosition,
    attitude_to_euler,
    earth_radii,
    earth_rate_ned,
    gravity,
    quat_conjugate,
    quat_from_rotvec,
    quat_multiply,
    quat_to_dcm,
    quat_to_rotvec,
    transport_rate_ned,
)
from .sensors import BiasState, ImuLog, ImuSample

POLAR_LIMIT = math.radians(89.5)


@dataclass(frozen=True, eq=False)
class NavState:
    attitude: Attitude
    velocity: np.ndarray
    position: GeodeticPosition
    t: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.velocity, dtype=float).reshape(3)
        if not np.isfinite(v).all():
            raise ValueError("velocity must be finite")
        object.__setattr__(self, "velocity", v)

    @property
    def euler(self):
        return attitude_to_euler(self.attitude)

    def __eq__(self, other):
        if not isinstance(other, NavState):
            return NotImplemented
        return (
            self.attitude == other.attitude
            and np.array_equal(self.velocity, other.velocity)
            and self.position == other.position
            and self.t == other.t
        )


def correct_sample(raw: ImuSample, bias_estimate: BiasState) -> ImuSample:
    """Remove the estimated sensor biases from a raw sample."""
    return ImuSample(
        raw.t,
        raw.angular_rate - bias_estimate.gyro_dynamic_bias,
        raw.specific_force - bias_estimate.accel_dynamic_bias,
    )


def _rates(lat, h, v, earth):
    w_ie = earth_rate_ned(lat) if earth else np.zeros(3)
    w_en = transport_rate_ned(lat, h, v)
    return w_ie, w_en


def _gravity_ned(lat, h, earth):
    return np.array([0.0, 0.0, gravity(lat, h) if earth else 0.0])


def integrate_position(pos: GeodeticPosition, v0, v1, dt: float) -> GeodeticPosition:
    """Trapezoidal position update with radii at the start point."""
    lat, lon, h = pos.latitude, pos.longitude, pos.height
    r_m, r_t = earth_radii(lat)
    vn = 0.5 * (v0[0] + v1[0])
    ve = 0.5 * (v0[1] + v1[1])
    vd = 0.5 * (v0[2] + v1[2])
    return GeodeticPosition(
        lat + dt * vn / (r_m + h),
        lon + dt * ve / ((r_t + h) * math.cos(lat)),
        h - dt * vd,
    )


def _check_latitude(lat):
    if abs(lat) > POLAR_LIMIT:
        raise ValueError(f"latitude {math.degrees(lat):.3f} deg too close to a pole for NED mechanization")


def _cross(a, b):
    # np.cross carries a large per-call overhead for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def mechanize_step(state: NavState, sample: ImuSample, dt: float, *, earth: bool = True) -> NavState:
    """Propagate ``state`` over ``dt`` with a corrected IMU sample.

    ``earth=False`` switches off gravity and Earth rotation (test hook).
    """
    if not 0.0 <= dt <= 1.0:
        raise ValueError(f"dt={dt} outside [0, 1]")
    if dt == 0.0:
        return state
    return propagate(state, sample.angular_rate, sample.specific_force, dt, state.t + dt, earth=earth)


def propagate(state: NavState, w_b, f_b, dt: float, t_next: float, *, earth: bool = True) -> NavState:
    """:func:`mechanize_step` on raw rate/force arrays, stamping the result ``t_next``."""
    pos = state.position
    lat, h = pos.latitude, pos.height
    _check_latitude(lat)
    v0 = state.velocity
    w_ie, w_en = _rates(lat, h, v0, earth)
    w_in = w_ie + w_en

    q0 = state.attitude.q
    q1 = quat_multiply(quat_from_rotvec(-w_in * dt), quat_multiply(q0, quat_from_rotvec(w_b * dt)))
    att1 = Attitude(q1)
    c_avg = 0.5 * (quat_to_dcm(q0) + quat_to_dcm(att1.q))
    f_n = c_avg @ f_b
    coriolis = _cross(2.0 * w_ie + w_en, v0)
    v1 = v0 + dt * (f_n + _gravity_ned(lat, h, earth) - coriolis)
    return NavState(att1, v1, integrate_position(pos, v0, v1, dt), t_next)


def inverse_step(s0: NavState, s1: NavState, dt: float, *, earth: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Body rate and specific force that carry ``s0`` to ``s1`` in one step."""
    lat, h = s0.position.latitude, s0.position.height
    _check_latitude(lat)
    v0, v1 = s0.velocity, s1.velocity
    w_ie, w_en = _rates(lat, h, v0, earth)
    w_in = w_ie + w_en
    q0, q1 = s0.attitude.q, s1.attitude.q
    qb = quat_multiply(quat_conjugate(q0), quat_multiply(quat_from_rotvec(w_in * dt), q1))
    w_b = quat_to_rotvec(qb) / dt
    c_avg = 0.5 * (quat_to_dcm(q0) + quat_to_dcm(q1))
    rhs = (v1 - v0) / dt - _gravity_ned(lat, h, earth) + _cross(2.0 * w_ie + w_en, v0)
    f_b = np.linalg.solve(c_avg, rhs)
    return w_b, f_b


def inverse_mechanize(truth: list[NavState], *, earth: bool = True, rtol: float = 1e-9) -> ImuLog:
    """Ideal IMU stream reproducing ``truth`` under :func:`mechanize_step`.

    Sample ``k`` carries ``truth[k].t`` and drives the step ``k -> k+1``;
    the final sample repeats the last increment so the stream has one
    sample per truth epoch.
    """
    n = len(truth)
    if n == 0:
        return ImuLog(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
    t = np.array([s.t for s in truth])
    if n == 1:
        raise ValueError("need at least two truth epochs to infer IMU samples")
    steps = np.diff(t)
    dt = float(steps.mean())
    if not np.all(np.abs(steps - dt) <= rtol * max(dt, 1.0)) or dt <= 0:
        raise ValueError("truth timestamps are not uniformly spaced")
    gyro = np.empty((n, 3))
    accel = np.empty((n, 3))
    for k in range(n - 1):
        gyro[k], accel[k] = inverse_step(truth[k], truth[k + 1], float(steps[k]), earth=earth)
    gyro[-1], accel[-1] = gyro[-2], accel[-2]
    return ImuLog(t, gyro, accel)


def stationary_imu(state: NavState) -> tuple[np.ndarray, np.ndarray]:
    """Analytic IMU output at rest: Earth rate and gravity reaction in body axes."""
    c_n2b = state.attitude.dcm.T
    lat, h = state.position.latitude, state.position.height
    w_b = c_n2b @ earth_rate_ned(lat)
    f_b = c_n2b @ np.array([0.0, 0.0, -gravity(lat, h)])
    return w_b, f_b


def mechanize(initial: NavState, imu: ImuLog, *, earth: bool = True) -> list[NavState]:
    """Free-inertial run: one state per IMU sample, starting at ``initial``."""
    states = [replace(initial, t=float(imu.t[0])) if len(imu) else initial]
    for k in range(len(imu) - 1):
        dt = float(imu.t[k + 1] - imu.t[k])
        nxt = mechanize_step(states[-1], imu[k], dt, earth=earth)
        states.append(replace(nxt, t=float(imu.t[k + 1])))
    return states
