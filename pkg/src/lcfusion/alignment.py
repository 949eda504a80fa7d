"""Static coarse alignment and initial-attitude error injection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geo import EARTH_RATE, gravity
from .sensors import ImuLog

# Attitude estimated at rest for the smartphone experiment (rad).
REFERENCE_ATTITUDE = (-0.0068, 0.0418, 1.2234)

GRAVITY_BAND = (0.5, 1.5)
MAX_STATIC_RATE = 0.05  # rad/s, any sample above this counts as motion
MAX_STATIC_ACCEL_STD = 0.5  # m/s^2


class MotionDetected(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InitialAttitude:
    roll: float
    pitch: float
    yaw: float
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    low_confidence: bool = False

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float).reshape(3, 3)
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-15):
            raise ValueError("attitude covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-15:
            raise ValueError("attitude covariance must be positive semidefinite")
        if abs(self.pitch) > math.pi / 2:
            raise ValueError("pitch outside [-pi/2, pi/2]")
        object.__setattr__(self, "covariance", cov)

    @property
    def angles(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw])

    def __eq__(self, other):
        if not isinstance(other, InitialAttitude):
            return NotImplemented
        return (
            (self.roll, self.pitch, self.yaw, self.low_confidence)
            == (other.roll, other.pitch, other.yaw, other.low_confidence)
            and np.array_equal(self.covariance, other.covariance)
        )


def reference_attitude() -> InitialAttitude:
    return InitialAttitude(*REFERENCE_ATTITUDE)


def level_from_accel(mean_specific_force, g: float | None = None) -> tuple[float, float]:
    """Roll and pitch from the mean specific force of a static body (z-down)."""
    fx, fy, fz = np.asarray(mean_specific_force, dtype=float)
    norm = math.sqrt(fx * fx + fy * fy + fz * fz)
    g = gravity(0.0, 0.0) if g is None else g
    lo, hi = GRAVITY_BAND
    if not lo * g <= norm <= hi * g:
        raise ValueError(f"|f| = {norm:.3f} m/s^2 outside [{lo} g, {hi} g]: not static or wrong axis map")
    roll = math.atan2(-fy, -fz)
    pitch = math.atan2(fx, math.hypot(fy, fz))
    return roll, pitch


def _level_dcm(roll, pitch):
    # body -> level frame sharing the body heading
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    return np.array(
        [
            [cp, sp * sr, sp * cr],
            [0.0, cr, -sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def parse_axis_map(text: str) -> np.ndarray:
    """Signed permutation from ``x=+y, y=+x, z=-z`` style text (body = M @ device).

    ``identity`` (or an empty string) gives the identity map.
    """
    text = text.strip()
    if text in ("", "identity"):
        return np.eye(3)
    M = np.zeros((3, 3))
    parts = [p for chunk in text.replace(",", "\n").splitlines() if (p := chunk.strip()) and not p.startswith("#")]
    for part in parts:
        key, _, val = part.partition("=")
        key, val = key.strip().lower(), val.strip().lower().replace(" ", "")
        if key not in "xyz" or len(key) != 1:
            raise ValueError(f"bad axis-map key {key!r}")
        sign = -1.0 if val.startswith("-") else 1.0
        axis = val.lstrip("+-")
        if axis not in ("x", "y", "z"):
            raise ValueError(f"bad axis-map value {val!r}")
        M["xyz".index(key), "xyz".index(axis)] = sign
    if not np.allclose(np.abs(M).sum(0), 1) or not np.allclose(np.abs(M).sum(1), 1):
        raise ValueError("axis map must be a signed permutation")
    return M


def align_static(
    static_log: ImuLog,
    yaw: float | str = 0.0,
    latitude: float | None = None,
    axis_map: np.ndarray | None = None,
    min_duration: float = 60.0,
) -> InitialAttitude:
    """Coarse alignment from a stationary log.

    Parameters
    ----------
    static_log : ImuLog
        Stationary samples in the device frame.
    yaw : float or "gyrocompass"
        Configured heading in radians, or gyrocompassing from the mean
        angular rate (needs ``latitude``).
    axis_map : (3, 3) array, optional
        Signed permutation taking device axes to body axes.

    The covariance is propagated from the standard error of the sample
    means. A gyrocompass heading is flagged ``low_confidence`` when that
    standard error exceeds 10% of the horizontal Earth rate.
    """
    if static_log.duration < min_duration:
        raise ValueError(f"static log of {static_log.duration:.1f} s shorter than {min_duration:.0f} s")
    M = np.eye(3) if axis_map is None else np.asarray(axis_map, dtype=float)
    gyro = static_log.gyro @ M.T
    accel = static_log.accel @ M.T
    n = len(gyro)
    if np.abs(gyro).max() > MAX_STATIC_RATE or np.linalg.norm(accel, axis=1).std() > MAX_STATIC_ACCEL_STD:
        raise MotionDetected("IMU log is not stationary")

    f_mean = accel.mean(0)
    g_local = gravity(latitude, 0.0) if latitude is not None else None
    roll, pitch = level_from_accel(f_mean, g_local)
    f_se = accel.std(0) / math.sqrt(n)

    # tilt covariance: first-order propagation of the mean-specific-force error
    fx, fy, fz = f_mean
    den_r = fy * fy + fz * fz
    hyp = math.sqrt(den_r)
    fn2 = fx * fx + den_r
    J = np.array(
        [
            [0.0, fz / den_r, -fy / den_r],
            [hyp / fn2, -fx * fy / (hyp * fn2), -fx * fz / (hyp * fn2)],
        ]
    )
    tilt_cov = J @ np.diag(f_se**2) @ J.T

    cov = np.zeros((3, 3))
    cov[:2, :2] = tilt_cov
    low_conf = False
    if isinstance(yaw, str):
        if yaw != "gyrocompass":
            raise ValueError(f"unknown yaw source {yaw!r}")
        if latitude is None:
            raise ValueError("gyrocompassing needs the latitude")
        w_level = _level_dcm(roll, pitch) @ gyro.mean(0)
        yaw_val = math.atan2(-w_level[1], w_level[0])
        w_se = float(np.sqrt(np.mean(gyro.var(0))) / math.sqrt(n))
        horizontal = EARTH_RATE * math.cos(latitude)
        cov[2, 2] = (w_se / horizontal) ** 2
        low_conf = w_se > 0.1 * horizontal
    else:
        yaw_val = float(yaw)
    return InitialAttitude(roll, pitch, yaw_val, cov, low_conf)


def inject_epsilon(att: InitialAttitude, epsilon: float) -> InitialAttitude:
    """Add the same error ``epsilon`` (rad) to roll, pitch and yaw."""
    return replace(att, roll=att.roll + epsilon, pitch=att.pitch + epsilon, yaw=att.yaw + epsilon)
