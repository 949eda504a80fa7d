"""Frames, attitude, and the WGS-84 Earth model.

Navigation frame is local-level NED; body frame is x-forward, y-right,
z-down. Attitude is the body-to-navigation rotation stored as a Hamilton
unit quaternion ``[w, x, y, z]``. Euler angles follow the ZYX (yaw, pitch,
roll) intrinsic sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# WGS-84
SEMI_MAJOR_AXIS = 6378137.0
FLATTENING = 1.0 / 298.257223563
ECC2 = FLATTENING * (2.0 - FLATTENING)
SEMI_MINOR_AXIS = SEMI_MAJOR_AXIS * (1.0 - FLATTENING)
EARTH_RATE = 7.292115e-5
GM_EARTH = 3.986004418e14

# Somigliana normal gravity
GRAVITY_EQUATOR = 9.7803253359
GRAVITY_POLE = 9.8321849379
_SOMIGLIANA_K = SEMI_MINOR_AXIS * GRAVITY_POLE / (SEMI_MAJOR_AXIS * GRAVITY_EQUATOR) - 1.0
_M_RATIO = EARTH_RATE**2 * SEMI_MAJOR_AXIS**2 * SEMI_MINOR_AXIS / GM_EARTH

GIMBAL_LOCK_PITCH = math.radians(89.99)
MAX_SMALL_ROTATION = 0.5


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_rotvec(rv) -> np.ndarray:
    """Exact exponential map of a rotation vector."""
    rv = np.asarray(rv, dtype=float)
    angle = math.sqrt(rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2])
    if angle < 1e-8:
        # Taylor terms keep full precision for tiny increments
        s = 0.5 - angle * angle / 48.0
        c = 1.0 - angle * angle / 8.0
    else:
        s = math.sin(0.5 * angle) / angle
        c = math.cos(0.5 * angle)
    return np.array([c, s * rv[0], s * rv[1], s * rv[2]])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Logarithm map; returns the rotation vector with angle in [0, pi]."""
    w = q[0]
    v = np.asarray(q[1:], dtype=float)
    if w < 0.0:
        w, v = -w, -v
    vn = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if vn < 1e-12:
        return 2.0 * v / w
    return 2.0 * math.atan2(vn, w) / vn * v


def quat_to_dcm(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def dcm_to_quat(C: np.ndarray) -> np.ndarray:
    """Shepperd's method; the result has a non-negative scalar part."""
    C = np.asarray(C, dtype=float)
    tr = C[0, 0] + C[1, 1] + C[2, 2]
    cands = np.array([tr, C[0, 0], C[1, 1], C[2, 2]])
    i = int(np.argmax(cands))
    if i == 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [0.25 * s, (C[2, 1] - C[1, 2]) / s, (C[0, 2] - C[2, 0]) / s, (C[1, 0] - C[0, 1]) / s]
    elif i == 1:
        s = 2.0 * math.sqrt(1.0 + 2 * C[0, 0] - tr)
        q = [(C[2, 1] - C[1, 2]) / s, 0.25 * s, (C[0, 1] + C[1, 0]) / s, (C[0, 2] + C[2, 0]) / s]
    elif i == 2:
        s = 2.0 * math.sqrt(1.0 + 2 * C[1, 1] - tr)
        q = [(C[0, 2] - C[2, 0]) / s, (C[0, 1] + C[1, 0]) / s, 0.25 * s, (C[1, 2] + C[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + 2 * C[2, 2] - tr)
        q = [(C[1, 0] - C[0, 1]) / s, (C[0, 2] + C[2, 0]) / s, (C[1, 2] + C[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def _normalized(q: np.ndarray) -> np.ndarray:
    n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]
    # leave already-unit quaternions bit-identical
    if abs(n2 - 1.0) <= 1e-15:
        return q
    return q / math.sqrt(n2)


@dataclass(frozen=True, eq=False)
class Attitude:
    """Body-to-NED rotation as a unit quaternion (renormalized on construction)."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        if not np.isfinite(q).all():
            raise ValueError("attitude quaternion must be finite")
        object.__setattr__(self, "q", _normalized(q))

    @classmethod
    def identity(cls) -> Attitude:
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @property
    def dcm(self) -> np.ndarray:
        """C_b2n."""
        return quat_to_dcm(self.q)

    def compose(self, other: Attitude) -> Attitude:
        """``self * other``: apply ``other`` first, then ``self``."""
        return Attitude(quat_multiply(self.q, other.q))

    def inverse(self) -> Attitude:
        return Attitude(quat_conjugate(self.q))

    def rotate(self, v_body) -> np.ndarray:
        return self.dcm @ np.asarray(v_body, dtype=float)

    def __eq__(self, other):
        if not isinstance(other, Attitude):
            return NotImplemented
        return bool(np.array_equal(self.q, other.q))

    def __repr__(self):
        return f"Attitude(q={self.q.tolist()})"


class EulerAngles(NamedTuple):
    roll: float
    pitch: float
    yaw: float

    @property
    def gimbal_lock(self) -> bool:
        """True when the conventional solution was used (roll folded into yaw)."""
        return abs(self.pitch) > GIMBAL_LOCK_PITCH


def euler_to_attitude(roll: float, pitch: float, yaw: float) -> Attitude:
    """ZYX attitude: yaw about down, pitch about the new east, roll about forward."""
    if not all(math.isfinite(a) for a in (roll, pitch, yaw)):
        raise ValueError("Euler angles must be finite")
    if abs(pitch) > math.pi / 2 + 1e-12:
        raise ValueError(f"pitch {pitch} outside [-pi/2, pi/2]")
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    q = np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )
    return Attitude(q)


def attitude_to_euler(a: Attitude) -> EulerAngles:
    """Roll, pitch, yaw of ``a``.

    Near gimbal lock (|pitch| > 89.99 deg) roll is set to zero and the
    combined rotation is reported as yaw; ``.gimbal_lock`` flags this.
    """
    w, x, y, z = a.q
    sin_pitch = 2.0 * (w * y - x * z)
    sin_pitch = max(-1.0, min(1.0, sin_pitch))
    # asin loses precision near +-1; atan2 form is well conditioned everywhere
    c11 = 1 - 2 * (y * y + z * z)
    c21 = 2 * (x * y + w * z)
    c32 = 2 * (y * z + w * x)
    c33 = 1 - 2 * (x * x + y * y)
    pitch = math.atan2(sin_pitch, math.hypot(c32, c33))
    if abs(pitch) > GIMBAL_LOCK_PITCH:
        c12 = 2 * (x * y - w * z)
        c22 = 1 - 2 * (x * x + z * z)
        yaw = math.atan2(-c12, c22)
        return EulerAngles(0.0, pitch, yaw)
    roll = math.atan2(c32, c33)
    yaw = math.atan2(c21, c11)
    return EulerAngles(roll, pitch, yaw)


def apply_small_rotation(a: Attitude, dpsi) -> Attitude:
    """First-order attitude correction ``C <- (I - [dpsi x]) C``.

    The correction is carried out on the quaternion so the result stays
    orthonormal. Raises ``ValueError`` for ``|dpsi| >= 0.5`` rad.
    """
    dpsi = np.asarray(dpsi, dtype=float)
    n = float(np.linalg.norm(dpsi))
    if not math.isfinite(n) or n >= MAX_SMALL_ROTATION:
        raise ValueError(f"attitude correction of {n:.3g} rad is not small")
    if n == 0.0:
        return a
    dq = np.array([1.0, -0.5 * dpsi[0], -0.5 * dpsi[1], -0.5 * dpsi[2]])
    return Attitude(quat_multiply(dq, a.q))


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    y = np.where(y == -np.pi, np.pi, y)
    return y if np.ndim(y) else float(y)


def _real(x):
    # extended-precision scalars pass through so callers can resolve sub-nanometre offsets
    return x if isinstance(x, np.longdouble) else float(x)


@dataclass(frozen=True)
class GeodeticPosition:
    """Latitude and longitude in radians, height in metres.

    ``numpy.longdouble`` components are kept at extended precision.
    """

    latitude: float
    longitude: float
    height: float

    def __post_init__(self):
        lat, lon, h = _real(self.latitude), _real(self.longitude), _real(self.height)
        if not (math.isfinite(lat) and math.isfinite(lon) and math.isfinite(h)):
            raise ValueError("geodetic position must be finite")
        if abs(lat) > math.pi / 2:
            raise ValueError(f"latitude {lat} outside [-pi/2, pi/2]")
        if not -math.pi < lon <= math.pi:
            lon = wrap_angle(lon)
        object.__setattr__(self, "latitude", lat)
        object.__setattr__(self, "longitude", lon)
        object.__setattr__(self, "height", h)


def earth_radii(latitude: float) -> tuple[float, float]:
    """Meridian and transverse (prime-vertical) radii of curvature."""
    s2 = math.sin(latitude) ** 2
    d = 1.0 - ECC2 * s2
    r_t = SEMI_MAJOR_AXIS / math.sqrt(d)
    r_m = SEMI_MAJOR_AXIS * (1.0 - ECC2) / d**1.5
    return r_m, r_t


def gravity(latitude: float, height: float) -> float:
    """Normal gravity magnitude (down-positive) with free-air height correction."""
    s2 = math.sin(latitude) ** 2
    g0 = GRAVITY_EQUATOR * (1.0 + _SOMIGLIANA_K * s2) / math.sqrt(1.0 - ECC2 * s2)
    a = SEMI_MAJOR_AXIS
    corr = 1.0 - 2.0 * height / a * (1.0 + FLATTENING + _M_RATIO - 2.0 * FLATTENING * s2)
    return g0 * (corr + 3.0 * height**2 / a**2)


def gravity_height_derivative(latitude: float, height: float) -> float:
    """d(gravity)/d(height), about -2 g / R."""
    s2 = math.sin(latitude) ** 2
    g0 = GRAVITY_EQUATOR * (1.0 + _SOMIGLIANA_K * s2) / math.sqrt(1.0 - ECC2 * s2)
    a = SEMI_MAJOR_AXIS
    return g0 * (-2.0 / a * (1.0 + FLATTENING + _M_RATIO - 2.0 * FLATTENING * s2) + 6.0 * height / a**2)


def gravity_latitude_derivative(latitude: float, height: float) -> float:
    """d(gravity)/d(latitude) in m/s^2 per radian."""
    s, c = math.sin(latitude), math.cos(latitude)
    s2 = s * s
    d = 1.0 - ECC2 * s2
    g0 = GRAVITY_EQUATOR * (1.0 + _SOMIGLIANA_K * s2) / math.sqrt(d)
    dg0 = GRAVITY_EQUATOR * s * c * (2.0 * _SOMIGLIANA_K / math.sqrt(d) + (1.0 + _SOMIGLIANA_K * s2) * ECC2 / d**1.5)
    a = SEMI_MAJOR_AXIS
    corr = 1.0 - 2.0 * height / a * (1.0 + FLATTENING + _M_RATIO - 2.0 * FLATTENING * s2) + 3.0 * height**2 / a**2
    dcorr = 8.0 * FLATTENING * height * s * c / a
    return dg0 * corr + g0 * dcorr


def earth_rate_ned(latitude: float) -> np.ndarray:
    return np.array([EARTH_RATE * math.cos(latitude), 0.0, -EARTH_RATE * math.sin(latitude)])


def transport_rate_ned(latitude: float, height: float, v_ned) -> np.ndarray:
    """Rotation rate of NED relative to the Earth, from NED velocity."""
    r_m, r_t = earth_radii(latitude)
    vn, ve, _ = v_ned
    return np.array(
        [
            ve / (r_t + height),
            -vn / (r_m + height),
            -ve * math.tan(latitude) / (r_t + height),
        ]
    )
