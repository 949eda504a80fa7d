"""Loosely coupled closed-loop error-state EKF.

Error state (15 entries, fixed order)::

    0:3   dpsi  attitude error, NED rotation vector (rad)
    3:6   dv    velocity error, INS minus truth (m/s)
    6:9   dr    position error, INS minus truth, NED metres
    9:12  dbg   gyro bias error, residual left in the corrected rate (rad/s)
    12:15 dba   accel bias error, residual left in the corrected force (m/s^2)

The attitude error is the rotation that carries the INS attitude onto the
true one, ``C_true = (I + [dpsi x]) C_ins``, and the bias errors are what
remains after correction, so feedback rotates by ``dpsi``, subtracts
``dv``/``dr`` and adds ``dbg``/``dba`` to the bias estimates.

Process noise inputs (12 entries): gyro white, accel white, gyro
Gauss-Markov driving, accel Gauss-Markov driving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .alignment import InitialAttitude
from .geo import (
    EARTH_RATE,
    ECC2,
    SEMI_MAJOR_AXIS,
    GeodeticPosition,
    apply_small_rotation,
    earth_radii,
    earth_rate_ned,
    euler_to_attitude,
    gravity_height_derivative,
    gravity_latitude_derivative,
    skew,
    transport_rate_ned,
    wrap_angle,
)
from .ins import POLAR_LIMIT, NavState, propagate
from .sensors import BiasState, ImuLog, SensorParams

ATT, VEL, POS, BG, BA = (slice(i, i + 3) for i in range(0, 15, 3))
N_STATES = 15
N_NOISE = 12
N_MEAS = 6
MAX_CONDITION = 1e12
PSD_TOL = 1e-10


class FilterDivergence(RuntimeError):
    """Error-state estimate too large for the small-angle feedback."""


class FilterBreakdown(RuntimeError):
    """Innovation covariance numerically singular."""


@dataclass(frozen=True, eq=False)
class GnssFix:
    t: float
    position: GeodeticPosition
    velocity: np.ndarray
    sigma_pos: float = 3.0
    sigma_vel: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))


@dataclass(frozen=True)
class GnssAccuracy:
    sigma_horizontal: float = 3.0
    sigma_vertical: float = 5.0
    sigma_velocity: float = 0.1

    def R(self) -> np.ndarray:
        v = self.sigma_velocity**2
        return np.diag([v, v, v, self.sigma_horizontal**2, self.sigma_horizontal**2, self.sigma_vertical**2])


@dataclass(frozen=True, eq=False)
class FilterState:
    x: np.ndarray
    P: np.ndarray
    t: float = 0.0


@dataclass(frozen=True, eq=False)
class LinearModel:
    Phi: np.ndarray
    G: np.ndarray
    Qd: np.ndarray
    H: np.ndarray
    R: np.ndarray


@dataclass(frozen=True, eq=False)
class Innovation:
    t: float
    dy: np.ndarray
    residual: np.ndarray
    S: np.ndarray
    nis: float


def _transport_jacobian(lat, h):
    r_m, r_t = earth_radii(lat)
    return np.array(
        [
            [0.0, 1.0 / (r_t + h), 0.0],
            [-1.0 / (r_m + h), 0.0, 0.0],
            [0.0, -math.tan(lat) / (r_t + h), 0.0],
        ]
    )


def _radius_derivative(lat):
    # d(R_transverse)/d(latitude)
    s, c = math.sin(lat), math.cos(lat)
    return SEMI_MAJOR_AXIS * ECC2 * s * c / (1.0 - ECC2 * s * s) ** 1.5


def _meridian_radius_derivative(lat):
    s, c = math.sin(lat), math.cos(lat)
    return 3.0 * SEMI_MAJOR_AXIS * (1.0 - ECC2) * ECC2 * s * c / (1.0 - ECC2 * s * s) ** 2.5


def _rate_position_jacobians(lat, h, v):
    """Latitude and height derivatives of the Earth and transport rates."""
    vn, ve, _ = v
    r_m, r_t = earth_radii(lat)
    s, c, t = math.sin(lat), math.cos(lat), math.tan(lat)
    a, n = r_m + h, r_t + h
    dn = _radius_derivative(lat)
    dm = _meridian_radius_derivative(lat)
    d_ie_lat = EARTH_RATE * np.array([-s, 0.0, -c])
    d_en_lat = np.array([-ve * dn / n**2, vn * dm / a**2, -ve / (c * c * n) + ve * t * dn / n**2])
    d_en_h = np.array([-ve / n**2, vn / a**2, ve * t / n**2])
    return d_ie_lat, d_en_lat, d_en_h


def build_F(nav: NavState, f_n, params: SensorParams) -> np.ndarray:
    """Continuous-time error dynamics matrix at ``nav``.

    Besides the classic blocks this keeps the velocity-dependent parts of
    the Coriolis/transport coupling, the position dependence of the Earth
    and transport rates and of gravity, and the curvilinear position
    kinematics.
    """
    lat, h = nav.position.latitude, nav.position.height
    if abs(lat) > POLAR_LIMIT:
        raise ValueError("error model undefined near the poles")
    v = nav.velocity
    vn, ve, vd = v
    r_m, r_t = earth_radii(lat)
    a = r_m + h
    b = (r_t + h) * math.cos(lat)
    w_ie = earth_rate_ned(lat)
    w_en = transport_rate_ned(lat, h, v)
    D = _transport_jacobian(lat, h)
    C = nav.attitude.dcm

    F = np.zeros((N_STATES, N_STATES))
    F[ATT, ATT] = -skew(w_ie + w_en)
    F[ATT, VEL] = D
    F[ATT, BG] = -C
    F[VEL, ATT] = skew(f_n)
    F[VEL, VEL] = -skew(2.0 * w_ie + w_en) + skew(v) @ D
    # position enters through the rates and gravity; dlat = dr_N / a, dh = -dr_D
    d_ie_lat, d_en_lat, d_en_h = _rate_position_jacobians(lat, h, v)
    F[ATT, 6] = (d_ie_lat + d_en_lat) / a
    F[ATT, 8] = -d_en_h
    F[VEL, 6] = skew(v) @ (2.0 * d_ie_lat + d_en_lat) / a
    F[VEL, 8] = -skew(v) @ d_en_h
    F[5, 6] += gravity_latitude_derivative(lat, h) / a
    F[5, 8] -= gravity_height_derivative(lat, h)
    F[VEL, BA] = C
    F[POS, VEL] = np.eye(3)
    # curvilinear kinematics of the NED-metre position error
    b_lat = _radius_derivative(lat) * math.cos(lat) - (r_t + h) * math.sin(lat)
    F[6, 6] = -vd / a
    F[6, 8] = vn / a
    F[7, 6] = -ve * b_lat / (a * b)
    F[7, 7] = (b_lat * vn / a - math.cos(lat) * vd) / b
    F[7, 8] = ve * math.cos(lat) / b
    tau = params.vector("correlation_time")
    F[BG, BG] = np.diag(-1.0 / tau[:3])
    F[BA, BA] = np.diag(-1.0 / tau[3:])
    return F


def build_G(nav: NavState) -> np.ndarray:
    C = nav.attitude.dcm
    G = np.zeros((N_STATES, N_NOISE))
    G[ATT, 0:3] = -C
    G[VEL, 3:6] = C
    G[BG, 6:9] = np.eye(3)
    G[BA, 9:12] = np.eye(3)
    return G


def continuous_noise(params: SensorParams) -> np.ndarray:
    """Diagonal 12x12 noise density: white densities squared, then GM psd squared."""
    return np.diag(
        np.concatenate([params.vector("random_walk_density") ** 2, params.vector("dynamic_bias_psd") ** 2])
    )


def discretize(F, G, Q_continuous, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Second-order transition matrix and ``Qd = G Q G^T dt``."""
    if not 0.0 <= dt <= 10.0:
        raise ValueError(f"dt={dt} outside (0, 10]")
    Fdt = F * dt
    Phi = np.eye(F.shape[0]) + Fdt + 0.5 * (Fdt @ Fdt)
    Qd = (G @ Q_continuous @ G.T) * dt
    Qd = 0.5 * (Qd + Qd.T)
    return Phi, Qd


def build_H() -> np.ndarray:
    H = np.zeros((N_MEAS, N_STATES))
    H[0:3, VEL] = np.eye(3)
    H[3:6, POS] = np.eye(3)
    return H


def check_covariance(P, what: str = "P") -> float:
    """Raise unless ``P`` is symmetric PSD; returns min eigenvalue / trace."""
    if not np.all(np.isfinite(P)):
        raise ValueError(f"{what} has non-finite entries")
    tr = float(np.trace(P))
    scale = max(tr, 1e-300)
    if np.max(np.abs(P - P.T)) > 1e-12 * scale:
        raise ValueError(f"{what} is not symmetric")
    lo = float(np.linalg.eigvalsh(P)[0])
    if lo < -PSD_TOL * scale:
        raise ValueError(f"{what} is not positive semidefinite (min eigenvalue {lo:.3g})")
    return lo / scale


def predict(fs: FilterState, model: LinearModel, u=None, dt: float = 0.0, check: bool = True) -> FilterState:
    """Time update: ``x <- Phi x + G u``, ``P <- Phi P Phi^T + Qd``."""
    if check:
        check_covariance(fs.P)
    x = model.Phi @ fs.x
    if u is not None:
        x = x + model.G @ np.asarray(u, dtype=float)
    P = model.Phi @ fs.P @ model.Phi.T + model.Qd
    P = 0.5 * (P + P.T)
    return FilterState(x, P, fs.t + dt)


def update(fs_minus: FilterState, model: LinearModel, dy, joseph: bool = False) -> tuple[FilterState, Innovation]:
    """Measurement update with gain ``K = P H^T (H P H^T + R)^-1``.

    The covariance uses ``(I - K H) P`` followed by symmetrisation, or the
    Joseph form when ``joseph`` is set.
    """
    H, R, P = model.H, model.R, fs_minus.P
    dy = np.asarray(dy, dtype=float)
    S = H @ P @ H.T + R
    S = 0.5 * (S + S.T)
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise FilterBreakdown(f"innovation covariance condition number {cond:.3g}")
    PHt = P @ H.T
    K = np.linalg.solve(S, PHt.T).T
    resid = dy - H @ fs_minus.x
    x = fs_minus.x + K @ resid
    I_KH = np.eye(P.shape[0]) - K @ H
    if joseph:
        P_new = I_KH @ P @ I_KH.T + K @ R @ K.T
    else:
        P_new = I_KH @ P
    P_new = 0.5 * (P_new + P_new.T)
    nis = float(resid @ np.linalg.solve(S, resid))
    return FilterState(x, P_new, fs_minus.t), Innovation(fs_minus.t, dy, resid, S, nis)


def ned_offset(a: GeodeticPosition, b: GeodeticPosition) -> np.ndarray:
    """NED metres of ``a`` relative to ``b``, using radii at ``a``."""
    r_m, r_t = earth_radii(a.latitude)
    return np.array(
        [
            (a.latitude - b.latitude) * (r_m + a.height),
            wrap_angle(a.longitude - b.longitude) * (r_t + a.height) * math.cos(a.latitude),
            -(a.height - b.height),
        ]
    )


def make_measurement(nav: NavState, fix: GnssFix, max_skew: float = 0.5) -> np.ndarray:
    """``dy = INS - GNSS``: velocity difference then NED position difference."""
    if abs(nav.t - fix.t) > max_skew:
        raise ValueError(f"INS epoch {nav.t} and GNSS fix {fix.t} differ by more than {max_skew} s")
    return np.concatenate([nav.velocity - fix.velocity, ned_offset(nav.position, fix.position)])


def apply_position_error(pos: GeodeticPosition, dr) -> GeodeticPosition:
    """Remove a NED-metre error from a geodetic position."""
    r_m, r_t = earth_radii(pos.latitude)
    return GeodeticPosition(
        pos.latitude - dr[0] / (r_m + pos.height),
        pos.longitude - dr[1] / ((r_t + pos.height) * math.cos(pos.latitude)),
        pos.height + dr[2],
    )


def feedback(nav: NavState, bias: BiasState, fs: FilterState) -> tuple[NavState, BiasState, FilterState]:
    """Close the loop: correct the INS and bias estimates, then zero the error state."""
    x = fs.x
    if not np.any(x):
        return nav, bias, fs
    dpsi = x[ATT]
    if not np.all(np.isfinite(x)) or np.linalg.norm(dpsi) >= 0.5:
        raise FilterDivergence(f"attitude correction {np.linalg.norm(dpsi):.3g} rad")
    att = apply_small_rotation(nav.attitude, -dpsi)
    nav = NavState(att, nav.velocity - x[VEL], apply_position_error(nav.position, x[POS]), nav.t)
    bias = BiasState(bias.gyro_dynamic_bias + x[BG], bias.accel_dynamic_bias + x[BA])
    return nav, bias, FilterState(np.zeros(N_STATES), fs.P, fs.t)


# --- full loop -------------------------------------------------------------


@dataclass(frozen=True)
class FuseConfig:
    gnss: GnssAccuracy = field(default_factory=GnssAccuracy)
    attitude_sigma_floor: float = math.radians(0.1)
    velocity_sigma: float = 0.1
    position_sigma: float = 5.0
    static_bias_sigma_gyro: float = 0.0
    static_bias_sigma_accel: float = 0.0
    joseph: bool = False
    check_covariance: bool = True
    cov_steps: int = 10  # IMU steps per covariance prediction


def initial_covariance(init: InitialAttitude, params: SensorParams, config: FuseConfig) -> np.ndarray:
    P = np.zeros((N_STATES, N_STATES))
    att = np.array(init.covariance, dtype=float)
    floor = config.attitude_sigma_floor**2
    att = att + np.diag(np.maximum(floor - np.diag(att), 0.0))
    P[ATT, ATT] = att
    P[VEL, VEL] = np.eye(3) * config.velocity_sigma**2
    P[POS, POS] = np.eye(3) * config.position_sigma**2
    sig = params.vector("dynamic_bias_sigma")
    sig[:3] += config.static_bias_sigma_gyro
    sig[3:] += config.static_bias_sigma_accel
    P[9:15, 9:15] = np.diag(sig**2)
    return P


@dataclass
class FuseResult:
    navs: list[NavState]
    innovations: list[Innovation]
    filter_state: FilterState
    bias: BiasState
    diverged: bool = False
    error: str = ""
    # (t, min eigenvalue / trace, max |P - P^T|) after each predict and update
    covariance_health: list[tuple[float, float, float]] = field(default_factory=list)

    @property
    def t(self) -> np.ndarray:
        return np.array([s.t for s in self.navs])

    def euler(self) -> np.ndarray:
        return np.array([tuple(s.euler) for s in self.navs]).reshape(-1, 3)

    def nis(self) -> np.ndarray:
        return np.array([i.nis for i in self.innovations])


def _match_fixes(t_imu: np.ndarray, gnss: list[GnssFix]) -> dict[int, GnssFix]:
    if len(t_imu) == 0:
        return {}
    dt = float(np.median(np.diff(t_imu))) if len(t_imu) > 1 else 1.0
    out = {}
    for fix in gnss:
        k = int(np.searchsorted(t_imu, fix.t))
        cands = [i for i in (k - 1, k) if 0 <= i < len(t_imu)]
        i = min(cands, key=lambda j: abs(t_imu[j] - fix.t))
        if abs(t_imu[i] - fix.t) <= 0.5 * dt + 1e-9:
            out[i] = fix
    return out


def fuse_run(
    imu: ImuLog,
    gnss: list[GnssFix],
    params: SensorParams,
    init: InitialAttitude,
    init_pv: tuple[GeodeticPosition, np.ndarray],
    config: FuseConfig | None = None,
) -> FuseResult:
    """Mechanize at IMU rate, and at each GNSS epoch predict, update and feed back.

    Returns one NavState per IMU sample (after any update at that epoch)
    and one Innovation per processed fix. A divergence stops the run and
    marks the partial result.
    """
    config = config or FuseConfig()
    t = imu.t
    pos0, vel0 = init_pv
    nav = NavState(euler_to_attitude(init.roll, init.pitch, init.yaw), vel0, pos0, float(t[0]) if len(t) else 0.0)
    g_off, a_off = params.static_offsets()
    # static offsets are known constants; the dynamic estimate evolves
    gyro = imu.gyro - g_off
    accel = imu.accel - a_off
    b = np.zeros(6)
    fs = FilterState(np.zeros(N_STATES), initial_covariance(init, params, config), nav.t)
    Qc = continuous_noise(params)
    H = build_H()
    R = config.gnss.R()
    tau = params.vector("correlation_time")
    fixes = _match_fixes(t, gnss)
    result = FuseResult([], [], fs, BiasState())
    health = result.covariance_health

    def record_health(P, when):
        if config.check_covariance:
            tr = float(np.trace(P))
            lo = float(np.linalg.eigvalsh(P)[0])
            health.append((when, lo / tr, float(np.max(np.abs(P - P.T)))))

    pending_dt = 0.0
    pending_steps = 0
    lin_nav = lin_fn = None

    def flush(fs):
        F = build_F(lin_nav, lin_fn, params)
        G = build_G(lin_nav)
        Phi, Qd = discretize(F, G, Qc, pending_dt)
        fs = predict(fs, LinearModel(Phi, G, Qd, H, R), dt=pending_dt, check=config.check_covariance)
        record_health(fs.P, fs.t)
        return fs

    try:
        for k in range(len(t)):
            fix = fixes.get(k)
            if fix is not None:
                if pending_steps:
                    fs = flush(fs)
                    pending_dt, pending_steps = 0.0, 0
                dy = make_measurement(nav, fix, max_skew=math.inf)
                fs, innov = update(fs, LinearModel(None, None, None, H, R), dy, joseph=config.joseph)
                record_health(fs.P, fs.t)
                result.innovations.append(replace(innov, t=float(t[k])))
                nav, bias, fs = feedback(nav, BiasState.from_vector(b), fs)
                b = bias.as_vector()
            result.navs.append(nav)
            if k == len(t) - 1:
                break
            dt = float(t[k + 1] - t[k])
            w_b = gyro[k] - b[:3]
            f_b = accel[k] - b[3:]
            if pending_steps == 0:
                lin_nav = nav
                lin_fn = nav.attitude.dcm @ f_b
            nav = propagate(nav, w_b, f_b, dt, float(t[k + 1]))
            b = b * np.exp(-dt / tau)
            pending_dt += dt
            pending_steps += 1
            if pending_steps >= config.cov_steps:
                fs = flush(fs)
                pending_dt, pending_steps = 0.0, 0
    except (FilterDivergence, FilterBreakdown, ValueError) as exc:
        result.diverged = True
        result.error = f"{type(exc).__name__}: {exc}"
    result.filter_state = fs
    result.bias = BiasState.from_vector(b)
    return result
