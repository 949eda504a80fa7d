"""Stochastic IMU error model, synthetic corruption, and static calibration.

Each sensor axis carries white noise (random-walk density), a constant
static bias, and a first-order Gauss-Markov dynamic bias. The Gauss-Markov
driving noise has continuous density ``dynamic_bias_psd**2`` and the
parameter tables obey ``dynamic_bias_psd = dynamic_bias_sigma * sqrt(tau) / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import nnls
from scipy.signal import lfilter

AXES = ("x", "y", "z")
AXIS_FIELDS = (
    "random_walk_density",
    "static_bias",
    "dynamic_bias_sigma",
    "dynamic_bias_psd",
    "correlation_time",
)

# correlation times are snapped to {1, 2, 3, 5} x 10^k
_SNAP_MANTISSAS = (1.0, 2.0, 3.0, 5.0)


@dataclass(frozen=True)
class AxisNoiseParams:
    random_walk_density: float
    static_bias: float
    dynamic_bias_sigma: float
    dynamic_bias_psd: float
    correlation_time: float

    def __post_init__(self):
        for name in AXIS_FIELDS:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
        for name in ("random_walk_density", "dynamic_bias_sigma", "dynamic_bias_psd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.correlation_time <= 0:
            raise ValueError("correlation_time must be positive")

    @property
    def stationary_sigma(self) -> float:
        """Long-run standard deviation of the Gauss-Markov bias."""
        return self.dynamic_bias_psd * math.sqrt(self.correlation_time / 2.0)


@dataclass(frozen=True)
class SensorParams:
    """Per-axis gyro and accelerometer error parameters (SI units).

    ``gravity_hint`` is the gravity magnitude contained in the raw
    accelerometer z static bias; see :meth:`static_offsets`.
    """

    gyro: tuple[AxisNoiseParams, AxisNoiseParams, AxisNoiseParams]
    accel: tuple[AxisNoiseParams, AxisNoiseParams, AxisNoiseParams]
    gravity_hint: float = 0.0

    def __post_init__(self):
        if len(self.gyro) != 3 or len(self.accel) != 3:
            raise ValueError("exactly three axes per sensor")
        object.__setattr__(self, "gyro", tuple(self.gyro))
        object.__setattr__(self, "accel", tuple(self.accel))

    def _vec(self, sensor: str, name: str) -> np.ndarray:
        return np.array([getattr(ax, name) for ax in getattr(self, sensor)])

    @property
    def axes(self) -> tuple[AxisNoiseParams, ...]:
        return self.gyro + self.accel

    def vector(self, name: str) -> np.ndarray:
        """6-vector of one field, gyro axes then accel axes."""
        return np.concatenate([self._vec("gyro", name), self._vec("accel", name)])

    def static_offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Constant sensor offsets with gravity removed from the accel z entry."""
        gyro = self._vec("gyro", "static_bias")
        accel = self._vec("accel", "static_bias").copy()
        accel[2] -= math.copysign(self.gravity_hint, accel[2])
        return gyro, accel

    def with_gravity_hint(self, g: float) -> SensorParams:
        return replace(self, gravity_hint=g)

    def to_dict(self) -> dict[str, float]:
        out = {}
        for sensor in ("gyro", "accel"):
            for axis, p in zip(AXES, getattr(self, sensor)):
                for name in AXIS_FIELDS:
                    out[f"{sensor}.{axis}.{name}"] = getattr(p, name)
        out["accel.gravity_hint"] = self.gravity_hint
        return out

    @classmethod
    def from_dict(cls, d: dict[str, float]) -> SensorParams:
        sensors = {}
        for sensor in ("gyro", "accel"):
            sensors[sensor] = tuple(
                AxisNoiseParams(**{name: float(d[f"{sensor}.{axis}.{name}"]) for name in AXIS_FIELDS})
                for axis in AXES
            )
        return cls(gyro=sensors["gyro"], accel=sensors["accel"], gravity_hint=float(d.get("accel.gravity_hint", 0.0)))

    def scaled(self, noise: float = 1.0, static: float = 1.0) -> SensorParams:
        """Copy with all noise terms and/or static biases multiplied."""

        def f(p):
            return replace(
                p,
                random_walk_density=p.random_walk_density * noise,
                dynamic_bias_sigma=p.dynamic_bias_sigma * noise,
                dynamic_bias_psd=p.dynamic_bias_psd * noise,
                static_bias=p.static_bias * static,
            )

        return replace(self, gyro=tuple(map(f, self.gyro)), accel=tuple(map(f, self.accel)))


def _axes(rw, static, sigma, psd, tau):
    return tuple(AxisNoiseParams(*vals) for vals in zip(rw, static, sigma, psd, tau))


# Low-cost smartphone IMU, analysed from a two-hour static recording.
SMARTPHONE_GYRO = _axes(
    rw=(7.1242e-6, 5.9828e-6, 5.7239e-6),
    static=(-5.7265e-6, -5.2920e-6, 5.2511e-6),
    sigma=(2.0040e-7, 1.9759e-7, 2.1179e-7),
    psd=(3.1686e-6, 3.1241e-6, 3.3487e-6),
    tau=(1000.0, 1000.0, 1000.0),
)
SMARTPHONE_ACCEL = _axes(
    rw=(0.0013, 0.0024, 0.0030),
    static=(0.1280, 0.0095, 9.7601),
    sigma=(0.0011, 0.0018, 0.0016),
    psd=(0.0030, 0.0128, 0.0135),
    tau=(30.0, 200.0, 300.0),
)


def smartphone_params(gravity_hint: float = 0.0) -> SensorParams:
    return SensorParams(SMARTPHONE_GYRO, SMARTPHONE_ACCEL, gravity_hint)


def zero_params() -> SensorParams:
    ax = AxisNoiseParams(0.0, 0.0, 0.0, 0.0, 1.0)
    return SensorParams((ax,) * 3, (ax,) * 3)


@dataclass(frozen=True, eq=False)
class BiasState:
    gyro_dynamic_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_dynamic_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("gyro_dynamic_bias", "accel_dynamic_bias"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    @classmethod
    def from_vector(cls, v) -> BiasState:
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.gyro_dynamic_bias, self.accel_dynamic_bias])

    def __eq__(self, other):
        if not isinstance(other, BiasState):
            return NotImplemented
        return bool(np.array_equal(self.as_vector(), other.as_vector()))


@dataclass(frozen=True, eq=False)
class ImuSample:
    t: float
    angular_rate: np.ndarray
    specific_force: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular_rate", np.asarray(self.angular_rate, dtype=float).reshape(3))
        object.__setattr__(self, "specific_force", np.asarray(self.specific_force, dtype=float).reshape(3))

    def __eq__(self, other):
        if not isinstance(other, ImuSample):
            return NotImplemented
        return (
            self.t == other.t
            and np.array_equal(self.angular_rate, other.angular_rate)
            and np.array_equal(self.specific_force, other.specific_force)
        )


class ImuLog:
    """Columnar IMU stream: ``t`` (n,), ``gyro`` (n, 3), ``accel`` (n, 3)."""

    def __init__(self, t, gyro, accel):
        self.t = np.asarray(t, dtype=float)
        self.gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(accel, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.gyro) == len(self.accel)):
            raise ValueError("IMU columns differ in length")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("IMU timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> ImuSample:
        return ImuSample(self.t[i], self.gyro[i], self.accel[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_samples(cls, samples) -> ImuLog:
        samples = list(samples)
        if not samples:
            return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
        return cls(
            [s.t for s in samples],
            [s.angular_rate for s in samples],
            [s.specific_force for s in samples],
        )

    @property
    def sample_rate(self) -> float:
        return (len(self.t) - 1) / (self.t[-1] - self.t[0])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0


def gm_discretize(correlation_time: float, psd: float, dt: float) -> tuple[float, float]:
    """Discrete first-order Gauss-Markov transition and driving variance.

    Returns ``(exp(-dt/tau), psd**2 * dt)``.
    """
    if not correlation_time > 0:
        raise ValueError("correlation_time must be positive")
    if not dt > 0:
        raise ValueError("dt must be positive")
    return math.exp(-dt / correlation_time), psd * psd * dt


def _gm_coeffs(params: SensorParams, dt: float) -> tuple[np.ndarray, np.ndarray]:
    phi = np.empty(6)
    sd = np.empty(6)
    for i, ax in enumerate(params.axes):
        phi[i], q = gm_discretize(ax.correlation_time, ax.dynamic_bias_psd, dt)
        sd[i] = math.sqrt(q)
    return phi, sd


def step_bias(state: BiasState, params: SensorParams, dt: float, rng: np.random.Generator) -> BiasState:
    """Advance both dynamic biases one Gauss-Markov step (draws 6 normals)."""
    phi, sd = _gm_coeffs(params, dt)
    w = rng.standard_normal(6)
    return BiasState.from_vector(phi * state.as_vector() + sd * w)


def corrupt_imu(
    true_rate,
    true_sf,
    params: SensorParams,
    bias: BiasState,
    dt: float,
    rng: np.random.Generator,
    t: float = 0.0,
) -> tuple[ImuSample, BiasState]:
    """One measured sample from true kinematics; returns the advanced bias.

    measured = true + static offset + dynamic bias + white noise with
    per-sample sigma ``random_walk_density / sqrt(dt)``. Draws 12 normals:
    6 white-noise terms, then 6 bias-driving terms.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    white_sd = params.vector("random_walk_density") / math.sqrt(dt)
    g_off, a_off = params.static_offsets()
    b = bias.as_vector()
    white = white_sd * rng.standard_normal(6)
    meas = np.concatenate([true_rate, true_sf]) + np.concatenate([g_off, a_off]) + b + white
    nxt = step_bias(bias, params, dt, rng)
    return ImuSample(t, meas[:3], meas[3:]), nxt


def gm_series(phi: np.ndarray, sd: np.ndarray, b0: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Bias trajectory ``b[k]`` for k = 0..n from driving noise (n, m)."""
    n = len(noise)
    out = np.empty((n + 1, len(b0)))
    out[0] = b0
    for i in range(len(b0)):
        # b[k+1] = phi b[k] + sd w[k]
        y, _ = lfilter([sd[i]], [1.0, -phi[i]], noise[:, i], zi=[phi[i] * b0[i]])
        out[1:, i] = y
    return out


def corrupt_series(
    t,
    true_rate,
    true_sf,
    params: SensorParams,
    bias: BiasState,
    rng: np.random.Generator,
) -> tuple[ImuLog, BiasState]:
    """Vectorised :func:`corrupt_imu` over a uniformly sampled stream.

    Consumes the generator exactly as repeated calls to ``corrupt_imu``
    would, so both paths give the same samples for the same seed.
    """
    t = np.asarray(t, dtype=float)
    n = len(t)
    if n == 0:
        return ImuLog(t, np.zeros((0, 3)), np.zeros((0, 3))), bias
    dt = float(t[1] - t[0]) if n > 1 else 1.0
    true = np.hstack([np.asarray(true_rate, float).reshape(n, 3), np.asarray(true_sf, float).reshape(n, 3)])
    draws = rng.standard_normal((n, 12))
    white_sd = params.vector("random_walk_density") / math.sqrt(dt)
    phi, sd = _gm_coeffs(params, dt)
    b = gm_series(phi, sd, bias.as_vector(), draws[:, 6:])
    g_off, a_off = params.static_offsets()
    meas = true + np.concatenate([g_off, a_off]) + b[:-1] + white_sd * draws[:, :6]
    return ImuLog(t, meas[:, :3], meas[:, 3:]), BiasState.from_vector(b[-1])


def stationary_bias(params: SensorParams, rng: np.random.Generator) -> BiasState:
    """Draw dynamic biases from the Gauss-Markov stationary distribution."""
    s = np.array([ax.stationary_sigma for ax in params.axes])
    return BiasState.from_vector(s * rng.standard_normal(6))


# --- Allan variance -------------------------------------------------------


def cluster_grid(n: int, sample_rate: float, per_decade: int = 30, max_fraction: float = 0.5) -> np.ndarray:
    """Logarithmic cluster-time grid from one sample up to ``max_fraction`` of the record."""
    m_max = int(max_fraction * (n - 1))
    if m_max < 1:
        return np.zeros(0)
    decades = math.log10(m_max)
    m = np.unique(np.floor(np.logspace(0, decades, int(decades * per_decade) + 1)).astype(int))
    return m / sample_rate


def allan_deviation(series, sample_rate: float, cluster_times) -> list[tuple[float, float]]:
    """Overlapping Allan deviation of a uniformly sampled rate signal.

    Parameters
    ----------
    series : array-like
        Rate samples (e.g. rad/s).
    sample_rate : float
        Samples per second.
    cluster_times : sequence of float
        Cluster durations in seconds; each is rounded to a whole number of
        samples.

    Returns
    -------
    list of (tau, sigma)
    """
    y = np.asarray(series, dtype=float)
    tau0 = 1.0 / sample_rate
    ms = [max(1, int(round(tc * sample_rate))) for tc in cluster_times]
    if ms and len(y) < 2 * max(ms) + 1:
        raise ValueError(
            f"series of {len(y)} samples too short: cluster of {max(ms)} samples needs at least {2 * max(ms) + 1}"
        )
    # remove the mean before integrating to keep the cumulative sum well scaled
    theta = np.concatenate([[0.0], np.cumsum(y - y.mean())]) * tau0
    n = len(theta)
    out = []
    for m in ms:
        d = theta[2 * m :] - 2.0 * theta[m : n - m] + theta[: n - 2 * m]
        tau = m * tau0
        avar = np.dot(d, d) / (2.0 * tau * tau * (n - 2 * m))
        out.append((tau, math.sqrt(avar)))
    return out


def gm_allan_variance(tau_c, correlation_time: float, psd: float):
    """Closed-form Allan variance of a Gauss-Markov process with driving density psd**2."""
    T = np.asarray(tau_c, dtype=float)
    x = T / correlation_time
    # series near x -> 0 avoids cancellation: psd^2 (T/3 - T^2/(4 tau))
    small = x < 1e-3
    with np.errstate(over="ignore"):
        big = (psd**2 * correlation_time**2 / T) * (
            1.0 - (3.0 - 4.0 * np.exp(-x) + np.exp(-2.0 * x)) / (2.0 * x)
        )
    return np.where(small, psd**2 * (T / 3.0 - T * x / 4.0), big)


def snap_correlation_time(tau: float) -> float:
    """Nearest value (in log terms) on the {1, 2, 3, 5} x 10^k grid."""
    k = math.floor(math.log10(tau))
    cands = [m * 10.0**e for e in (k - 1, k, k + 1) for m in _SNAP_MANTISSAS]
    return min(cands, key=lambda c: abs(math.log(c / tau)))


@dataclass(frozen=True)
class AllanFit:
    random_walk_density: float
    dynamic_bias_psd: float
    correlation_time: float
    residual: float


def _fit_at(taus, avar, weights, tau_gm):
    # weighted relative residuals: minimise sum(w^2 ((N^2 a + q b) / y - 1)^2)
    a = 1.0 / taus
    b = gm_allan_variance(taus, tau_gm, 1.0)
    A = np.column_stack([weights * a / avar, weights * b / avar])
    coef, res = nnls(A, weights)
    return coef, res


def fit_allan(taus, adev, weights=None, tau_candidates=None) -> AllanFit:
    """White-noise plus Gauss-Markov model fitted to an Allan curve.

    For each candidate correlation time the model is linear in the two
    noise powers, which are solved by non-negative least squares on
    relative residuals; the candidate with the smallest residual wins.
    ``weights`` should grow with the number of independent clusters
    behind each point. Candidates default to the identifiable range, from
    the shortest cluster time to twice the longest.
    """
    taus = np.asarray(taus, dtype=float)
    avar = np.asarray(adev, dtype=float) ** 2
    weights = np.ones_like(taus) if weights is None else np.asarray(weights, dtype=float)
    if np.all(avar <= 0):
        return AllanFit(0.0, 0.0, float(taus[-1]) if len(taus) else 1.0, 0.0)
    keep = avar > 0
    taus, avar, weights = taus[keep], avar[keep], weights[keep]
    if tau_candidates is None:
        tau_candidates = np.logspace(math.log10(taus[0]), math.log10(2 * taus[-1]), 200)
    best = None
    for tc in tau_candidates:
        coef, res = _fit_at(taus, avar, weights, tc)
        if best is None or res < best[2]:
            best = (tc, coef, res)
    tc, coef, res = best
    return AllanFit(math.sqrt(coef[0]), math.sqrt(coef[1]), float(tc), float(res))


class NonStationaryError(ValueError):
    pass


def check_stationary(y, sample_rate: float, threshold: float = 5.0) -> None:
    """Split-halves mean-shift test.

    The half means may differ by at most ``threshold`` times the standard
    deviation expected from the Allan deviation at one sixteenth of the
    record, which tolerates white and Gauss-Markov noise but flags drifts.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    half = n // 2
    shift = abs(y[:half].mean() - y[half : 2 * half].mean())
    tc = (n // 16) / sample_rate
    (_, adev), = allan_deviation(y, sample_rate, [tc])
    sigma = math.sqrt(2.0) * adev
    if shift > threshold * sigma:
        raise NonStationaryError(f"mean shift {shift:.3g} between halves exceeds {threshold} sigma ({sigma:.3g})")


def estimate_params(
    static_log: ImuLog,
    gravity_hint: float,
    min_duration: float = 1800.0,
    per_decade: int = 30,
) -> SensorParams:
    """Per-axis error parameters from a stationary IMU log.

    ``static_bias`` is the raw mean (the accel z entry still contains
    gravity, recorded in ``gravity_hint``). Noise densities and the
    correlation time come from :func:`fit_allan`; the correlation time is
    snapped to the {1, 2, 3, 5} grid and ``dynamic_bias_sigma`` is set to
    ``2 psd / sqrt(tau)``.
    """
    if static_log.duration < min_duration:
        raise ValueError(f"static log of {static_log.duration:.0f} s shorter than {min_duration:.0f} s")
    fs = static_log.sample_rate
    data = np.hstack([static_log.gyro, static_log.accel])
    for j in range(6):
        check_stationary(data[:, j], fs)
    n = len(data)
    grid = cluster_grid(n, fs, per_decade=per_decade, max_fraction=0.25)
    m = np.round(grid * fs)
    weights = np.sqrt((n - 2 * m) / m)
    axes = []
    for j in range(6):
        curve = allan_deviation(data[:, j], fs, grid)
        taus = np.array([c[0] for c in curve])
        adev = np.array([c[1] for c in curve])
        fit = fit_allan(taus, adev, weights)
        tau = snap_correlation_time(fit.correlation_time)
        pos = adev > 0
        if np.any(pos):
            coef, _ = _fit_at(taus[pos], adev[pos] ** 2, weights[pos], tau)
        else:
            coef = np.zeros(2)
        rw, psd = math.sqrt(coef[0]), math.sqrt(coef[1])
        axes.append(
            AxisNoiseParams(
                random_walk_density=rw,
                static_bias=float(data[:, j].mean()),
                dynamic_bias_sigma=2.0 * psd / math.sqrt(tau),
                dynamic_bias_psd=psd,
                correlation_time=tau,
            )
        )
    return SensorParams(tuple(axes[:3]), tuple(axes[3:]), gravity_hint)
