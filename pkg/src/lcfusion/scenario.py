"""Synthetic trajectories, GNSS simulation and the initial-attitude sweep.

The sweep adds the same error ``epsilon`` to initial roll, pitch and yaw,
runs the filter on sensor streams that are identical across ``epsilon``
for a given seed, and reports the RMS attitude deviation from the
``epsilon = 0`` run.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .alignment import REFERENCE_ATTITUDE, InitialAttitude, inject_epsilon
from .ekf import FuseConfig, FuseResult, GnssAccuracy, GnssFix, fuse_run, initial_covariance
from .geo import (
    GeodeticPosition,
    apply_small_rotation,
    earth_radii,
    euler_to_attitude,
    gravity,
    wrap_angle,
)
from .ins import NavState, integrate_position, inverse_mechanize
from .sensors import BiasState, ImuLog, SensorParams, corrupt_series, smartphone_params

SEGMENT_TYPES = ("pause", "straight", "turn", "accelerate")
AXIS_NAMES = ("roll", "pitch", "yaw")


def smoothstep(u):
    """Quintic ramp from 0 to 1 with zero first and second derivatives at both ends."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


@dataclass(frozen=True)
class Segment:
    """One leg of a scenario.

    ``pause`` ramps to rest, ``straight`` ramps to ``speed`` (or keeps the
    current speed) and holds it, ``accelerate`` ramps to ``speed`` over the
    whole segment, and ``turn`` changes heading by ``angle`` at constant
    speed with either a ``constant`` or ``smooth`` yaw-rate profile.
    """

    type: str
    duration: float
    speed: float | None = None
    angle: float = 0.0
    profile: str = "smooth"
    ramp: float = 5.0

    def __post_init__(self):
        if self.type not in SEGMENT_TYPES:
            raise ValueError(f"unknown segment type {self.type!r}")
        if not self.duration > 0:
            raise ValueError("segment duration must be positive")
        if self.speed is not None and self.speed < 0:
            raise ValueError("segment speed must be non-negative")
        if not self.ramp > 0:
            raise ValueError("ramp time must be positive")
        if self.profile not in ("smooth", "constant"):
            raise ValueError(f"unknown turn profile {self.profile!r}")


def default_segments() -> tuple[Segment, ...]:
    return (
        Segment("pause", 10.0),
        Segment("straight", 40.0, speed=5.0),
        Segment("turn", 20.0, angle=math.pi / 2),
        Segment("straight", 40.0),
        Segment("pause", 10.0),
    )


@dataclass(frozen=True)
class Scenario:
    latitude: float = math.radians(37.38)
    longitude: float = math.radians(126.67)
    height: float = 30.0
    speed: float = 0.0
    roll: float = REFERENCE_ATTITUDE[0]
    pitch: float = REFERENCE_ATTITUDE[1]
    yaw: float = REFERENCE_ATTITUDE[2]
    segments: tuple[Segment, ...] = field(default_factory=default_segments)
    imu_rate: float = 100.0
    gnss_rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("scenario needs at least one segment")
        if not (self.imu_rate > 0 and self.gnss_rate > 0):
            raise ValueError("rates must be positive")
        if self.gnss_rate > self.imu_rate:
            raise ValueError("GNSS rate above IMU rate")
        if self.speed < 0:
            raise ValueError("initial speed must be non-negative")

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def initial_position(self) -> GeodeticPosition:
        return GeodeticPosition(self.latitude, self.longitude, self.height)

    @property
    def attitude(self) -> InitialAttitude:
        return InitialAttitude(self.roll, self.pitch, self.yaw)


def _profiles(scenario: Scenario, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Speed and heading at times ``t`` (relative to the start)."""
    speed = np.empty_like(t)
    yaw = np.empty_like(t)
    v0, psi0, t0 = scenario.speed, scenario.yaw, 0.0
    bounds = np.cumsum([s.duration for s in scenario.segments])
    seg_of = np.minimum(np.searchsorted(bounds, t, side="right"), len(bounds) - 1)
    for i, seg in enumerate(scenario.segments):
        sel = seg_of == i
        u = t[sel] - t0
        d = seg.duration
        if seg.type == "turn":
            if seg.speed is not None and seg.speed != v0:
                raise ValueError("turn segments keep the current speed")
            frac = u / d if seg.profile == "constant" else smoothstep(u / d)
            speed[sel] = v0
            yaw[sel] = psi0 + seg.angle * frac
            psi0 += seg.angle
        else:
            if seg.angle:
                raise ValueError(f"{seg.type} segment cannot carry a turn angle")
            target = {"pause": 0.0, "accelerate": seg.speed}.get(seg.type, seg.speed)
            if target is None:
                if seg.type == "accelerate":
                    raise ValueError("accelerate segment needs a target speed")
                target = v0
            ramp = d if seg.type == "accelerate" else min(seg.ramp, d)
            speed[sel] = v0 + (target - v0) * smoothstep(u / ramp)
            yaw[sel] = psi0
            v0 = target
        t0 += d
    return speed, yaw


def gen_trajectory(scenario: Scenario) -> list[NavState]:
    """Truth states at the IMU rate, positions integrated with the INS scheme."""
    n = int(round(scenario.duration * scenario.imu_rate))
    dt = 1.0 / scenario.imu_rate
    t = np.arange(n + 1) * dt
    speed, yaw = _profiles(scenario, t)
    vel = np.column_stack([speed * np.cos(yaw), speed * np.sin(yaw), np.zeros_like(t)])
    pos = scenario.initial_position
    out = []
    for k in range(n + 1):
        if k:
            pos = integrate_position(pos, vel[k - 1], vel[k], dt)
        out.append(NavState(euler_to_attitude(scenario.roll, scenario.pitch, float(wrap_angle(yaw[k]))), vel[k], pos, float(t[k])))
    return out


def gen_gnss(truth: list[NavState], accuracy: GnssAccuracy, gnss_rate: float, rng: np.random.Generator) -> list[GnssFix]:
    """Noisy fixes at every ``1/gnss_rate`` seconds of a uniformly sampled truth."""
    if len(truth) < 2:
        idx = list(range(len(truth)))
    else:
        step = int(round(1.0 / (gnss_rate * (truth[1].t - truth[0].t))))
        idx = list(range(0, len(truth), max(step, 1)))
    noise = rng.standard_normal((len(idx), 6))
    sd = np.array(
        [accuracy.sigma_velocity] * 3 + [accuracy.sigma_horizontal] * 2 + [accuracy.sigma_vertical]
    )
    noise = noise * sd
    fixes = []
    for k, e in zip(idx, noise):
        s = truth[k]
        p = s.position
        r_m, r_t = earth_radii(p.latitude)
        pos = GeodeticPosition(
            p.latitude + e[3] / (r_m + p.height),
            p.longitude + e[4] / ((r_t + p.height) * math.cos(p.latitude)),
            p.height - e[5],
        )
        fixes.append(GnssFix(s.t, pos, s.velocity + e[:3], accuracy.sigma_horizontal, accuracy.sigma_velocity))
    return fixes


def rms_deviation(run_a: list[NavState], run_b: list[NavState]) -> np.ndarray:
    """Per-angle RMS of wrapped (roll, pitch, yaw) differences."""
    if len(run_a) != len(run_b):
        raise ValueError(f"runs differ in length ({len(run_a)} vs {len(run_b)})")
    if not run_a:
        return np.zeros(3)
    ta = np.array([s.t for s in run_a])
    tb = np.array([s.t for s in run_b])
    if not np.array_equal(ta, tb):
        raise ValueError("runs have different timestamps")
    ea = np.array([tuple(s.euler) for s in run_a])
    eb = np.array([tuple(s.euler) for s in run_b])
    return euler_rms(ea, eb)


def euler_rms(ea: np.ndarray, eb: np.ndarray) -> np.ndarray:
    d = wrap_angle(ea - eb)
    return np.sqrt(np.mean(d * d, axis=0))


# --- simulation -------------------------------------------------------------


def default_params(scenario: Scenario | None = None) -> SensorParams:
    """Smartphone noise tables with the gravity hint set to local gravity."""
    sc = scenario or Scenario()
    return smartphone_params(gravity(sc.latitude, sc.height))


@dataclass
class SimulatedData:
    truth: list[NavState]
    imu: ImuLog
    gnss: list[GnssFix]
    initial_bias: BiasState


def ideal_imu(truth: list[NavState]) -> ImuLog:
    return inverse_mechanize(truth)


def simulate(
    scenario: Scenario,
    params: SensorParams,
    seed: int,
    accuracy: GnssAccuracy | None = None,
    truth: list[NavState] | None = None,
    ideal: ImuLog | None = None,
) -> SimulatedData:
    """Corrupted IMU and GNSS streams for one seed.

    The initial dynamic bias is drawn from N(0, dynamic_bias_sigma^2), the
    same prior the filter starts from.
    """
    accuracy = accuracy or GnssAccuracy()
    truth = truth if truth is not None else gen_trajectory(scenario)
    ideal = ideal if ideal is not None else ideal_imu(truth)
    rng = np.random.default_rng(seed)
    b0 = BiasState.from_vector(params.vector("dynamic_bias_sigma") * rng.standard_normal(6))
    imu, _ = corrupt_series(ideal.t, ideal.gyro, ideal.accel, params, b0, rng)
    gnss = gen_gnss(truth, accuracy, scenario.gnss_rate, rng)
    return SimulatedData(truth, imu, gnss, b0)


def matched_start(truth0: NavState, P0: np.ndarray, rng: np.random.Generator) -> tuple[InitialAttitude, tuple]:
    """Initial attitude, position and velocity with errors drawn from ``P0``."""
    e = np.linalg.cholesky(P0[:9, :9] + 1e-30 * np.eye(9)) @ rng.standard_normal(9)
    att = apply_small_rotation(truth0.attitude, -e[0:3])
    roll, pitch, yaw = NavState(att, truth0.velocity, truth0.position).euler
    p = truth0.position
    r_m, r_t = earth_radii(p.latitude)
    pos = GeodeticPosition(
        p.latitude + e[6] / (r_m + p.height),
        p.longitude + e[7] / ((r_t + p.height) * math.cos(p.latitude)),
        p.height - e[8],
    )
    return InitialAttitude(roll, pitch, yaw), (pos, truth0.velocity + e[3:6])


def run_matched(
    scenario: Scenario, params: SensorParams, seed: int, config: FuseConfig | None = None, data: SimulatedData | None = None
) -> tuple[SimulatedData, FuseResult]:
    """Filter run whose initial errors and sensor noise follow the filter model."""
    config = config or FuseConfig()
    data = data or simulate(scenario, params, seed, config.gnss)
    truth0 = data.truth[0]
    zero = InitialAttitude(*truth0.euler)
    P0 = initial_covariance(zero, params, config)
    rng = np.random.default_rng([seed, 1])
    init, pv = matched_start(truth0, P0, rng)
    return data, fuse_run(data.imu, data.gnss, params, init, pv, config)


# --- epsilon sweep ------------------------------------------------------------


def default_grid() -> np.ndarray:
    return np.radians(np.round(np.arange(11) * 0.01, 2))


@dataclass(frozen=True, eq=False)
class SweepConfig:
    epsilon_grid: np.ndarray = field(default_factory=default_grid)
    seeds: tuple[int, ...] = tuple(range(10))
    scenario: Scenario = field(default_factory=Scenario)
    params: SensorParams | None = None
    init: InitialAttitude | None = None
    fuse: FuseConfig = field(default_factory=lambda: FuseConfig(check_covariance=False))

    def __post_init__(self):
        grid = np.asarray(self.epsilon_grid, dtype=float).reshape(-1)
        if len(grid) < 1 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise ValueError("epsilon grid must start at 0 and increase strictly")
        if not self.seeds:
            raise ValueError("at least one seed")
        object.__setattr__(self, "epsilon_grid", grid)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.params is None:
            object.__setattr__(self, "params", default_params(self.scenario))
        if self.init is None:
            object.__setattr__(self, "init", self.scenario.attitude)


@dataclass(eq=False)
class SweepResult:
    """RMS deviations indexed ``[epsilon, seed, axis]`` (rad).

    ``baseline`` holds the absolute attitude RMS error of the ``epsilon = 0``
    run against truth, per seed.
    """

    epsilon: np.ndarray
    seeds: tuple[int, ...]
    rms: np.ndarray
    diverged: np.ndarray
    baseline: np.ndarray | None = None

    @property
    def mean(self) -> np.ndarray:
        return self.rms.mean(axis=1)

    def __eq__(self, other):
        if not isinstance(other, SweepResult):
            return NotImplemented
        return (
            np.array_equal(self.epsilon, other.epsilon)
            and tuple(self.seeds) == tuple(other.seeds)
            and np.array_equal(self.rms, other.rms)
            and np.array_equal(self.diverged, other.diverged)
        )


def _seed_runs(args):
    cfg, seed, truth, ideal = args
    data = simulate(cfg.scenario, cfg.params, seed, cfg.fuse.gnss, truth=truth, ideal=ideal)
    pv = (truth[0].position, truth[0].velocity)
    runs = [fuse_run(data.imu, data.gnss, cfg.params, inject_epsilon(cfg.init, float(e)), pv, cfg.fuse) for e in cfg.epsilon_grid]
    ref = runs[0].euler()
    rms = np.zeros((len(runs), 3))
    div = np.zeros(len(runs), dtype=bool)
    for i, r in enumerate(runs):
        e = r.euler()
        n = min(len(e), len(ref))
        rms[i] = euler_rms(e[:n], ref[:n]) if n else np.nan
        div[i] = r.diverged
    truth_e = np.array([tuple(s.euler) for s in truth])
    base = euler_rms(ref, truth_e[: len(ref)])
    return rms, div, base


def epsilon_sweep(cfg: SweepConfig, jobs: int = 1) -> SweepResult:
    """Run every (epsilon, seed) pair; seeds are distributed over ``jobs`` processes."""
    truth = gen_trajectory(cfg.scenario)
    ideal = ideal_imu(truth)
    tasks = [(cfg, s, truth, ideal) for s in cfg.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_seed_runs, tasks))
    else:
        outs = [_seed_runs(t) for t in tasks]
    rms = np.stack([o[0] for o in outs], axis=1)
    div = np.stack([o[1] for o in outs], axis=1)
    base = np.stack([o[2] for o in outs])
    return SweepResult(cfg.epsilon_grid.copy(), cfg.seeds, rms, div, base)


# --- report -------------------------------------------------------------------

REPORT_FORMATS = ("csv", "json-lines", "gnuplot-data")


def _rows(result: SweepResult):
    for i, eps in enumerate(result.epsilon):
        for a, axis in enumerate(AXIS_NAMES):
            vals = result.rms[i, :, a]
            mean = float(np.mean(vals))
            yield {
                "epsilon_rad": float(eps),
                "epsilon_deg": math.degrees(eps),
                "axis": axis,
                "mean_rad": mean,
                "mean_deg": math.degrees(mean),
                "seeds": [int(s) for s in result.seeds],
                "per_seed_rad": [float(v) for v in vals],
                "diverged": [bool(d) for d in result.diverged[i]],
            }


def report(result: SweepResult, fmt: str = "csv") -> str:
    """Serialise a sweep: one row per (epsilon, axis) with mean and per-seed values."""
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; choose from {', '.join(REPORT_FORMATS)}")
    rows = list(_rows(result))
    seeds = [int(s) for s in result.seeds]
    if fmt == "json-lines":
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    per_seed = [f"seed{s}_rad" for s in seeds] + [f"seed{s}_diverged" for s in seeds]
    head = ["epsilon_rad", "epsilon_deg", "axis", "mean_rad", "mean_deg"] + per_seed
    lines = []
    for r in rows:
        vals = [repr(r["epsilon_rad"]), repr(r["epsilon_deg"]), r["axis"], repr(r["mean_rad"]), repr(r["mean_deg"])]
        vals += [repr(v) for v in r["per_seed_rad"]] + [str(int(d)) for d in r["diverged"]]
        lines.append(vals)
    if fmt == "csv":
        return "\n".join(",".join(x) for x in [head] + lines) + "\n"
    # gnuplot: one block per axis, blocks separated by two blank lines
    out = ["# " + " ".join(head)]
    for a, axis in enumerate(AXIS_NAMES):
        if a:
            out += ["", ""]
        out += [" ".join(v) for v in lines if v[2] == axis]
    return "\n".join(out) + "\n"


def parse_report(text: str, fmt: str = "csv") -> SweepResult:
    """Inverse of :func:`report` (the ``baseline`` field is not serialised)."""
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown report format {fmt!r}")
    if fmt == "json-lines":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        seeds = tuple(rows[0]["seeds"]) if rows else ()
        recs = [(r["epsilon_rad"], r["axis"], r["per_seed_rad"], r["diverged"]) for r in rows]
    else:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if fmt == "csv":
            head, body = lines[0].split(","), [ln.split(",") for ln in lines[1:]]
        else:
            head, body = lines[0].lstrip("# ").split(), [ln.split() for ln in lines[1:]]
        seeds = tuple(int(h[4:-4]) for h in head if h.endswith("_rad") and h.startswith("seed"))
        k = len(seeds)
        recs = [
            (float(b[0]), b[2], [float(v) for v in b[5 : 5 + k]], [bool(int(v)) for v in b[5 + k : 5 + 2 * k]])
            for b in body
        ]
    eps = sorted({r[0] for r in recs})
    rms = np.zeros((len(eps), len(seeds), 3))
    div = np.zeros((len(eps), len(seeds)), dtype=bool)
    for e, axis, vals, d in recs:
        i = eps.index(e)
        rms[i, :, AXIS_NAMES.index(axis)] = vals
        div[i] = d
    return SweepResult(np.array(eps), seeds, rms, div)


def realism_gate(result: SweepResult, bound: float = math.radians(1.0)) -> tuple[np.ndarray, bool]:
    """Mean absolute attitude RMS error of the unperturbed runs and whether it is within ``bound``."""
    if result.baseline is None:
        raise ValueError("sweep result carries no baseline")
    mean = result.baseline.mean(axis=0)
    return mean, bool(np.all(mean <= bound))

