"""Text formats: IMU/GNSS/navigation/innovation CSV and flat key-value files."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .alignment import InitialAttitude
from .ekf import FuseConfig, FuseResult, GnssAccuracy, GnssFix
from .geo import GeodeticPosition
from .scenario import Scenario, Segment, SweepConfig
from .sensors import ImuLog, SensorParams

IMU_HEADER = ("t", "gx", "gy", "gz", "ax", "ay", "az")
GNSS_HEADER = ("t", "lat", "lon", "h", "vn", "ve", "vd", "sigma_pos", "sigma_vel")
NAV_HEADER = ("t", "roll", "pitch", "yaw", "vn", "ve", "vd", "lat", "lon", "h")
INNOVATION_HEADER = ("t", "dy1", "dy2", "dy3", "dy4", "dy5", "dy6", "nis")


class FormatError(ValueError):
    pass


def _read_table(path, header) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise FormatError(f"{path}: empty file")
    got = tuple(c.strip() for c in rows[0])
    if got != header:
        raise FormatError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite values")
    return data


def _write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])


def read_imu(path) -> ImuLog:
    d = _read_table(path, IMU_HEADER)
    try:
        return ImuLog(d[:, 0], d[:, 1:4], d[:, 4:7])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_imu(path, log: ImuLog) -> None:
    _write_table(path, IMU_HEADER, np.column_stack([log.t, log.gyro, log.accel]))


def read_gnss(path) -> list[GnssFix]:
    d = _read_table(path, GNSS_HEADER)
    if len(d) > 1 and not np.all(np.diff(d[:, 0]) > 0):
        raise FormatError(f"{path}: GNSS timestamps must be strictly increasing")
    return [GnssFix(r[0], GeodeticPosition(r[1], r[2], r[3]), r[4:7], r[7], r[8]) for r in d]


def write_gnss(path, fixes: list[GnssFix]) -> None:
    rows = [
        [f.t, f.position.latitude, f.position.longitude, f.position.height, *f.velocity, f.sigma_pos, f.sigma_vel]
        for f in fixes
    ]
    _write_table(path, GNSS_HEADER, rows)


def write_nav(path, navs) -> None:
    rows = [[s.t, *s.euler, *s.velocity, s.position.latitude, s.position.longitude, s.position.height] for s in navs]
    _write_table(path, NAV_HEADER, rows)


def read_nav(path) -> np.ndarray:
    return _read_table(path, NAV_HEADER)


def write_innovations(path, result: FuseResult) -> None:
    _write_table(path, INNOVATION_HEADER, [[i.t, *i.residual, i.nis] for i in result.innovations])


# --- key-value files --------------------------------------------------------


def parse_kv(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; later keys must not repeat earlier ones."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise FormatError(f"line {n}: expected 'key = value'")
        if key in out:
            raise FormatError(f"line {n}: duplicate key {key!r}")
        out[key] = val
    return out


def format_kv(d: dict) -> str:
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in d.items())


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text())


def _float(d, key, default=None):
    if key not in d:
        if default is None:
            raise FormatError(f"missing key {key!r}")
        return default
    try:
        return float(d[key])
    except ValueError:
        raise FormatError(f"key {key!r}: not a number: {d[key]!r}") from None


def read_params(path) -> SensorParams:
    d = read_kv(path)
    try:
        return SensorParams.from_dict({k: float(v) for k, v in d.items()})
    except KeyError as exc:
        raise FormatError(f"{path}: missing key {exc}") from None
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_params(path, params: SensorParams) -> None:
    Path(path).write_text(format_kv(params.to_dict()))


def write_attitude(path, att: InitialAttitude) -> None:
    d = {"roll": att.roll, "pitch": att.pitch, "yaw": att.yaw}
    for i in range(3):
        for j in range(3):
            d[f"cov.{i}{j}"] = float(att.covariance[i, j])
    d["low_confidence"] = int(att.low_confidence)
    Path(path).write_text(format_kv(d))


def read_attitude(path) -> InitialAttitude:
    d = read_kv(path)
    cov = np.array([[_float(d, f"cov.{i}{j}", 0.0) for j in range(3)] for i in range(3)])
    try:
        return InitialAttitude(
            _float(d, "roll"), _float(d, "pitch"), _float(d, "yaw"), cov, bool(int(d.get("low_confidence", "0")))
        )
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# --- scenario and sweep configs ----------------------------------------------

_SCENARIO_FLOATS = ("latitude", "longitude", "height", "speed", "roll", "pitch", "yaw", "imu_rate", "gnss_rate")


def scenario_from_kv(d: dict[str, str]) -> Scenario:
    """Scenario from ``key = value`` pairs; segments use ``segment.N.field`` keys.

    Angles are radians. Without any ``segment.*`` key the default route is used.
    """
    kw = {k: _float(d, k) for k in _SCENARIO_FLOATS if k in d}
    if "seed" in d:
        kw["seed"] = int(d["seed"])
    seg_keys: dict[int, dict[str, str]] = {}
    for k, v in d.items():
        if k.startswith("segment."):
            parts = k.split(".")
            if len(parts) != 3 or not parts[1].isdigit():
                raise FormatError(f"bad segment key {k!r}")
            seg_keys.setdefault(int(parts[1]), {})[parts[2]] = v
    if seg_keys:
        segs = []
        for i in sorted(seg_keys):
            s = seg_keys[i]
            unknown = set(s) - {"type", "duration", "speed", "angle", "profile", "ramp"}
            if unknown:
                raise FormatError(f"segment {i}: unknown fields {sorted(unknown)}")
            if "type" not in s:
                raise FormatError(f"segment {i}: missing type")
            try:
                segs.append(
                    Segment(
                        s["type"],
                        _float(s, "duration"),
                        speed=float(s["speed"]) if "speed" in s else None,
                        angle=_float(s, "angle", 0.0),
                        profile=s.get("profile", "smooth"),
                        ramp=_float(s, "ramp", 5.0),
                    )
                )
            except ValueError as exc:
                raise FormatError(f"segment {i}: {exc}") from None
        kw["segments"] = tuple(segs)
    try:
        return Scenario(**kw)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def accuracy_from_kv(d: dict[str, str]) -> GnssAccuracy:
    base = GnssAccuracy()
    return GnssAccuracy(
        _float(d, "gnss.sigma_horizontal", base.sigma_horizontal),
        _float(d, "gnss.sigma_vertical", base.sigma_vertical),
        _float(d, "gnss.sigma_velocity", base.sigma_velocity),
    )


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _seed_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(x) for x in text.replace(",", " ").split())


def sweep_from_kv(d: dict[str, str], base_dir: Path | None = None) -> SweepConfig:
    """Sweep config: scenario keys plus ``epsilon_deg`` or ``epsilon_rad``, ``seeds``, ``params``."""
    scenario = scenario_from_kv(d)
    kw = {"scenario": scenario}
    if "epsilon_rad" in d:
        kw["epsilon_grid"] = np.array(_float_list(d["epsilon_rad"]))
    elif "epsilon_deg" in d:
        kw["epsilon_grid"] = np.radians(_float_list(d["epsilon_deg"]))
    if "seeds" in d:
        kw["seeds"] = _seed_list(d["seeds"])
    if "params" in d:
        p = Path(d["params"])
        kw["params"] = read_params(p if p.is_absolute() or base_dir is None else base_dir / p)
    kw["fuse"] = FuseConfig(gnss=accuracy_from_kv(d), check_covariance=False)
    try:
        return SweepConfig(**kw)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def read_sweep(path) -> SweepConfig:
    return sweep_from_kv(read_kv(path), Path(path).parent)


def scenario_to_kv(sc: Scenario) -> str:
    d = {k: float(getattr(sc, k)) for k in _SCENARIO_FLOATS}
    d["seed"] = sc.seed
    for i, s in enumerate(sc.segments):
        d[f"segment.{i}.type"] = s.type
        d[f"segment.{i}.duration"] = float(s.duration)
        if s.speed is not None:
            d[f"segment.{i}.speed"] = float(s.speed)
        if s.type == "turn":
            d[f"segment.{i}.angle"] = float(s.angle)
            d[f"segment.{i}.profile"] = s.profile
        d[f"segment.{i}.ramp"] = float(s.ramp)
    return format_kv(d)

