"""Command-line entry point: calibrate, align, simulate, fuse, sweep."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .alignment import MotionDetected, align_static, parse_axis_map
from .ekf import FuseConfig, fuse_run
from .scenario import (
    REPORT_FORMATS,
    default_params,
    epsilon_sweep,
    gen_trajectory,
    realism_gate,
    report,
    simulate,
)
from .sensors import NonStationaryError, estimate_params

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGED = 3

log = logging.getLogger("lcfusion")


class InputError(Exception):
    pass


def cmd_calibrate(args) -> int:
    imu = fio.read_imu(args.imu_log)
    g = args.gravity_hint
    if g is None:
        g = float(np.linalg.norm(imu.accel.mean(0)))
    params = estimate_params(imu, g, min_duration=args.min_duration)
    fio.write_params(args.out, params)
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_align(args) -> int:
    imu = fio.read_imu(args.imu_log)
    axis_map = parse_axis_map(Path(args.axis_map).read_text()) if args.axis_map else None
    if args.yaw == "gyrocompass":
        yaw = "gyrocompass"
    else:
        try:
            yaw = float(args.yaw)
        except ValueError:
            raise InputError(f"--yaw must be radians or 'gyrocompass', got {args.yaw!r}") from None
    lat = args.latitude
    att = align_static(imu, yaw=yaw, latitude=lat, axis_map=axis_map, min_duration=args.min_duration)
    if att.low_confidence:
        log.warning("gyrocompass heading is low confidence (sigma %.3g rad)", math.sqrt(att.covariance[2, 2]))
    fio.write_attitude(args.out, att)
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = fio.scenario_from_kv(fio.read_kv(args.scenario)) if args.scenario else fio.scenario_from_kv({})
    params = fio.read_params(args.params) if args.params else default_params(scenario)
    seed = scenario.seed if args.seed is None else args.seed
    accuracy = fio.accuracy_from_kv(fio.read_kv(args.scenario)) if args.scenario else None
    truth = gen_trajectory(scenario)
    data = simulate(scenario, params, seed, accuracy, truth=truth)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fio.write_imu(out / "imu.csv", data.imu)
    fio.write_gnss(out / "gnss.csv", data.gnss)
    fio.write_nav(out / "truth.csv", truth)
    fio.write_attitude(out / "init.att", scenario.attitude)
    fio.write_params(out / "params.txt", params)
    log.info("wrote %d IMU samples and %d fixes to %s", len(data.imu), len(data.gnss), out)
    return EXIT_OK


def cmd_fuse(args) -> int:
    imu = fio.read_imu(args.imu)
    gnss = fio.read_gnss(args.gnss)
    params = fio.read_params(args.params)
    init = fio.read_attitude(args.init)
    if not gnss:
        raise InputError("GNSS log has no fixes")
    if gnss[0].t > imu.t[0] + 0.5 / imu.sample_rate or gnss[-1].t < imu.t[0]:
        raise InputError("GNSS log must start at the first IMU epoch")
    first = gnss[0]
    result = fuse_run(imu, gnss, params, init, (first.position, first.velocity), FuseConfig(joseph=args.joseph))
    fio.write_nav(args.out, result.navs)
    if args.innovations:
        fio.write_innovations(args.innovations, result)
    if result.diverged:
        log.error("filter diverged at t=%.3f: %s", result.navs[-1].t, result.error)
        return EXIT_DIVERGED
    return EXIT_OK


def _format_for(path: str, fmt: str | None) -> str:
    if fmt:
        return fmt
    suffix = Path(path).suffix.lower()
    return {".jsonl": "json-lines", ".json": "json-lines", ".dat": "gnuplot-data"}.get(suffix, "csv")


def cmd_sweep(args) -> int:
    cfg = fio.read_sweep(args.config) if args.config else fio.sweep_from_kv({})
    result = epsilon_sweep(cfg, jobs=args.jobs)
    Path(args.out).write_text(report(result, _format_for(args.out, args.format)))
    mean, ok = realism_gate(result)
    log.info(
        "baseline attitude RMS vs truth (deg): roll %.4f pitch %.4f yaw %.4f, within 1 deg: %s",
        *np.degrees(mean),
        ok,
    )
    if result.diverged.any():
        log.error("%d runs diverged", int(result.diverged.sum()))
        return EXIT_DIVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lcfusion", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="estimate sensor parameters from a static IMU log")
    c.add_argument("--imu-log", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--gravity-hint", type=float, help="gravity in the accel z mean (default: |mean f|)")
    c.add_argument("--min-duration", type=float, default=1800.0)
    c.set_defaults(func=cmd_calibrate)

    a = sub.add_parser("align", help="initial attitude from a static IMU log")
    a.add_argument("--imu-log", required=True)
    a.add_argument("--yaw", default="0", help="heading in radians or 'gyrocompass'")
    a.add_argument("--axis-map", help="file with a signed axis permutation, e.g. 'x=+y, y=+x, z=-z'")
    a.add_argument("--latitude", type=float, help="radians, needed for gyrocompassing")
    a.add_argument("--min-duration", type=float, default=60.0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_align)

    s = sub.add_parser("simulate", help="synthesise IMU, GNSS and truth logs")
    s.add_argument("--scenario")
    s.add_argument("--params")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fuse", help="run the filter over IMU and GNSS logs")
    f.add_argument("--imu", required=True)
    f.add_argument("--gnss", required=True)
    f.add_argument("--params", required=True)
    f.add_argument("--init", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--innovations")
    f.add_argument("--joseph", action="store_true")
    f.set_defaults(func=cmd_fuse)

    w = sub.add_parser("sweep", help="initial-attitude error sweep")
    w.add_argument("--config")
    w.add_argument("--out", required=True)
    w.add_argument("--format", choices=REPORT_FORMATS)
    w.add_argument("--jobs", type=int, default=1)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, fio.FormatError, MotionDetected, NonStationaryError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
