"""Calibrate the smartphone noise model from a synthetic static log.

Simulates a stationary log with the tabulated parameters, fits them back
with the Allan-variance estimator and prints truth next to estimate.

    python3 scripts/calibrate_demo.py --hours 2 --seed 0
"""

import argparse

import numpy as np

from lcfusion.sensors import corrupt_series, estimate_params, smartphone_params, stationary_bias

FIELDS = ("random_walk_density", "dynamic_bias_sigma", "correlation_time", "static_bias")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--hours", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gravity", type=float, default=9.80)
    args = p.parse_args()

    params = smartphone_params(args.gravity)
    rng = np.random.default_rng(args.seed)
    n = int(args.hours * 3600 * 100)
    t = np.arange(n) / 100.0
    log, _ = corrupt_series(t, np.zeros((n, 3)), np.tile([0.0, 0.0, args.gravity], (n, 1)), params, stationary_bias(params, rng), rng)
    est = estimate_params(log, args.gravity)

    names = [f"gyro {a}" for a in "xyz"] + [f"accel {a}" for a in "xyz"]
    for field in FIELDS:
        print(field)
        for name, a, b in zip(names, params.vector(field), est.vector(field)):
            print(f"  {name:8s} true {a:12.5g}  est {b:12.5g}  ratio {b / a if a else float('nan'):6.3f}")


if __name__ == "__main__":
    main()
