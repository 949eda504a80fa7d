"""Filter consistency on the default scenario.

Runs the filter with initial errors and sensor noise drawn from its own
model and reports the fraction of GNSS epochs whose normalised innovation
squared falls inside the two-sided chi-square band.

    python3 scripts/nis_check.py --seeds 10
"""

import argparse

import numpy as np
from scipy.stats import chi2

from lcfusion.ekf import FuseConfig
from lcfusion.scenario import Scenario, default_params, gen_trajectory, ideal_imu, run_matched, simulate


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--level", type=float, default=0.95)
    args = p.parse_args()

    sc = Scenario()
    params = default_params(sc)
    cfg = FuseConfig()
    truth = gen_trajectory(sc)
    ideal = ideal_imu(truth)
    lo, hi = chi2.ppf([(1 - args.level) / 2, (1 + args.level) / 2], 6)
    fracs = []
    for seed in range(args.seeds):
        data = simulate(sc, params, seed, cfg.gnss, truth=truth, ideal=ideal)
        _, res = run_matched(sc, params, seed, cfg, data)
        nis = res.nis()
        fracs.append(np.mean((nis >= lo) & (nis <= hi)))
        print(f"seed {seed:3d}: mean NIS {nis.mean():6.2f}, in band {fracs[-1]:.1%}, diverged {res.diverged}")
    print(f"band [{lo:.3f}, {hi:.3f}], mean fraction in band {np.mean(fracs):.1%}")


if __name__ == "__main__":
    main()
