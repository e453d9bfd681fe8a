"""Error spread of the iterative method against the number of pairs consumed (sigma = 1 mm).

    python3 scripts/convergence.py [--realizations 100] [--out convergence.csv]
"""

import argparse

import numpy as np

from flangecal import io
from flangecal.flange_sim import COMPONENTS, SimScenario, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigma", type=float, default=1.0, help="noise, mm")
    ap.add_argument("--realizations", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    scenario = SimScenario(rng_seed=args.seed)
    res = run_sweep([args.sigma * 1e-3], scenario, args.realizations)
    std = res.traces[0]["std"]
    print(f"std over {args.realizations} realizations, sigma = {args.sigma} mm (mm / deg)")
    print(f"{'consumed':>8} " + " ".join(f"{c:>8}" for c in COMPONENTS))
    for k in (0, 2, 4, 6, 10, 16, 20, 30, 50, len(std) - 1):
        print(f"{k:>8} " + " ".join(f"{v:8.3f}" for v in std[k]))
    ratio = std[-1, 3:] / std[0, 3:]
    print("final / initial rotation std:", np.round(ratio, 3).tolist())
    if args.out:
        io.write_convergence_csv(args.out, res, args.seed, vars(args))


if __name__ == "__main__":
    main()
