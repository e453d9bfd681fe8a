"""All-points versus iterative error spread over a range of noise levels.

    python3 scripts/noise_sweep.py [--step 0.2] [--max 10] [--realizations 25] [--jobs 1]
"""

import argparse
import time

import numpy as np

from flangecal import io
from flangecal.flange_sim import COMPONENTS, SimScenario, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--step", type=float, default=0.2, help="mm")
    ap.add_argument("--max", type=float, default=10.0, help="mm")
    ap.add_argument("--realizations", type=int, default=25)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    n = int(round(args.max / args.step))
    sigmas = np.round(np.arange(1, n + 1) * args.step, 10) * 1e-3
    t0 = time.time()
    res = run_sweep(sigmas, SimScenario(rng_seed=args.seed), args.realizations, trace_sigmas=(), n_jobs=args.jobs)
    print(f"{len(sigmas)} levels x {args.realizations} realizations in {time.time() - t0:.0f} s")
    print("slope of std per mm of noise (mm/mm, deg/mm)")
    print(f"{'':>10} " + " ".join(f"{c:>8}" for c in COMPONENTS))
    for m in res.stats:
        print(f"{m:>10} " + " ".join(f"{res.slope(m, c):8.4f}" for c in COMPONENTS))
    for c in ("dx", "dy", "dz"):
        print(f"{c} iterative / all-points slope: {res.slope('iterative', c) / res.slope('all', c):.3f}")
    if args.out:
        io.write_sweep_csv(args.out, res, args.seed, vars(args))


if __name__ == "__main__":
    main()
