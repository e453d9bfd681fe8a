"""Tactile seam tracking on a few seam shapes with a noisy vision path.

    python3 scripts/weld_demo.py [--noise 1.0]
"""

import argparse
import math
import time

import numpy as np

from flangecal.weld_sim import ServoParams, arc_seam, make_world, path_rms, run_weld, s_curve_seam, straight_seam


def over_seam_rms(points, seam) -> float:
    """RMS distance to the seam, skipping points before its start or past its end."""
    d = []
    for p in points:
        q, _, s, _, _ = seam.closest(p)
        if 0.0 < s < seam.length:
            d.append(np.linalg.norm(p - q))
    return float(np.sqrt(np.mean(np.square(d)))) if d else float("nan")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--noise", type=float, default=1.0, help="vision path noise, mm")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    seams = {
        "straight 300 mm": straight_seam(0.3),
        "s-curve 300 mm": s_curve_seam(0.3, 0.02),
        "arc r=100 mm, 90 deg": arc_seam(0.1, math.pi / 2, lead=0.02),
        "arc r=15 mm, 143 deg": arc_seam(0.015, 2.5, lead=0.1),
    }
    print(f"{'seam':<22} {'status':<12} {'planned':>8} {'refined':>8} {'torch':>8}  (rms to seam, mm)  time")
    for name, seam in seams.items():
        world = make_world(seam, vision_noise=args.noise * 1e-3, seed=args.seed)
        t0 = time.time()
        tr = run_weld(world, ServoParams())
        print(f"{name:<22} {tr.status:<12} {path_rms(world.planned_path, seam) * 1e3:8.3f} "
              f"{path_rms(tr.refined_path, seam) * 1e3:8.3f} {over_seam_rms(tr.P_t[::20], seam) * 1e3:8.3f}"
              f"{'':19}{time.time() - t0:5.1f} s")


if __name__ == "__main__":
    main()
