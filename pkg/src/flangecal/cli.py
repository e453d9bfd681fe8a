"""
Command-line entry point.

Lengths on the command line are millimeters unless a flag says otherwise.
Exit codes: 0 success, 2 usage or bad input file, 3 numeric failure
(degenerate data, failed registration, kinematic singularity), 4 lost
contact during a welding run.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import calib, io, weld_sim
from .circle_fit import RansacParams, detect_flange
from .cloud import ClusterParams, disc_extent, OutlierParams, PassThroughBox, PointCloud
from .errors import ContactLost, FlangeCalError, NeverEngaged, ParseError, SchemaError, UnitMismatch
from .flange_sim import (
    FlangeModel,
    SimScenario,
    generate_flange_cloud,
    nondegenerate_order,
    random_offsets,
    run_sweep,
    sample_poses,
)
from .icp import CloudVerifier, CostKind, cost
from .reference import ReferenceRow, format_table
from .rigid_fit import SamplePair, fit_rigid
from .se3 import H_TRUE, PoseError, RigidTransform, compose, invert

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CONTACT = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument helpers


def _floats(text: str, n: Optional[int] = None) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} numbers, got {len(vals)}")
    return vals


def _vec3(text):
    return _floats(text, 3)


def _vec6(text):
    return _floats(text, 6)


def parse_range(text: str) -> np.ndarray:
    """``start:step:stop`` inclusive of stop, e.g. ``0.2:0.2:10``."""
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"range must be start:step:stop, got {text!r}")
    try:
        a, h, b = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric range {text!r}") from None
    if not (h > 0 and b >= a and a >= 0):
        raise argparse.ArgumentTypeError(f"invalid range {text!r}")
    n = int(math.floor((b - a) / h + 1e-9))
    return a + h * np.arange(n + 1)


def _cost_kind(text):
    try:
        return CostKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; keys use flag names."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{n}: expected key = value")
            out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _apply_config(sub: argparse.ArgumentParser, cfg: dict) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, value in cfg.items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r}")
        act = actions[key]
        if isinstance(act, argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            try:
                defaults[key] = act.type(value) if act.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
            if act.choices is not None and defaults[key] not in act.choices:
                raise UsageError(f"config key {key!r}: {value!r} not in {list(act.choices)}")
    sub.set_defaults(**defaults)


def _resolved(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "config"):
            continue
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, CostKind):
            v = str(v)
        out[k] = v
    return out


_OUTPUT_KEYS = ("out", "out_dir", "history")


def _run_config(args) -> dict:
    """Resolved settings minus output locations, so the CSV hash identifies the run."""
    return {k: v for k, v in _resolved(args).items() if k not in _OUTPUT_KEYS}


# ---------------------------------------------------------------------------
# gen-flange


def _model(args) -> FlangeModel:
    m = FlangeModel()
    if args.model_config:
        with open(args.model_config, encoding="utf-8") as fh:
            doc = json.load(fh)
        try:
            m = FlangeModel(**doc)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"bad flange model: {exc}") from None
    return m


def _pose_mm_rad(vals) -> RigidTransform:
    return RigidTransform.from_rpy(vals[3:], np.asarray(vals[:3]) * 1e-3)


def cmd_gen_flange(args) -> int:
    model = _model(args)
    sigma = args.sigma * 1e-3
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    if args.dataset_poses is None:
        pose = _pose_mm_rad(args.pose)
        cloud = generate_flange_cloud(model, pose, sigma, rng)
        io.write_cloud(out, cloud, args.units, comments=[f"seed {args.seed}"])
        meta = {
            "tcp": [float(v) for v in pose.translation],
            "pose": io.pose_to_record(pose),
            "sigma": sigma,
            "seed": args.seed,
            "points": len(cloud),
            "units_in_cloud": args.units,
            "model": dataclasses.asdict(model),
        }
        io._write_json(out.with_suffix(".json"), meta)
        print(f"wrote {len(cloud)} points to {out}")
        return EXIT_OK

    # dataset mode: a directory of clouds plus a manifest with ground truth
    out.mkdir(parents=True, exist_ok=True)
    center = np.asarray(args.workspace_center) * 1e-3
    scenario = SimScenario(workspace_center=tuple(center), n_poses=args.dataset_poses)
    poses = sample_poses(scenario, rng)
    poses = [poses[i] for i in nondegenerate_order(np.array([T.translation for T in poses]), rng)]
    H = H_TRUE
    n = len(poses)
    if args.outliers > n:
        raise UsageError("more outliers than poses")
    bad = set(rng.choice(n, size=args.outliers, replace=False).tolist()) if args.outliers else set()
    records = []
    for i, T in enumerate(poses):
        cloud = generate_flange_cloud(model, compose(invert(H), T), sigma, rng)
        if i in bad:
            d = random_offsets(rng, 1)[0]
            cloud = PointCloud(cloud.points + d, "cam", "false segmentation")
        f = out / f"pair_{i:03d}.ply"
        io.write_cloud(f, cloud, args.units)
        records.append(io.CloudRecord(f, T))
    T_v = RigidTransform.from_rpy((0.1, -0.1, 0.2), center)
    fv = out / "verification.ply"
    io.write_cloud(fv, generate_flange_cloud(model, compose(invert(H), T_v), sigma, rng), args.units)
    manifest = io.DatasetManifest(
        units=args.units,
        pairs=tuple(records),
        verification=io.CloudRecord(fv, T_v),
        flange=model,
        ground_truth=H,
    )
    io.write_manifest(out / "manifest.json", manifest)
    print(f"wrote {n} pair clouds ({len(bad)} displaced: {sorted(bad)}) and manifest to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sim-calib


def cmd_sim_calib(args) -> int:
    sigmas = args.sigma_range * 1e-3
    methods = {"both": ("all", "iterative"), "all": ("all",), "iterative": ("iterative",)}[args.method]
    scenario = SimScenario(
        workspace_center=tuple(np.asarray(args.workspace_center) * 1e-3),
        n_poses=args.poses,
        n_realizations=args.realizations,
        rng_seed=args.seed,
    )
    t0 = time.time()
    res = run_sweep(sigmas, scenario, args.realizations, methods, trace_sigmas=tuple(sigmas), n_jobs=args.jobs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _run_config(args)
    io.write_sweep_csv(out / "sweep.csv", res, args.seed, cfg)
    if "iterative" in methods:
        io.write_convergence_csv(out / "convergence.csv", res, args.seed, cfg)
    for method, st in res.stats.items():
        print(f"{method}: std at sigma={sigmas[-1] * 1e3:g} mm  " + " ".join(f"{v:.3f}" for v in st["std"][-1]))
    print(f"{len(sigmas)} sigma levels x {args.realizations} realizations in {time.time() - t0:.1f} s -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate / verify / compensate


def _scan_box(manifest: io.DatasetManifest, cloud: PointCloud) -> PassThroughBox:
    if manifest.scan_box is not None:
        return manifest.scan_box
    return PassThroughBox(cloud.points.min(axis=0), cloud.points.max(axis=0))


def _cad_cloud(model: FlangeModel, density: float) -> PointCloud:
    return generate_flange_cloud(dataclasses.replace(model, sample_density=density), RigidTransform(), 0.0, 0, "flan")


def _verifier(manifest: io.DatasetManifest, density: float) -> CloudVerifier:
    if manifest.verification is None:
        raise SchemaError("manifest has no verification record")
    P_v = manifest.verification.load(manifest.units)
    return CloudVerifier(manifest.verification.robot_pose, _cad_cloud(manifest.flange, density), P_v)


def _detection_params(model: FlangeModel):
    rp = RansacParams(expected_radius=model.outer_radius)
    cp = ClusterParams(max_extent=disc_extent(model.outer_radius))
    return OutlierParams(), cp, rp


def extract_pairs(manifest: io.DatasetManifest, log=print) -> list[SamplePair]:
    """Flange center of every pair cloud; clouds that fail segmentation are skipped."""
    op, cp, rp = _detection_params(manifest.flange)
    pairs = []
    for rec in manifest.pairs:
        cloud = rec.load(manifest.units)
        try:
            circle = detect_flange(cloud, _scan_box(manifest, cloud), op, cp, rp)
        except FlangeCalError as exc:
            log(f"skip {rec.cloud_file.name}: {exc}")
            continue
        T = rec.robot_pose
        pairs.append(SamplePair(circle.center, T.translation, T, str(rec.cloud_file)))
    return pairs


def _error_row(metric):
    return None if metric.failed else metric.pose_error.as_row()


def _fmt_row(row) -> str:
    if row is None:
        return "inf"
    return " ".join(f"{v:+.3f}" for v in row)


def cmd_calibrate(args) -> int:
    manifest = io.read_manifest(args.manifest)
    pairs = extract_pairs(manifest)
    verifier = _verifier(manifest, args.verify_density)
    cfg = calib.CalibConfig(e_required=args.e_required, k_max=args.k_max, cost_kind=args.cost, rng_seed=args.seed, mode=args.mode)
    outcome = calib.run(pairs, verifier, cfg)
    metric = outcome.e_optimal
    c = cost(metric, cfg.cost_kind)
    extra = {
        "iterations_used": outcome.iterations_used,
        "pairs_available": len(pairs),
        "pool": [p.cloud_ref for p in outcome.pool],
        "config": _resolved(args),
    }
    all_fit = fit_rigid(pairs)
    all_metric = verifier(all_fit.transform)
    extra["all_points"] = {
        "H": io.transform_to_matrix(all_fit.transform),
        "error": io.error_block(_error_row(all_metric)),
    }
    if manifest.ground_truth is not None:
        for key, H in (("H_optimal", outcome.H_optimal), ("H_compensated", outcome.H_compensated), ("all_points", all_fit.transform)):
            if H is not None:
                gt = PoseError.from_transform(compose(invert(H), manifest.ground_truth)).as_row()
                extra.setdefault("vs_ground_truth", {})[key] = io.error_block(gt)
    io.write_results(args.out, outcome.H_optimal, outcome.H_compensated, _error_row(metric), c, extra)
    if args.history:
        io.write_history_csv(args.history, outcome.history, args.seed, _run_config(args))
    print(f"pairs used: 4 + {outcome.iterations_used} of {len(pairs)}; cost {c:.4f} mm")
    results = {"iterative": _error_row(metric), "all-points": _error_row(all_metric)}
    rows = [ReferenceRow(label, r) for label, r in results.items() if r is not None]
    if rows:
        print(format_table(rows, "ICP error on the verification cloud", label_width=12))
    for label in (k for k, r in results.items() if r is None):
        print(f"{label}: registration failed")
    if "vs_ground_truth" in extra:
        for key, blk in extra["vs_ground_truth"].items():
            print(f"{key} vs ground truth: " + " ".join(f"{v:+.3f}" for v in blk.values()))
    return EXIT_NUMERIC if metric.failed else EXIT_OK


def cmd_verify(args) -> int:
    manifest = io.read_manifest(args.manifest)
    H = io.read_transform(args.H)
    metric = _verifier(manifest, args.verify_density)(H)
    row = _error_row(metric)
    c = cost(metric, args.cost)
    if args.out:
        io.write_results(args.out, H, None, row, c, {"reason": metric.reason} if metric.failed else None)
    print(f"error (mm, deg): {_fmt_row(row)}  cost {c:.4f} mm")
    if metric.failed:
        print(f"registration failed: {metric.reason}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _error_transform(path) -> RigidTransform:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and "delta" in doc:
        return io.matrix_to_transform(doc["delta"])
    blk = doc.get("error") if isinstance(doc, dict) and "error" in doc else doc
    if blk is None:
        raise calib.CannotCompensate("error metric is not finite")
    try:
        row = [float(blk[k]) for k in io.ERROR_KEYS]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"error block needs keys {io.ERROR_KEYS}") from None
    return RigidTransform.from_rpy(np.radians(row[3:]), np.asarray(row[:3]) * 1e-3)


def cmd_compensate(args) -> int:
    H = io.read_transform(args.H)
    delta = _error_transform(args.error)
    H_c = compose(H, delta)
    io._write_json(args.out, {"version": io.MANIFEST_VERSION, "H": io.transform_to_matrix(H_c)})
    print(f"wrote compensated transform to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sim-weld


def _seam(args) -> weld_sim.Polyline:
    L = args.length * 1e-3
    if args.seam == "straight":
        return weld_sim.straight_seam(L)
    if args.seam == "arc":
        return weld_sim.arc_seam(args.arc_radius * 1e-3, args.arc_sweep, lead=args.lead * 1e-3)
    return weld_sim.s_curve_seam(L, args.amplitude * 1e-3)


def cmd_sim_weld(args) -> int:
    seam = _seam(args)
    world = weld_sim.make_world(
        seam,
        args.vision_noise * 1e-3,
        spacing=args.planned_spacing * 1e-3,
        seed=args.seed,
        tool_offset=args.tool_offset * 1e-3,
        side=1 if args.side == "left" else -1,
        max_engagement=args.max_engagement * 1e-3,
    )
    params = weld_sim.ServoParams(
        k_p=args.kp,
        delta_d=args.delta_d * 1e-3,
        v_const=args.v_const * 1e-3,
        dt=args.dt,
        max_steps=args.max_steps,
    )
    try:
        trace = weld_sim.run_weld(world, params)
    except NeverEngaged as exc:
        print(f"never engaged: {exc}", file=sys.stderr)
        return EXIT_CONTACT
    if args.out:
        io.write_weld_csv(args.out, trace, args.seed, _run_config(args), every=args.every)
    ok = np.isfinite(trace.delta_n)
    print(f"status: {trace.status} after {len(trace)} steps ({trace.t[-1] if len(trace) else 0:.3f} s)")
    if trace.message:
        print(f"  {trace.message}")
    if len(trace.refined_path):
        print(f"refined path RMS to seam: {weld_sim.path_rms(trace.refined_path, seam) * 1e3:.4f} mm")
    print(f"planned path RMS to seam: {weld_sim.path_rms(world.planned_path, seam) * 1e3:.4f} mm")
    if np.any(ok):
        print(f"max |constraint residual|: {np.nanmax(np.abs(trace.constraint_residual)):.3e} m/s")
    return {"completed": EXIT_OK, "max_steps": EXIT_OK, "singularity": EXIT_NUMERIC, "contact_lost": EXIT_CONTACT}[trace.status]


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flangecal", description="Flange-based hand-eye calibration toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        s = sub.add_parser(name, help=help_, description=help_)
        s.add_argument("--config", help="flat key = value file; flags take precedence")
        s.add_argument("--seed", type=int, default=0)
        s.set_defaults(func=func)
        return s

    g = add("gen-flange", cmd_gen_flange, "write a synthetic flange cloud or a full synthetic dataset")
    g.add_argument("--model-config", help="JSON with flange model fields (meters)")
    g.add_argument("--pose", type=_vec6, default=[0.0, 0.0, 600.0, 0.0, 0.0, 0.0],
                   help="camera-frame flange pose x,y,z (mm), roll,pitch,yaw (rad)")
    g.add_argument("--sigma", type=float, default=0.0, help="sensor noise (mm)")
    g.add_argument("--units", choices=("m", "mm"), default="m", help="unit written to cloud files")
    g.add_argument("--dataset-poses", type=int, help="write N pair clouds plus a manifest into --out (a directory)")
    g.add_argument("--outliers", type=int, default=0, help="displace this many pair clouds by 20-100 mm")
    g.add_argument("--workspace-center", type=_vec3, default=[400.0, -12.5, 400.0], help="base frame (mm)")
    g.add_argument("--out", required=True)

    s = add("sim-calib", cmd_sim_calib, "Monte-Carlo noise sweep of all-points vs iterative calibration")
    s.add_argument("--sigma-range", type=parse_range, default=parse_range("1:1:1"), help="start:step:stop (mm)")
    s.add_argument("--realizations", type=int, default=100)
    s.add_argument("--poses", type=int, default=75)
    s.add_argument("--method", choices=("both", "all", "iterative"), default="both")
    s.add_argument("--workspace-center", type=_vec3, default=[400.0, -12.5, 400.0], help="base frame (mm)")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out-dir", default=".")

    c = add("calibrate", cmd_calibrate, "run the iterative calibration on a dataset manifest")
    c.add_argument("--manifest", required=True)
    c.add_argument("--e-required", type=float, default=0.05, help="stop once the cost (mm) reaches this")
    c.add_argument("--k-max", type=int, default=100)
    c.add_argument("--cost", type=_cost_kind, default=CostKind(), help="translation | xy | combined[:radius_mm]")
    c.add_argument("--mode", choices=("best", "sequential"), default="best")
    c.add_argument("--verify-density", type=float, default=1e6, help="CAD reference density (points/m^2)")
    c.add_argument("--history", help="history CSV path")
    c.add_argument("--out", required=True)

    v = add("verify", cmd_verify, "error metric of a hand-eye matrix against the verification cloud")
    v.add_argument("--H", required=True, help="JSON with a 4x4 matrix")
    v.add_argument("--manifest", "--manifest-verification", dest="manifest", required=True)
    v.add_argument("--cost", type=_cost_kind, default=CostKind())
    v.add_argument("--verify-density", type=float, default=1e6)
    v.add_argument("--out")

    k = add("compensate", cmd_compensate, "right-multiply a hand-eye matrix by its error transform")
    k.add_argument("--H", required=True)
    k.add_argument("--error", required=True, help="results JSON (error block) or JSON with a 4x4 'delta'")
    k.add_argument("--out", required=True)

    w = add("sim-weld", cmd_sim_weld, "planar seam tracking with a soft tactile tip")
    w.add_argument("--seam", choices=("straight", "arc", "s-curve"), default="straight")
    w.add_argument("--length", type=float, default=300.0, help="straight / s-curve length (mm)")
    w.add_argument("--amplitude", type=float, default=20.0, help="s-curve amplitude (mm)")
    w.add_argument("--arc-radius", type=float, default=100.0, help="mm")
    w.add_argument("--arc-sweep", type=float, default=math.pi / 2, help="rad")
    w.add_argument("--lead", type=float, default=50.0, help="straight lead-in/out of the arc (mm)")
    w.add_argument("--vision-noise", type=float, default=1.0, help="planned-path noise per coordinate (mm)")
    w.add_argument("--planned-spacing", type=float, default=10.0, help="mm")
    w.add_argument("--kp", type=float, default=10.0, help="1/s")
    w.add_argument("--delta-d", type=float, default=2.0, help="desired normal deformation (mm)")
    w.add_argument("--v-const", type=float, default=10.0, help="feed speed (mm/s)")
    w.add_argument("--dt", type=float, default=1e-3, help="s")
    w.add_argument("--max-steps", type=int, default=200_000)
    w.add_argument("--tool-offset", type=float, default=50.0, help="tip-to-torch distance (mm)")
    w.add_argument("--max-engagement", type=float, default=10.0, help="mm")
    w.add_argument("--side", choices=("left", "right"), default="left")
    w.add_argument("--every", type=int, default=1, help="write every n-th step")
    w.add_argument("--out")
    return p


def parse_args(argv: Optional[Sequence[str]] = None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(sub, read_config_file(args.config))
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except OSError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print("config: " + json.dumps({"command": args.command, **_resolved(args)}, sort_keys=True))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, ParseError, UnitMismatch, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContactLost as exc:
        print(f"contact lost: {exc}", file=sys.stderr)
        return EXIT_CONTACT
    except FlangeCalError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
