"""
ASCII file formats: point clouds (PLY, CSV), dataset manifests, results.

Everything in memory is meters and radians; files may declare millimeters,
and reports use millimeters and degrees.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ParseError, SchemaError, UnitMismatch
from .flange_sim import COMPONENTS, FlangeModel, SweepResult
from .se3 import RigidTransform, quaternion_to_rotation, rotation_from_rpy, rotation_to_quaternion
from .cloud import PassThroughBox, PointCloud

UNIT_SCALE = {"m": 1.0, "mm": 1e-3}
MANIFEST_VERSION = 1
ERROR_KEYS = ("x_mm", "y_mm", "z_mm", "roll_deg", "pitch_deg", "yaw_deg")


def _scale(unit: str) -> float:
    try:
        return UNIT_SCALE[unit]
    except KeyError:
        raise SchemaError(f"unknown unit {unit!r}; expected one of {sorted(UNIT_SCALE)}") from None


def _declared_unit(comment: str) -> Optional[str]:
    # "units mm", "units: mm", "unit=m"
    words = comment.replace(":", " ").replace("=", " ").split()
    if len(words) >= 2 and words[0].lower() in ("unit", "units"):
        return words[1]
    return None


# ---------------------------------------------------------------------------
# clouds


def _read_ply(lines: Sequence[str]):
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)
    elements = []  # [name, count, [properties]]
    unit = None
    i = 1
    while True:
        if i >= len(lines):
            raise ParseError("header has no end_header", i)
        words = lines[i].split()
        i += 1
        if not words:
            continue
        key = words[0]
        if key == "end_header":
            break
        if key == "format":
            if len(words) < 2 or words[1] != "ascii":
                raise ParseError(f"unsupported PLY format {' '.join(words[1:])!r}", i)
        elif key == "comment":
            unit = _declared_unit(" ".join(words[1:])) or unit
        elif key == "element":
            if len(words) != 3:
                raise ParseError("malformed element line", i)
            try:
                count = int(words[2])
            except ValueError:
                raise ParseError(f"bad element count {words[2]!r}", i) from None
            elements.append([words[1], count, []])
        elif key == "property":
            if not elements:
                raise ParseError("property before any element", i)
            if len(words) < 3:
                raise ParseError("malformed property line", i)
            elements[-1][2].append(words[-1] if words[1] != "list" else None)
        elif key != "obj_info":
            raise ParseError(f"unknown header keyword {key!r}", i)

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise ParseError("no vertex element", i)
    props = vertex[2]
    try:
        cols = [props.index(c) for c in "xyz"]
    except ValueError:
        raise ParseError("vertex element lacks x, y, z properties", i) from None

    pts = None
    for name, count, _ in elements:
        if name != "vertex":
            i += count
            continue
        pts = np.empty((count, 3))
        for k in range(count):
            if i >= len(lines):
                raise ParseError(f"expected {count} vertices, file ended after {k}", i)
            vals = lines[i].split()
            i += 1
            if len(vals) < len(props):
                raise ParseError(f"expected {len(props)} values, got {len(vals)}", i)
            try:
                pts[k] = [float(vals[c]) for c in cols]
            except ValueError:
                raise ParseError("non-numeric vertex value", i) from None
        break
    return pts, unit


def _read_csv(lines: Sequence[str]):
    unit = None
    i = 0
    while i < len(lines) and (not lines[i].strip() or lines[i].lstrip().startswith("#")):
        unit = _declared_unit(lines[i].lstrip().lstrip("#").strip()) or unit
        i += 1
    if i >= len(lines):
        raise ParseError("missing header row", i)
    header = [h.strip() for h in lines[i].split(",")]
    i += 1
    try:
        cols = [header.index(c) for c in "xyz"]
    except ValueError:
        raise ParseError(f"header must contain x,y,z, got {lines[i - 1].strip()!r}", i) from None
    rows = []
    for j, row in enumerate(csv.reader(lines[i:]), start=i + 1):
        if not row or row[0].lstrip().startswith("#"):
            continue
        if len(row) < len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", j)
        try:
            rows.append([float(row[c]) for c in cols])
        except ValueError:
            raise ParseError("non-numeric value", j) from None
    return np.array(rows, dtype=float).reshape(-1, 3), unit


def read_cloud(path, unit: str = "m", frame_tag: str = "cam") -> PointCloud:
    """Load an ASCII PLY or ``x,y,z`` CSV cloud and convert ``unit`` to meters.

    A unit declared inside the file (``comment units mm`` in PLY, ``# units: mm``
    in CSV) must agree with ``unit``.

    Raises
    ------
    ParseError
        Malformed file; carries the 1-based line number.
    UnitMismatch
        The file declares a different unit.
    """
    path = Path(path)
    with open(path, encoding="ascii", newline="") as fh:
        lines = fh.read().splitlines()
    if path.suffix.lower() == ".ply":
        pts, declared = _read_ply(lines)
    elif path.suffix.lower() == ".csv":
        pts, declared = _read_csv(lines)
    else:
        raise ParseError(f"unsupported cloud extension {path.suffix!r}", 0)
    if declared is not None and declared != unit:
        raise UnitMismatch(f"{path.name} declares {declared!r}, expected {unit!r}")
    try:
        return PointCloud(pts * _scale(unit), frame_tag, source=str(path))
    except ValueError as exc:
        raise ParseError(str(exc), 0) from None


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def write_cloud(path, cloud: PointCloud, unit: str = "m", comments: Iterable[str] = ()) -> None:
    """Write ASCII PLY or CSV (by extension) with 9 significant digits."""
    path = Path(path)
    pts = np.asarray(cloud.points if isinstance(cloud, PointCloud) else cloud) / _scale(unit)
    body = "".join(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n" for x, y, z in pts)
    if path.suffix.lower() == ".ply":
        head = ["ply", "format ascii 1.0", f"comment units {unit}"]
        head += [f"comment {c}" for c in comments]
        head += [f"element vertex {len(pts)}", "property double x", "property double y", "property double z", "end_header"]
        text = "\n".join(head) + "\n" + body
    elif path.suffix.lower() == ".csv":
        head = [f"# units: {unit}"] + [f"# {c}" for c in comments] + ["x,y,z"]
        text = "\n".join(head) + "\n" + body.replace(" ", ",")
    else:
        raise ValueError(f"unsupported cloud extension {path.suffix!r}")
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# poses and manifests


def pose_from_record(rec: dict, scale: float = 1.0) -> RigidTransform:
    """``{"translation": [..], "quaternion": [w, x, y, z]}`` or ``{"translation", "rpy"}``."""
    if not isinstance(rec, dict) or "translation" not in rec:
        raise SchemaError("pose record needs a translation")
    has_q, has_rpy = "quaternion" in rec, "rpy" in rec
    if has_q == has_rpy:
        raise SchemaError("pose record needs exactly one of quaternion or rpy")
    t = np.asarray(rec["translation"], dtype=float)
    if t.shape != (3,):
        raise SchemaError("translation must have 3 components")
    if has_q:
        q = np.asarray(rec["quaternion"], dtype=float)
        if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise SchemaError("quaternion must be 4 components with unit norm (1e-6)")
        R = quaternion_to_rotation(q)
    else:
        rpy = np.asarray(rec["rpy"], dtype=float)
        if rpy.shape != (3,):
            raise SchemaError("rpy must have 3 components")
        R = rotation_from_rpy(rpy)
    return RigidTransform(R, t * scale)


def pose_to_record(T: RigidTransform, scale: float = 1.0) -> dict:
    return {
        "translation": [float(v) for v in T.translation / scale],
        "quaternion": [float(v) for v in rotation_to_quaternion(T.rotation)],
    }


@dataclass(frozen=True)
class CloudRecord:
    cloud_file: Path
    robot_pose: RigidTransform

    def load(self, unit: str) -> PointCloud:
        return read_cloud(self.cloud_file, unit)


@dataclass(frozen=True)
class DatasetManifest:
    units: str
    pairs: tuple
    verification: Optional[CloudRecord]
    flange: FlangeModel
    scan_box: Optional[PassThroughBox] = None
    ground_truth: Optional[RigidTransform] = None
    version: int = MANIFEST_VERSION
    root: Path = field(default=Path("."))


_LENGTH_KEYS = ("outer_radius", "bolt_circle_radius", "hole_radius", "annulus_inner_radius")


def _record(obj, root: Path, scale: float, what: str) -> CloudRecord:
    if not isinstance(obj, dict) or "cloud_file" not in obj or "robot_pose" not in obj:
        raise SchemaError(f"{what} needs cloud_file and robot_pose")
    p = root / obj["cloud_file"]
    if not p.is_file():
        raise SchemaError(f"{what}: cloud file {p} does not exist")
    return CloudRecord(p, pose_from_record(obj["robot_pose"], scale))


def read_manifest(path) -> DatasetManifest:
    """Load a version-1 dataset manifest; lengths are converted to meters.

    Raises
    ------
    SchemaError
        Wrong version, missing keys, bad poses or missing cloud files.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path.name}: invalid JSON at line {exc.lineno}") from None
    if not isinstance(doc, dict):
        raise SchemaError("manifest must be a JSON object")
    if doc.get("version") != MANIFEST_VERSION:
        raise SchemaError(f"unsupported manifest version {doc.get('version')!r}")
    units = doc.get("units")
    if units is None:
        raise SchemaError("manifest must declare units")
    scale = _scale(units)
    root = path.parent
    pairs = doc.get("pairs")
    if not isinstance(pairs, list):
        raise SchemaError("pairs must be a list")
    recs = tuple(_record(p, root, scale, f"pairs[{i}]") for i, p in enumerate(pairs))
    ver = doc.get("verification")
    ver_rec = _record(ver, root, scale, "verification") if ver is not None else None

    fl = dict(doc.get("flange", {}))
    known = {f.name for f in fields(FlangeModel)}
    unknown = set(fl) - known
    if unknown:
        raise SchemaError(f"unknown flange keys {sorted(unknown)}")
    for k in _LENGTH_KEYS:
        if k in fl:
            fl[k] = float(fl[k]) * scale
    if "sample_density" in fl:
        fl["sample_density"] = float(fl["sample_density"]) / scale ** 2
    try:
        flange = FlangeModel(**fl)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad flange parameters: {exc}") from None

    box = None
    if "scan_box" in doc:
        b = doc["scan_box"]
        try:
            box = PassThroughBox(np.asarray(b["min"], float) * scale, np.asarray(b["max"], float) * scale)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad scan_box: {exc}") from None
    gt = None
    if "ground_truth" in doc:
        gt = matrix_to_transform(doc["ground_truth"]["H"], scale)
    return DatasetManifest(units, recs, ver_rec, flange, box, gt, MANIFEST_VERSION, root)


def write_manifest(path, manifest: DatasetManifest) -> None:
    path = Path(path)
    scale = _scale(manifest.units)

    def rec(r: CloudRecord):
        return {
            "cloud_file": os.path.relpath(r.cloud_file, path.parent),
            "robot_pose": pose_to_record(r.robot_pose, scale),
        }

    fl = asdict(manifest.flange)
    for k in _LENGTH_KEYS:
        fl[k] = fl[k] / scale
    fl["sample_density"] = fl["sample_density"] * scale ** 2
    doc = {"version": MANIFEST_VERSION, "units": manifest.units, "flange": fl}
    doc["pairs"] = [rec(r) for r in manifest.pairs]
    if manifest.verification is not None:
        doc["verification"] = rec(manifest.verification)
    if manifest.scan_box is not None:
        doc["scan_box"] = {
            "min": [float(v) for v in manifest.scan_box.min / scale],
            "max": [float(v) for v in manifest.scan_box.max / scale],
        }
    if manifest.ground_truth is not None:
        doc["ground_truth"] = {"H": transform_to_matrix(manifest.ground_truth, scale)}
    _write_json(path, doc)


# ---------------------------------------------------------------------------
# results


def transform_to_matrix(T: RigidTransform, scale: float = 1.0) -> list:
    M = T.as_matrix()
    M[:3, 3] /= scale
    return [[float(v) for v in row] for row in M]


def matrix_to_transform(rows, scale: float = 1.0) -> RigidTransform:
    M = np.asarray(rows, dtype=float)
    if M.shape != (4, 4):
        raise SchemaError("transform must be a 4x4 matrix")
    M[:3, 3] *= scale
    try:
        return RigidTransform.from_matrix(M)
    except ValueError as exc:
        raise SchemaError(f"not a rigid transform: {exc}") from None


def error_block(row: Optional[Sequence[float]]) -> Optional[dict]:
    """(x, y, z, roll, pitch, yaw) in mm/deg as a keyed block."""
    if row is None:
        return None
    return {k: float(v) for k, v in zip(ERROR_KEYS, row)}


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _finite_or_none(v):
    return float(v) if v is not None and math.isfinite(v) else None


def write_results(
    path,
    H_optimal: Optional[RigidTransform],
    H_compensated: Optional[RigidTransform],
    error_row: Optional[Sequence[float]],
    cost: float,
    extra: Optional[dict] = None,
) -> None:
    """Results JSON: 4x4 row-major matrices (meters) and the error block.

    A non-finite cost is written as ``null`` with ``failed: true``.
    """
    doc = {
        "version": MANIFEST_VERSION,
        "H_optimal": transform_to_matrix(H_optimal) if H_optimal is not None else None,
        "H_compensated": transform_to_matrix(H_compensated) if H_compensated is not None else None,
        "error": error_block(error_row),
        "cost_mm": _finite_or_none(cost),
        "failed": error_row is None or not math.isfinite(cost),
    }
    if extra:
        doc.update(extra)
    _write_json(path, doc)


def read_results(path) -> dict:
    """Inverse of :func:`write_results`; matrices come back as transforms."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != MANIFEST_VERSION:
        raise SchemaError(f"unsupported results version {doc.get('version')!r}")
    for key in ("H_optimal", "H_compensated"):
        if doc.get(key) is not None:
            doc[key] = matrix_to_transform(doc[key])
    return doc


def read_transform(path) -> RigidTransform:
    """A 4x4 transform from a JSON file: a bare matrix, or ``H`` / ``H_optimal`` key."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        for key in ("H", "H_compensated", "H_optimal"):
            if doc.get(key) is not None:
                return matrix_to_transform(doc[key])
        raise SchemaError("no transform found (expected H, H_optimal or H_compensated)")
    return matrix_to_transform(doc)


# ---------------------------------------------------------------------------
# CSV outputs


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], seed, config: dict) -> None:
    """CSV with a leading ``# seed=..., config=<hash>`` comment and a header row."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(f"# seed={seed}, config={config_hash(config)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv_table(path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a CSV written by :func:`write_csv` (comments skipped)."""
    with open(path, encoding="ascii", newline="") as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


HISTORY_HEADER = ("iteration", "accepted", "slot", "cost") + COMPONENTS


def write_history_csv(path, history, seed, config) -> None:
    rows = []
    for h in history:
        err = h.pose_error.as_row() if h.pose_error is not None else [math.nan] * 6
        rows.append([h.iteration, int(h.accepted), "" if h.slot is None else h.slot, float(h.cost)] + err)
    write_csv(path, HISTORY_HEADER, rows, seed, config)


SWEEP_HEADER = ("sigma_mm", "method", "stat") + COMPONENTS


def write_sweep_csv(path, result: SweepResult, seed, config) -> None:
    rows = []
    for i, s in enumerate(result.sigmas):
        for method, st in result.stats.items():
            for stat in ("mean", "std"):
                rows.append([float(s * 1e3), method, stat] + [float(v) for v in st[stat][i]])
    write_csv(path, SWEEP_HEADER, rows, seed, config)


CONVERGENCE_HEADER = ("sigma_mm", "sampled_pairs", "stat") + COMPONENTS


def write_convergence_csv(path, result: SweepResult, seed, config) -> None:
    """Per-iteration statistics of the iterative method; ``sampled_pairs`` counts the initial four."""
    rows = []
    for i, tr in sorted(result.traces.items()):
        s = float(result.sigmas[i] * 1e3)
        for k in range(tr["mean"].shape[0]):
            for stat in ("mean", "std"):
                rows.append([s, k + 4, stat] + [float(v) for v in tr[stat][k]])
    write_csv(path, CONVERGENCE_HEADER, rows, seed, config)


WELD_HEADER = (
    "t", "P_r_x", "P_r_y", "P_s_x", "P_s_y", "P_t_x", "P_t_y", "delta_t_s", "delta_n_s", "omega",
)


def write_weld_csv(path, trace, seed, config, every: int = 1) -> None:
    idx = range(0, len(trace), max(1, every))
    rows = (
        [trace.t[k], *trace.P_r[k], *trace.P_s[k], *trace.P_t[k], trace.delta_t[k], trace.delta_n[k], trace.omega[k]]
        for k in idx
    )
    write_csv(path, WELD_HEADER, rows, seed, config)
