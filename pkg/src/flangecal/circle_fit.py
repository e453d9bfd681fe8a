"""
RANSAC estimation of the flange's outer circle in 3D.

The scene pipeline isolates the flange cluster, keeps its boundary points
(a scanned flange face is a filled disc, and only its rim lies on the outer
circle), and fits the circle whose radius matches the nominal flange radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import (
    ClusterParams,
    OutlierParams,
    PassThroughBox,
    PointCloud,
    euclidean_clusters,
    pass_through,
    remove_statistical_outliers,
)
from .errors import DegenerateSample, InsufficientPoints, NoModelFound, SegmentationFailed

MIN_TRIANGLE_AREA = 1e-12
EARLY_EXIT_FRACTION = 0.9
REFINE_ITERATIONS = 3
_BATCH = 128


@dataclass(frozen=True)
class RansacParams:
    distance_threshold: float = 0.3e-3
    radius_tolerance: float = 1e-3
    expected_radius: float = 0.031
    max_iterations: int = 10_000
    min_inlier_fraction: float = 0.3
    rng_seed: int = 0
    sample_size: int = 3

    def __post_init__(self):
        if self.sample_size != 3:
            raise ValueError("a circle needs exactly three samples")
        if not (self.distance_threshold > 0 and self.radius_tolerance > 0 and self.expected_radius > 0):
            raise ValueError("thresholds and radius must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.min_inlier_fraction <= 1:
            raise ValueError("min_inlier_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class CircleFit:
    center: np.ndarray
    normal: np.ndarray
    radius: float
    inlier_count: int = 0
    rms_residual: float = 0.0


def canonical_normal(n: np.ndarray) -> np.ndarray:
    """Unit normal with positive z; ties broken by positive y, then x."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    for k in (2, 1, 0):
        if abs(n[k]) > 1e-12:
            return n if n[k] > 0 else -n
    return n


def _circles_batch(a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Circumcircles of B triangles; returns centers, normals, radii, ok-mask."""
    v1 = b - a
    v2 = c - a
    cr = np.cross(v1, v2)
    area2 = np.linalg.norm(cr, axis=1)
    ok = 0.5 * area2 > MIN_TRIANGLE_AREA
    v11 = np.einsum("ij,ij->i", v1, v1)
    v12 = np.einsum("ij,ij->i", v1, v2)
    v22 = np.einsum("ij,ij->i", v2, v2)
    denom = 2.0 * (v11 * v22 - v12 ** 2)
    denom = np.where(ok, denom, 1.0)
    l1 = v22 * (v11 - v12) / denom
    l2 = v11 * (v22 - v12) / denom
    offset = l1[:, None] * v1 + l2[:, None] * v2
    centers = a + offset
    radii = np.linalg.norm(offset, axis=1)
    normals = cr / np.where(area2 > 0, area2, 1.0)[:, None]
    return centers, normals, radii, ok


def circle_through_three(p1, p2, p3) -> CircleFit:
    """Circumscribed circle of three points.

    >>> c = circle_through_three([1, 0, 0], [0, 1, 0], [-1, 0, 0])
    >>> c.center.round(12).tolist(), c.radius
    ([0.0, 0.0, 0.0], 1.0)
    """
    a, b, c = (np.asarray(p, dtype=float).reshape(1, 3) for p in (p1, p2, p3))
    centers, normals, radii, ok = _circles_batch(a, b, c)
    if not ok[0]:
        raise DegenerateSample("sample points are collinear")
    return CircleFit(centers[0], canonical_normal(normals[0]), float(radii[0]))


def point_to_circle_distance(points: np.ndarray, center, normal, radius: float) -> np.ndarray:
    """3D distance to a circle: out-of-plane and ring offsets in quadrature."""
    d = np.asarray(points, dtype=float) - center
    h = d @ normal
    rho = np.sqrt(np.maximum(np.einsum("ij,ij->i", d, d) - h * h, 0.0))
    return np.sqrt(h * h + (rho - radius) ** 2)


def _inlier_counts(points, sq_norms, centers, normals, radii, thresh) -> np.ndarray:
    # |p - c|^2 and (p - c).n for all (point, candidate) pairs without an (N, B, 3) temporary
    pc = points @ centers.T
    dd = sq_norms[:, None] - 2.0 * pc + np.einsum("ij,ij->i", centers, centers)[None, :]
    h = points @ normals.T - np.einsum("ij,ij->i", centers, normals)[None, :]
    rho = np.sqrt(np.maximum(dd - h * h, 0.0))
    dist2 = h * h + (rho - radii[None, :]) ** 2
    return np.count_nonzero(dist2 <= thresh * thresh, axis=0)


def _plane_basis(n: np.ndarray):
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def refine_circle(points: np.ndarray, center, normal, radius: float):
    """Least-squares plane, then Gauss-Newton on geometric ring residuals."""
    origin = points.mean(axis=0)
    _, sv, Vt = np.linalg.svd(points - origin, full_matrices=False)
    n = Vt[2] if len(sv) == 3 and sv[1] > 1e-9 else np.asarray(normal, dtype=float)
    if np.dot(n, normal) < 0:
        n = -n
    u, v = _plane_basis(n)
    q = np.column_stack([(points - origin) @ u, (points - origin) @ v])
    c0 = np.asarray(center, dtype=float) - origin
    a, b, r = c0 @ u, c0 @ v, float(radius)
    for _ in range(REFINE_ITERATIONS):
        dx, dy = q[:, 0] - a, q[:, 1] - b
        di = np.hypot(dx, dy)
        di = np.where(di > 0, di, 1e-15)
        res = di - r
        J = np.column_stack([-dx / di, -dy / di, -np.ones_like(di)])
        step, *_ = np.linalg.lstsq(J, -res, rcond=None)
        a, b, r = a + step[0], b + step[1], r + step[2]
    return origin + a * u + b * v, canonical_normal(n), float(r)


def ransac_circle(cloud, params: RansacParams = RansacParams()) -> CircleFit:
    """Best circle by inlier count among candidates that pass the radius check.

    Candidates are drawn in batches from a generator seeded by
    ``params.rng_seed``; within the evaluated sequence the first candidate
    with the highest count wins, and the search stops at the first candidate
    whose inlier fraction exceeds 0.9.

    Raises
    ------
    NoModelFound
        No candidate passes the radius check with enough inliers.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    n = len(pts)
    if n < 3:
        raise InsufficientPoints(f"need at least 3 points, got {n}")
    rng = np.random.default_rng(params.rng_seed)
    sq = np.einsum("ij,ij->i", pts, pts)
    e_d, e_r, R = params.distance_threshold, params.radius_tolerance, params.expected_radius

    best_count = -1
    best = None
    done = 0
    while done < params.max_iterations:
        B = min(_BATCH, params.max_iterations - done)
        done += B
        idx = rng.integers(0, n, size=(B, 3))
        distinct = (idx[:, 0] != idx[:, 1]) & (idx[:, 0] != idx[:, 2]) & (idx[:, 1] != idx[:, 2])
        centers, normals, radii, ok = _circles_batch(pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]])
        valid = ok & distinct & (np.abs(radii - R) <= e_r)
        if not np.any(valid):
            continue
        counts = np.full(B, -1)
        sel = np.flatnonzero(valid)
        counts[sel] = _inlier_counts(pts, sq, centers[sel], normals[sel], radii[sel], e_d)
        exceed = np.flatnonzero(counts > EARLY_EXIT_FRACTION * n)
        stop = len(exceed) > 0
        scan = counts[: exceed[0] + 1] if stop else counts
        j = int(np.argmax(scan))
        if scan[j] > best_count:
            best_count = int(scan[j])
            best = (centers[j], normals[j], float(radii[j]))
        if stop:
            break

    if best is None or best_count < params.min_inlier_fraction * n:
        raise NoModelFound(
            f"no circle with radius {R * 1e3:.1f}+-{e_r * 1e3:.1f} mm and enough inliers "
            f"(best {max(best_count, 0)}/{n})"
        )

    center, normal, radius = best
    normal = canonical_normal(normal)
    inl = point_to_circle_distance(pts, center, normal, radius) <= e_d
    if np.count_nonzero(inl) >= 3:
        c2, n2, r2 = refine_circle(pts[inl], center, normal, radius)
        if abs(r2 - R) <= e_r and np.all(np.isfinite(c2)):
            center, normal, radius = c2, n2, r2
    d = point_to_circle_distance(pts, center, normal, radius)
    inl = d <= e_d
    rms = float(np.sqrt(np.mean(d[inl] ** 2))) if np.any(inl) else math.inf
    return CircleFit(np.asarray(center), np.asarray(normal), float(radius), int(np.count_nonzero(inl)), rms)


def extract_rim(cloud: PointCloud, k: int = 30, min_shift: float = 0.4) -> PointCloud:
    """Boundary points of a roughly planar cluster, projected onto its plane.

    Inside the surface the ``k`` nearest in-plane neighbors surround a point
    evenly; on an edge their centroid is pulled inward. A point is kept when
    that pull exceeds ``min_shift`` times the mean neighbor distance. Averaging
    over many neighbors keeps the test stable when sensor noise approaches
    the sample spacing.
    """
    pts = cloud.points
    if len(pts) <= k:
        return cloud
    origin = pts.mean(axis=0)
    _, _, Vt = np.linalg.svd(pts - origin, full_matrices=False)
    u, v, _ = Vt
    q = np.column_stack([(pts - origin) @ u, (pts - origin) @ v])
    dist, idx = cKDTree(q).query(q, k=k + 1)
    shift = np.linalg.norm(q[idx[:, 1:]].mean(axis=1) - q, axis=1)
    scale = dist[:, 1:].mean(axis=1)
    rim = shift > min_shift * np.maximum(scale, np.finfo(float).tiny)
    projected = origin + q[rim, 0:1] * u + q[rim, 1:2] * v
    return PointCloud(projected, cloud.frame_tag, cloud.source)


def detect_flange(
    scene: PointCloud,
    box: PassThroughBox,
    op: OutlierParams = OutlierParams(),
    cp: ClusterParams = ClusterParams(),
    rp: RansacParams = RansacParams(),
) -> CircleFit:
    """Pass-through, outlier removal, clustering, then RANSAC on each cluster rim."""
    cropped = pass_through(scene, box)
    try:
        cleaned = remove_statistical_outliers(cropped, op)
    except InsufficientPoints as exc:
        raise SegmentationFailed(f"too few points after cropping: {exc}") from exc
    for cluster in euclidean_clusters(cleaned, cp):
        rim = extract_rim(cluster)
        if len(rim) < 3:
            continue
        try:
            return ransac_circle(rim, rp)
        except NoModelFound:
            continue
    raise SegmentationFailed("no cluster yielded a flange circle")


def flange_tcp_from_scene(
    scene: PointCloud,
    box: PassThroughBox,
    op: OutlierParams = OutlierParams(),
    cp: ClusterParams = ClusterParams(),
    rp: RansacParams = RansacParams(),
) -> np.ndarray:
    """Camera-frame TCP (flange center) estimated from a raw scene cloud."""
    return detect_flange(scene, box, op, cp, rp).center
