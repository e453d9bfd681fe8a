"""Point-cloud container and the scene preprocessing filters."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import InsufficientPoints


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    frame_tag: str = ""
    source: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def subset(self, mask_or_index, source: str | None = None) -> "PointCloud":
        return PointCloud(
            self.points[mask_or_index], self.frame_tag, self.source if source is None else source
        )

    def transformed(self, T, frame_tag: str | None = None) -> "PointCloud":
        return PointCloud(T.apply(self.points), self.frame_tag if frame_tag is None else frame_tag, self.source)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class PassThroughBox:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3)
        hi = np.asarray(self.max, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise ValueError("box min must not exceed max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)


@dataclass(frozen=True)
class OutlierParams:
    k_neighbors: int = 20
    std_multiplier: float = 2.0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not self.std_multiplier > 0:
            raise ValueError("std_multiplier must be positive")


def disc_extent(radius: float, margin: float = 1.1) -> float:
    """Cluster-size limit for a disc: its diameter plus a margin."""
    return 2.0 * radius * margin


# 31 mm outer flange radius -> 68.2 mm
DEFAULT_MAX_EXTENT = disc_extent(0.031)


@dataclass(frozen=True)
class ClusterParams:
    cluster_tolerance: float = 0.002
    min_points: int = 50
    max_extent: float = DEFAULT_MAX_EXTENT

    def __post_init__(self):
        if not self.cluster_tolerance > 0:
            raise ValueError("cluster_tolerance must be positive")
        if not self.max_extent > 0:
            raise ValueError("max_extent must be positive")


def pass_through(cloud: PointCloud, box: PassThroughBox) -> PointCloud:
    """Keep the points inside the closed box, in input order."""
    p = cloud.points
    mask = np.all((p >= box.min) & (p <= box.max), axis=1)
    return cloud.subset(mask)


def mean_knn_distances(points: np.ndarray, k: int) -> np.ndarray:
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=k + 1)
    # column 0 is the point itself
    return dist[:, 1:].mean(axis=1)


def remove_statistical_outliers(cloud: PointCloud, p: OutlierParams = OutlierParams()) -> PointCloud:
    """Drop points whose mean k-NN distance exceeds mean + mult * std over the cloud."""
    n = len(cloud)
    if n == 0:
        return cloud
    if n < p.k_neighbors + 1:
        raise InsufficientPoints(f"need at least {p.k_neighbors + 1} points, got {n}")
    d = mean_knn_distances(cloud.points, p.k_neighbors)
    thresh = d.mean() + p.std_multiplier * d.std()
    return cloud.subset(d <= thresh)


def bbox_diagonal(points: np.ndarray) -> float:
    if len(points) == 0:
        return 0.0
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


def cluster_diameter(points: np.ndarray) -> float:
    """Largest pairwise distance, searched over convex-hull vertices."""
    n = len(points)
    if n < 2:
        return 0.0
    cand = points
    if n > 8:
        try:
            cand = points[ConvexHull(points, qhull_options="QJ").vertices]
        except QhullError:
            pass
    best = 0.0
    for i in range(0, len(cand), 256):
        d = np.linalg.norm(cand[i:i + 256, None, :] - cand[None, :, :], axis=2)
        best = max(best, float(d.max()))
    return best


def _too_wide(points: np.ndarray, limit: float) -> bool:
    lo, hi = points.min(axis=0), points.max(axis=0)
    if np.linalg.norm(hi - lo) <= limit:
        return False
    if np.max(hi - lo) > limit:
        return True
    return cluster_diameter(points) > limit


def euclidean_clusters(cloud: PointCloud, p: ClusterParams = ClusterParams()) -> list[PointCloud]:
    """Connected components under the within-tolerance relation.

    Components smaller than ``min_points`` or with a diameter (largest
    pairwise distance) above ``max_extent`` are dropped. Result is ordered largest first, ties by
    lowest member index; each cluster keeps input order.
    """
    n = len(cloud)
    if n == 0:
        return []
    pairs = cKDTree(cloud.points).query_pairs(p.cluster_tolerance, output_type="ndarray")
    graph = coo_matrix(
        (np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    )
    ncomp, labels = connected_components(graph, directed=False)
    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    members = np.split(order, splits)

    kept = []
    for idx in members:
        if len(idx) < p.min_points:
            continue
        if _too_wide(cloud.points[idx], p.max_extent):
            continue
        kept.append(idx)
    kept.sort(key=lambda idx: (-len(idx), idx[0]))
    return [cloud.subset(idx) for idx in kept]
