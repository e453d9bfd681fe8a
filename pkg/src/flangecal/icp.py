"""
Point-to-point ICP and the calibration error metric built on it.

The error of a candidate hand-eye matrix ``H_hat`` (camera-to-base) is the
rigid transform ``delta`` taking the true camera frame to the frame implied
by ``H_hat``. In simulation ``delta = inv(H_hat) @ H_true``; with clouds it is
recovered by registering the measured verification cloud against the cloud
predicted from the CAD flange model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .errors import RegistrationFailed
from .rigid_fit import svd_align
from .se3 import PoseError, RigidTransform, compose, invert


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    correspondence_max_dist: float = 0.010
    convergence_eps: float = 1e-6
    failure_rms: float = 0.005
    # predicted and measured clouds farther apart than this are treated as disjoint
    max_initial_offset: float = 0.1

    def __post_init__(self):
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        for name in ("correspondence_max_dist", "convergence_eps", "failure_rms", "max_initial_offset"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    rms: float
    converged: bool
    iterations: int
    rms_history: tuple = ()


def _points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)


def icp_register(
    source,
    target,
    initial: Optional[RigidTransform] = None,
    params: IcpParams = IcpParams(),
    target_tree: Optional[cKDTree] = None,
) -> IcpResult:
    """Register ``source`` onto ``target``; the result maps source into target.

    Raises
    ------
    RegistrationFailed
        Fewer than three correspondences at some iteration, or a final rms
        above ``params.failure_rms``.
    """
    src = _points(source)
    dst = _points(target)
    if len(src) == 0 or len(dst) == 0:
        raise RegistrationFailed("empty cloud")
    tree = target_tree if target_tree is not None else cKDTree(dst)
    T = initial if initial is not None else RigidTransform.identity()
    R, t = T.rotation.copy(), T.translation.copy()

    history = []
    prev = math.inf
    converged = False
    it = 0
    for it in range(1, params.max_iterations + 1):
        moved = src @ R.T + t
        dist, idx = tree.query(moved, distance_upper_bound=params.correspondence_max_dist)
        ok = np.isfinite(dist)
        if np.count_nonzero(ok) < 3:
            raise RegistrationFailed(f"only {np.count_nonzero(ok)} correspondences at iteration {it}")
        rms = float(np.sqrt(np.mean(dist[ok] ** 2)))
        history.append(rms)
        if rms < params.convergence_eps or abs(prev - rms) < params.convergence_eps:
            converged = True
            break
        prev = rms
        dR, dt, _ = svd_align(moved[ok], dst[idx[ok]])
        R, t = dR @ R, dR @ t + dt

    if rms > params.failure_rms:
        raise RegistrationFailed(f"final rms {rms * 1e3:.3f} mm above failure threshold")
    # re-orthonormalize against drift from repeated products
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    return IcpResult(RigidTransform(R, t), rms, converged, it, tuple(history))


@dataclass(frozen=True)
class IcpErrorMetric:
    delta: Optional[RigidTransform]
    failed: bool = False
    rms: float = 0.0
    reason: str = ""
    pose_error: Optional[PoseError] = field(init=False, default=None)

    def __post_init__(self):
        if not self.failed:
            if self.delta is None:
                raise ValueError("a non-failed metric needs a delta transform")
            object.__setattr__(self, "pose_error", PoseError.from_transform(self.delta))

    @classmethod
    def failure(cls, reason: str = "") -> "IcpErrorMetric":
        return cls(None, failed=True, rms=math.inf, reason=reason)

    @classmethod
    def from_delta(cls, delta: RigidTransform, rms: float = 0.0) -> "IcpErrorMetric":
        return cls(delta, failed=False, rms=rms)


@dataclass(frozen=True)
class CostKind:
    """Scalarization of the error metric, in millimeters.

    ``translation``: ||(dx, dy, dz)||; ``xy``: ||(dx, dy)||;
    ``combined``: ||(dx, dy, dz, droll*r, dpitch*r, dyaw*r)|| with angles in
    radians and ``radius`` r in millimeters.
    """

    name: str = "translation"
    radius: float = 300.0

    def __post_init__(self):
        if self.name not in ("translation", "xy", "combined"):
            raise ValueError(f"unknown cost kind {self.name!r}")

    @classmethod
    def parse(cls, text: str) -> "CostKind":
        """'translation', 'xy' or 'combined[:radius_mm]'."""
        name, _, radius = text.partition(":")
        return cls(name, float(radius)) if radius else cls(name)

    def __str__(self):
        return f"combined:{self.radius:g}" if self.name == "combined" else self.name


TranslationNorm = CostKind("translation")
XyOnly = CostKind("xy")


def CombinedWithRadius(r: float) -> CostKind:
    return CostKind("combined", r)


def cost(metric: IcpErrorMetric, kind: CostKind = TranslationNorm) -> float:
    if metric.failed:
        return math.inf
    dt = metric.pose_error.delta_t
    if kind.name == "translation":
        return float(np.linalg.norm(dt))
    if kind.name == "xy":
        return float(np.linalg.norm(dt[:2]))
    ang = np.radians(metric.pose_error.delta_rpy) * kind.radius
    return float(np.linalg.norm(np.concatenate([dt, ang])))


def simulation_error(H_hat: RigidTransform, H_true: RigidTransform) -> IcpErrorMetric:
    """Shortcut metric available when the true hand-eye matrix is known."""
    return IcpErrorMetric.from_delta(compose(invert(H_hat), H_true))


def calibration_error(
    H_hat: RigidTransform,
    robot_pose_v: RigidTransform,
    P_true_flan: PointCloud,
    P_v_cam: PointCloud,
    params: IcpParams = IcpParams(),
    target_tree: Optional[cKDTree] = None,
) -> IcpErrorMetric:
    """Score ``H_hat`` against a verification cloud.

    The CAD cloud is mapped to the camera frame through the robot pose and
    ``inv(H_hat)``, registered onto the measured cloud (initial guess: the
    centroid difference), and the registration is inverted so that the
    returned delta takes the measured frame to the predicted one. ICP failure,
    or centroids farther apart than ``params.max_initial_offset``, yields a
    failed metric rather than an exception.
    """
    predicted = compose(invert(H_hat), robot_pose_v).apply(P_true_flan.points)
    measured = P_v_cam.points
    if len(predicted) == 0 or len(measured) == 0:
        return IcpErrorMetric.failure("empty cloud")
    offset = measured.mean(axis=0) - predicted.mean(axis=0)
    if np.linalg.norm(offset) > params.max_initial_offset:
        return IcpErrorMetric.failure(f"clouds are {np.linalg.norm(offset) * 1e3:.0f} mm apart")
    init = RigidTransform(np.eye(3), offset)
    try:
        res = icp_register(predicted, measured, init, params, target_tree=target_tree)
    except RegistrationFailed as exc:
        return IcpErrorMetric.failure(str(exc))
    return IcpErrorMetric.from_delta(invert(res.transform), res.rms)


class SimulationVerifier:
    """Error metric from a known ground-truth hand-eye matrix."""

    def __init__(self, H_true: RigidTransform):
        self.H_true = H_true

    def __call__(self, H_hat: RigidTransform) -> IcpErrorMetric:
        return simulation_error(H_hat, self.H_true)


class CloudVerifier:
    """Error metric from a verification pose, CAD flange cloud and measured cloud."""

    def __init__(
        self,
        robot_pose_v: RigidTransform,
        P_true_flan: PointCloud,
        P_v_cam: PointCloud,
        params: IcpParams = IcpParams(),
    ):
        self.robot_pose_v = robot_pose_v
        self.P_true_flan = P_true_flan
        self.P_v_cam = P_v_cam
        self.params = params
        self._tree = cKDTree(P_v_cam.points) if len(P_v_cam) else None

    def __call__(self, H_hat: RigidTransform) -> IcpErrorMetric:
        return calibration_error(
            H_hat, self.robot_pose_v, self.P_true_flan, self.P_v_cam, self.params, self._tree
        )
