"""Closed-form least-squares hand-eye estimation from paired TCP points."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateConfiguration
from .se3 import RigidTransform

COPLANAR_TOL = 1e-9


@dataclass(frozen=True)
class SamplePair:
    """One observation: TCP seen by the scanner and reported by the controller.

    ``p_base`` is the flange center, i.e. the translation of ``robot_pose``.
    When no pose is given one is synthesized from ``p_base`` with identity
    rotation.
    """

    p_cam: np.ndarray
    p_base: np.ndarray
    robot_pose: Optional[RigidTransform] = None
    cloud_ref: Optional[str] = None

    def __post_init__(self):
        p_cam = np.asarray(self.p_cam, dtype=float).reshape(3)
        p_base = np.asarray(self.p_base, dtype=float).reshape(3)
        pose = self.robot_pose
        if pose is None:
            pose = RigidTransform(np.eye(3), p_base)
        elif not np.allclose(pose.translation, p_base, atol=1e-12, rtol=0.0):
            raise ValueError("p_base must equal the robot pose translation")
        object.__setattr__(self, "p_cam", p_cam)
        object.__setattr__(self, "p_base", p_base)
        object.__setattr__(self, "robot_pose", pose)


@dataclass(frozen=True)
class FitResult:
    transform: RigidTransform
    scale: float
    residual_rms: float


def svd_align(src: np.ndarray, dst: np.ndarray, with_scale: bool = False):
    """Return (R, t, c) minimizing mean ||c R src_i + t - dst_i||^2.

    No rank check: planar input is accepted (ICP on a flat flange needs it).
    The reflection guard flips the last singular direction when
    det(U) det(V) < 0, which equals the sign test on det(cov) whenever the
    covariance is non-singular and stays correct when it is rank deficient.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    n = src.shape[0]
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    xs = src - mu_src
    ys = dst - mu_dst
    cov = ys.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[-1] = -1.0
    R = (U * S) @ Vt
    if with_scale:
        var_src = np.sum(xs * xs) / n
        c = float(np.dot(D, S) / var_src)
    else:
        c = 1.0
    t = mu_dst - c * R @ mu_src
    return R, t, c


def _stack(pairs: Sequence[SamplePair]):
    cam = np.array([p.p_cam for p in pairs], dtype=float).reshape(-1, 3)
    base = np.array([p.p_base for p in pairs], dtype=float).reshape(-1, 3)
    return cam, base


def check_configuration(base: np.ndarray) -> None:
    if base.shape[0] < 4:
        raise DegenerateConfiguration(f"need at least 4 pairs, got {base.shape[0]}")
    sv = np.linalg.svd(base - base.mean(axis=0), compute_uv=False)
    if sv[-1] <= COPLANAR_TOL:
        raise DegenerateConfiguration(
            f"base points are coplanar (smallest singular value {sv[-1]:.3g})"
        )


def fit_points(cam: np.ndarray, base: np.ndarray, with_scale: bool = False) -> FitResult:
    """Array form of :func:`fit_rigid`."""
    cam = np.asarray(cam, dtype=float)
    base = np.asarray(base, dtype=float)
    check_configuration(base)
    R, t, c = svd_align(cam, base, with_scale)
    res = c * cam @ R.T + t - base
    rms = float(np.sqrt(np.mean(np.sum(res * res, axis=1))))
    return FitResult(RigidTransform(R, t), c, rms)


def fit_rigid(pairs: Sequence[SamplePair], with_scale: bool = False) -> FitResult:
    """Estimate the camera-to-base transform from TCP pairs.

    Parameters
    ----------
    pairs : sequence of SamplePair
        At least four pairs whose base points are not coplanar.
    with_scale : bool
        Also estimate the similarity scale ``c``. Off by default since the
        hand-eye transform is rigid; then ``c`` is exactly 1.

    Raises
    ------
    DegenerateConfiguration
        Fewer than four pairs, or coplanar base points.
    """
    cam, base = _stack(pairs)
    return fit_points(cam, base, with_scale)


def residual_rms(pairs: Sequence[SamplePair], fit: FitResult) -> float:
    cam, base = _stack(pairs)
    T = fit.transform
    res = fit.scale * cam @ T.rotation.T + T.translation - base
    return float(np.sqrt(np.mean(np.sum(res * res, axis=1))))
