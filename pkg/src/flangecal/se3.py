"""
Rigid-body transforms in SE(3).

Rotations are stored as 3x3 matrices, translations in meters. Roll-pitch-yaw
uses the fixed-axis XYZ convention, R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
Millimeters and degrees appear only in :class:`PoseError`, the reporting type.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9
GIMBAL_TOL = 1e-6


def _wrap(angle: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.remainder(angle, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, H) -> "RigidTransform":
        H = np.asarray(H, dtype=float)
        if H.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {H.shape}")
        if not np.allclose(H[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("last row of a homogeneous matrix must be (0, 0, 0, 1)")
        return cls(H[:3, :3], H[:3, 3])

    @classmethod
    def from_rpy(cls, rpy, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotation_from_rpy(rpy), translation)

    def as_matrix(self) -> np.ndarray:
        H = np.eye(4)
        H[:3, :3] = self.rotation
        H[:3, 3] = self.translation
        return H

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def inverse(self) -> "RigidTransform":
        return invert(self)

    def apply(self, points) -> np.ndarray:
        """Transform a single point (3,) or an array of points (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        rpy = rpy_from_rotation(self.rotation)
        return (
            f"RigidTransform(t={np.round(self.translation, 6).tolist()}, "
            f"rpy={[round(a, 6) for a in rpy.as_tuple()]})"
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Homogeneous product a @ b."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    Rt = t.rotation.T
    return RigidTransform(Rt, -Rt @ t.translation)


def transform_point(t: RigidTransform, p) -> np.ndarray:
    return t.rotation @ np.asarray(p, dtype=float).reshape(3) + t.translation


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RpyAngles:
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    gimbal_lock: bool = False

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.roll, self.pitch, self.yaw)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple())


def rotation_from_rpy(rpy) -> np.ndarray:
    if isinstance(rpy, RpyAngles):
        roll, pitch, yaw = rpy.as_tuple()
    else:
        roll, pitch, yaw = (float(a) for a in rpy)
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def rpy_from_rotation(m) -> RpyAngles:
    """Inverse of :func:`rotation_from_rpy`.

    Near pitch = +-pi/2 only roll + yaw (or their difference) is observable;
    the split is then fixed by setting roll to zero and ``gimbal_lock`` is set.
    """
    R = np.asarray(m, dtype=float)
    sp = float(np.clip(-R[2, 0], -1.0, 1.0))
    pitch = math.atan2(sp, math.hypot(R[0, 0], R[1, 0]))
    if abs(abs(pitch) - math.pi / 2.0) < GIMBAL_TOL:
        # R[0,1] = sin(p)sin(r)cos(y) - cos(r)sin(y); with r = 0 -> -sin(y)
        yaw = math.atan2(-R[0, 1], R[1, 1])
        return RpyAngles(0.0, _wrap(pitch), _wrap(yaw), gimbal_lock=True)
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return RpyAngles(_wrap(roll), _wrap(pitch), _wrap(yaw))


@dataclass(frozen=True)
class PoseError:
    """Error transform in reporting units: millimeters and degrees."""

    delta_t: np.ndarray
    delta_rpy: np.ndarray

    @classmethod
    def from_transform(cls, t: RigidTransform) -> "PoseError":
        rpy = rpy_from_rotation(t.rotation)
        return cls(t.translation * 1e3, np.degrees(rpy.as_array()))

    def as_row(self) -> list[float]:
        """(x, y, z, roll, pitch, yaw) in mm and degrees."""
        return [float(v) for v in np.concatenate([self.delta_t, self.delta_rpy])]


def pose_error(t: RigidTransform) -> PoseError:
    return PoseError.from_transform(t)


def quaternion_to_rotation(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = (float(v) for v in q)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(R) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def random_transform(rng: np.random.Generator, max_translation: float = 1.0) -> RigidTransform:
    """Uniformly random rotation (via a normalized Gaussian quaternion) and box translation."""
    q = rng.normal(size=4)
    return RigidTransform(
        quaternion_to_rotation(q / np.linalg.norm(q)),
        rng.uniform(-max_translation, max_translation, size=3),
    )


# Camera-to-base ground truth of the simulation study: rpy (pi, 0, -pi/2), t = (0.6, -0.0125, 1).
H_TRUE = RigidTransform(
    np.array([[0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]]),
    np.array([0.6, -0.0125, 1.0]),
)
