"""
Planar welding-seam tracking with a soft tactile tip.

The robot end effector at ``P_r`` carries the soft tip (unloaded at ``P_r``)
and a torch rigidly offset by ``d = |d| t_d`` behind it, ``P_t = P_r - d``.
Contact is ideal kinematic projection: the tip rests at the closest point
``P_s`` of the seam wall and the sensed deformation is ``delta = P_r - P_s``.
The deformation servo feeds along the vision-planned path and regulates the
normal deformation; the recorded tip positions form the refined path the
torch is constrained to follow.

Sign convention: ``omega`` is the angular velocity in the torch-velocity
relation ``V_t = V_r + omega |d| n_d``. With ``P_t = P_r - |d| t_d`` that
relation holds for ``d(alpha)/dt = -omega``, which is what the integrator uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContactLost, KinematicSingularity, NeverEngaged


def left_normal(t: np.ndarray) -> np.ndarray:
    return np.array([-t[1], t[0]])


class Polyline:
    """2D polyline with arclength and closest-point queries."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            raise ValueError("a polyline needs at least two points")
        self.points = pts
        seg = np.diff(pts, axis=0)
        self._seg = seg
        self._seg_len = np.linalg.norm(seg, axis=1)
        if np.any(self._seg_len == 0):
            raise ValueError("polyline has repeated consecutive points")
        self.cumlen = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    @property
    def length(self) -> float:
        return float(self.cumlen[-1])

    def closest(self, p):
        """(closest point, tangent there, arclength, segment index, raw parameter)."""
        p = np.asarray(p, dtype=float)
        a = self.points[:-1]
        u = np.einsum("ij,ij->i", p - a, self._seg) / self._seg_len ** 2
        uc = np.clip(u, 0.0, 1.0)
        q = a + uc[:, None] * self._seg
        d2 = np.sum((q - p) ** 2, axis=1)
        i = int(np.argmin(d2))
        t = self._seg[i] / self._seg_len[i]
        return q[i], t, float(self.cumlen[i] + uc[i] * self._seg_len[i]), i, float(u[i])

    def distance(self, pts) -> np.ndarray:
        return np.array([np.linalg.norm(self.closest(p)[0] - p) for p in np.atleast_2d(pts)])

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = min(int(np.searchsorted(self.cumlen, s, side="right")) - 1, len(self._seg) - 1)
        return self.points[i] + (s - self.cumlen[i]) / self._seg_len[i] * self._seg[i]

    def resample(self, spacing: float) -> np.ndarray:
        n = max(int(math.ceil(self.length / spacing)), 1)
        return np.array([self.point_at(s) for s in np.linspace(0.0, self.length, n + 1)])


def straight_seam(length: float = 0.3) -> Polyline:
    return Polyline([[0.0, 0.0], [length, 0.0]])


def arc_seam(
    radius: float = 0.1, sweep: float = math.pi / 2, step: float = 0.001, lead: float = 0.0
) -> Polyline:
    """Counter-clockwise arc heading along +x at the origin, with optional straight lead-in/out."""
    n = max(int(math.ceil(radius * sweep / step)), 2)
    th = np.linspace(0.0, sweep, n + 1)
    pts = [np.column_stack([radius * np.sin(th), radius * (1 - np.cos(th))])]
    if lead > 0:
        m = max(int(math.ceil(lead / step)), 1)
        s = np.linspace(0.0, lead, m + 1)[1:]
        end_dir = np.array([math.cos(sweep), math.sin(sweep)])
        pts.insert(0, np.column_stack([-s[::-1], np.zeros(m)]))
        pts.append(pts[-1][-1] + s[:, None] * end_dir)
    return Polyline(np.vstack(pts))


def s_curve_seam(length: float = 0.3, amplitude: float = 0.02, step: float = 0.001) -> Polyline:
    x = np.arange(0.0, length + step / 2, step)
    return Polyline(np.column_stack([x, amplitude * np.sin(2 * math.pi * x / length)]))


@dataclass(frozen=True)
class ToolState2D:
    P_r: np.ndarray
    alpha: float

    @property
    def t_d(self) -> np.ndarray:
        return np.array([math.cos(self.alpha), math.sin(self.alpha)])

    @property
    def n_d(self) -> np.ndarray:
        return np.array([-math.sin(self.alpha), math.cos(self.alpha)])

    def torch(self, d_norm: float) -> np.ndarray:
        return np.asarray(self.P_r) - d_norm * self.t_d


@dataclass
class SeamWorld:
    true_seam: Polyline
    planned_path: np.ndarray
    tool_offset: float = 0.05
    # +1: the tool works on the left of the seam direction, -1: on the right
    side: int = 1
    max_engagement: float = 0.010
    frame_window: int = 2
    _frames: Optional[list] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.planned_path = np.asarray(self.planned_path, dtype=float).reshape(-1, 2)
        if len(self.planned_path) == 0:
            raise ValueError("planned path is empty")
        if not self.tool_offset > 0:
            raise ValueError("tool offset must be positive")
        if self.side not in (1, -1):
            raise ValueError("side must be +1 or -1")

    def planned_frame(self, i: int):
        """Unit tangent/normal at planned vertex i from a line fit over nearby vertices."""
        if self._frames is None:
            self._frames = [self._fit_frame(j) for j in range(len(self.planned_path))]
        return self._frames[i]

    def _fit_frame(self, i: int):
        P = self.planned_path
        if len(P) < 2:
            raise ValueError("planned path needs at least two points for a frame")
        lo, hi = max(0, i - self.frame_window), min(len(P), i + self.frame_window + 1)
        win = P[lo:hi]
        c = win - win.mean(axis=0)
        _, _, Vt = np.linalg.svd(c)
        t = Vt[0]
        if np.dot(t, win[-1] - win[0]) < 0:
            t = -t
        return t, left_normal(t)

    def nearest_planned(self, p) -> int:
        q = self.planned_path - p
        return int(np.argmin(np.einsum("ij,ij->i", q, q)))


def make_world(
    seam: Polyline,
    vision_noise: float = 0.001,
    spacing: float = 0.010,
    seed=0,
    offset=(0.0, 0.0),
    **kwargs,
) -> SeamWorld:
    """World whose planned path is the seam resampled plus i.i.d. Gaussian noise."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    planned = seam.resample(spacing) + np.asarray(offset, dtype=float)
    if vision_noise > 0:
        planned = planned + rng.normal(0.0, vision_noise, size=planned.shape)
    return SeamWorld(seam, planned, **kwargs)


@dataclass(frozen=True)
class ServoParams:
    k_p: float = 10.0
    delta_d: float = 0.002
    v_const: float = 0.010
    dt: float = 1e-3
    max_steps: int = 200_000
    singularity_eps: float = 1e-3
    # seconds without contact before the run is abandoned
    contact_patience: float = 0.5
    # refined-path tangent uses points this far apart along the path
    tangent_window: float = 0.002

    def __post_init__(self):
        if not (self.k_p > 0 and self.dt > 0 and self.v_const > 0):
            raise ValueError("k_p, dt and v_const must be positive")


@dataclass(frozen=True)
class Contact:
    P_s: np.ndarray
    delta: np.ndarray
    delta_t: float
    delta_n: float
    t_s: np.ndarray
    n_s: np.ndarray
    s: float


def srm_contact(P_r, alpha: float, world: SeamWorld) -> Contact:
    """Tip position and deformation for the end effector at ``P_r``.

    ``n_s`` points from the wall toward the working side, so ``delta_n > 0``
    means the end effector sits on that side. ``alpha`` does not enter the
    ideal projection model.

    Raises
    ------
    ContactLost
        The end effector is farther than ``max_engagement`` from the wall.
    """
    P_r = np.asarray(P_r, dtype=float)
    P_s, t_s, s, _, _ = world.true_seam.closest(P_r)
    delta = P_r - P_s
    if np.linalg.norm(delta) > world.max_engagement:
        raise ContactLost(f"tip {np.linalg.norm(delta) * 1e3:.1f} mm from the seam")
    n_s = world.side * left_normal(t_s)
    return Contact(P_s, delta, float(delta @ t_s), float(delta @ n_s), t_s, n_s, s)


def servo_velocity(
    P_r,
    delta_n: float,
    n_s,
    world: SeamWorld,
    params: ServoParams,
    delta_d: Optional[float] = None,
    nearest: Optional[int] = None,
):
    """Feed along the planned tangent plus proportional normal-deformation correction."""
    dd = params.delta_d if delta_d is None else delta_d
    i = world.nearest_planned(np.asarray(P_r, dtype=float)) if nearest is None else nearest
    t_v, _ = world.planned_frame(i)
    return params.v_const * t_v - params.k_p * (delta_n - dd) * np.asarray(n_s, dtype=float)


def torch_omega(V_r, alpha: float, d_norm: float, n_hat_t, singularity_eps: float = 1e-3) -> float:
    """Angular velocity cancelling the torch velocity along ``n_hat_t``.

    Raises
    ------
    KinematicSingularity
        ``n_d`` is (nearly) perpendicular to ``n_hat_t``.
    """
    V_r = np.asarray(V_r, dtype=float)
    n_hat_t = np.asarray(n_hat_t, dtype=float)
    t_d = np.array([math.cos(alpha), math.sin(alpha)])
    n_d = np.array([-math.sin(alpha), math.cos(alpha)])
    denom = d_norm * float(n_d @ n_hat_t)
    if abs(float(n_d @ n_hat_t)) < singularity_eps:
        raise KinematicSingularity(f"n_d . n_t = {float(n_d @ n_hat_t):.2e}")
    V_td = (V_r @ t_d) * t_d
    V_nd = (V_r @ n_d) * n_d
    return -float(V_td @ n_hat_t + V_nd @ n_hat_t) / denom


@dataclass
class WeldTrace:
    t: np.ndarray
    P_r: np.ndarray
    P_s: np.ndarray
    P_t: np.ndarray
    alpha: np.ndarray
    delta_t: np.ndarray
    delta_n: np.ndarray
    delta_d: np.ndarray
    omega: np.ndarray
    V_r: np.ndarray
    V_t: np.ndarray
    n_hat_t: np.ndarray
    in_contact: np.ndarray
    refined_path: np.ndarray
    refined_index: np.ndarray
    status: str = "completed"
    message: str = ""
    events: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    @property
    def constraint_residual(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.V_t, self.n_hat_t)


def _refined_frame(refined: np.ndarray, m: int, j: int, w: int):
    lo, hi = max(0, j - w), min(m - 1, j + w)
    chord = refined[hi] - refined[lo]
    n = np.linalg.norm(chord)
    if n < 1e-9:
        return None
    t = chord / n
    return t, left_normal(t)


def run_weld(
    world: SeamWorld,
    params: ServoParams = ServoParams(),
    start=None,
    alpha0: Optional[float] = None,
) -> WeldTrace:
    """Explicit-Euler simulation of the online trajectory generation loop.

    Stops at the end of the planned path, after ``max_steps``, on a kinematic
    singularity, or when contact stays lost longer than ``contact_patience``.
    Losing contact resets the deformation setpoint to zero.

    Raises
    ------
    NeverEngaged
        No contact at the start pose.
    """
    P_r = np.array(world.planned_path[0] if start is None else start, dtype=float)
    if alpha0 is None:
        t0, _ = world.planned_frame(0)
        alpha0 = math.atan2(t0[1], t0[0])
    alpha = float(alpha0)
    d = world.tool_offset
    try:
        contact = srm_contact(P_r, alpha, world)
    except ContactLost as exc:
        raise NeverEngaged(str(exc)) from exc

    N = params.max_steps
    rec = {k: np.full((N, 2), np.nan) for k in ("P_r", "P_s", "P_t", "V_r", "V_t", "n_hat_t")}
    sc = {k: np.full(N, np.nan) for k in ("t", "alpha", "delta_t", "delta_n", "delta_d", "omega")}
    in_contact = np.zeros(N, dtype=bool)
    refined = np.empty((N, 2))
    refined_idx = np.empty(N, dtype=int)
    m = 0
    w = max(1, int(round(params.tangent_window / (params.v_const * params.dt))))
    delta_d = params.delta_d
    last_n_s = contact.n_s
    lost_steps = 0
    patience = int(round(params.contact_patience / params.dt))
    status, message, events = "max_steps", "", []
    last_planned = len(world.planned_path) - 1

    k = 0
    for k in range(N):
        try:
            contact = srm_contact(P_r, alpha, world)
            lost_steps = 0
        except ContactLost as exc:
            contact = None
            lost_steps += 1
            if delta_d != 0.0:
                events.append((k, "contact lost, deformation setpoint reset to zero"))
                delta_d = 0.0
            if lost_steps > patience:
                status, message = "contact_lost", str(exc)
                break

        if contact is not None:
            # refine: tip position recovered from the end effector and the sensed deformation
            P_s = P_r - (contact.delta_t * contact.t_s + contact.delta_n * contact.n_s)
            refined[m] = P_s
            refined_idx[m] = k
            m += 1
            last_n_s = contact.n_s
            dn, dt_s = contact.delta_n, contact.delta_t
        else:
            P_s = np.array([np.nan, np.nan])
            dn, dt_s = delta_d, 0.0

        i = world.nearest_planned(P_r)
        V_r = servo_velocity(P_r, dn, last_n_s, world, params, delta_d, nearest=i)
        state = ToolState2D(P_r, alpha)
        P_t = state.torch(d)

        frame = None
        if m >= 2:
            q = refined[:m] - P_t
            j = int(np.argmin(np.einsum("ij,ij->i", q, q)))
            frame = _refined_frame(refined, m, j, w)
        if frame is None:
            frame = world.planned_frame(world.nearest_planned(P_t))
        n_hat_t = frame[1]

        try:
            omega = torch_omega(V_r, alpha, d, n_hat_t, params.singularity_eps)
        except KinematicSingularity as exc:
            status, message = "singularity", str(exc)
            break
        V_t = V_r + omega * d * state.n_d

        rec["P_r"][k], rec["P_s"][k], rec["P_t"][k] = P_r, P_s, P_t
        rec["V_r"][k], rec["V_t"][k], rec["n_hat_t"][k] = V_r, V_t, n_hat_t
        sc["t"][k], sc["alpha"][k] = k * params.dt, alpha
        sc["delta_t"][k], sc["delta_n"][k] = dt_s, dn if contact is not None else np.nan
        sc["delta_d"][k], sc["omega"][k] = delta_d, omega
        in_contact[k] = contact is not None

        if i == last_planned:
            t_v, _ = world.planned_frame(i)
            if np.dot(P_r - world.planned_path[i], t_v) >= 0:
                status = "completed"
                k += 1
                break

        P_r = P_r + params.dt * V_r
        alpha = alpha - params.dt * omega
    else:
        k = N

    n = k
    return WeldTrace(
        t=sc["t"][:n],
        P_r=rec["P_r"][:n],
        P_s=rec["P_s"][:n],
        P_t=rec["P_t"][:n],
        alpha=sc["alpha"][:n],
        delta_t=sc["delta_t"][:n],
        delta_n=sc["delta_n"][:n],
        delta_d=sc["delta_d"][:n],
        omega=sc["omega"][:n],
        V_r=rec["V_r"][:n],
        V_t=rec["V_t"][:n],
        n_hat_t=rec["n_hat_t"][:n],
        in_contact=in_contact[:n],
        refined_path=refined[:m].copy(),
        refined_index=refined_idx[:m].copy(),
        status=status,
        message=message,
        events=events,
    )


def path_rms(points: np.ndarray, seam: Polyline) -> float:
    """RMS closest-point distance of a set of points to the seam."""
    pts = np.asarray(points, dtype=float)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    return float(np.sqrt(np.mean(seam.distance(pts) ** 2)))
