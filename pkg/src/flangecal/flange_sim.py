"""
Synthetic flange data and the Monte-Carlo calibration study.

Fast mode disturbs TCP points directly; scene mode renders a flange face
(plus optional floor and wrist) per pose and runs the full detection pipeline.
Every realization owns a generator seeded from (master_seed, sigma_index,
realization_index), so serial and parallel sweeps agree bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import calib
from .cloud import PointCloud
from .icp import SimulationVerifier, TranslationNorm
from .errors import DegenerateConfiguration
from .rigid_fit import SamplePair, check_configuration, fit_rigid
from .se3 import H_TRUE, PoseError, RigidTransform, invert, rotation_from_rpy

COMPONENTS = ("dx", "dy", "dz", "droll", "dpitch", "dyaw")


@dataclass(frozen=True)
class FlangeModel:
    """ISO 9409-1-50-4-M6 style face: outer disc, inner bore, bolt holes."""

    outer_radius: float = 0.031
    bolt_circle_radius: float = 0.025
    hole_radius: float = 0.0033
    hole_count: int = 4
    annulus_inner_radius: float = 0.010
    sample_density: float = 5.0e6

    def __post_init__(self):
        if self.hole_count < 0:
            raise ValueError("hole_count must be >= 0")
        if min(self.outer_radius, self.hole_radius, self.annulus_inner_radius, self.sample_density) <= 0:
            raise ValueError("radii and density must be positive")
        if self.hole_count and not (
            self.annulus_inner_radius + self.hole_radius < self.bolt_circle_radius
            and self.bolt_circle_radius + self.hole_radius < self.outer_radius
        ):
            raise ValueError("holes must lie inside the annulus")

    @property
    def spacing(self) -> float:
        return 1.0 / math.sqrt(self.sample_density)

    def hole_centers(self) -> np.ndarray:
        ang = 2 * math.pi * np.arange(self.hole_count) / max(self.hole_count, 1) + math.pi / 4
        return self.bolt_circle_radius * np.column_stack([np.cos(ang), np.sin(ang)])


def _face_points(model: FlangeModel, rng: np.random.Generator) -> np.ndarray:
    """Ring-stratified samples of the face in the flange frame (z = 0).

    Ring k sits at R - k*h with a random angular phase; interior rings get a
    radial jitter of at most h/4, so the outermost ring is exactly the rim.
    """
    h = model.spacing
    R, r_in = model.outer_radius, model.annulus_inner_radius
    n_rings = int(math.floor((R - r_in) / h)) + 1
    chunks = []
    for k in range(n_rings):
        r = R - k * h
        m = max(int(round(2 * math.pi * r / h)), 3)
        phase = rng.uniform(0, 2 * math.pi / m)
        ang = phase + 2 * math.pi * np.arange(m) / m
        rr = np.full(m, r)
        if 0 < k < n_rings - 1:
            rr = rr + rng.uniform(-0.25 * h, 0.25 * h, size=m)
        chunks.append(np.column_stack([rr * np.cos(ang), rr * np.sin(ang)]))
    xy = np.concatenate(chunks)
    keep = np.ones(len(xy), dtype=bool)
    for c in model.hole_centers():
        keep &= np.hypot(xy[:, 0] - c[0], xy[:, 1] - c[1]) > model.hole_radius
    xy = xy[keep]
    return np.column_stack([xy, np.zeros(len(xy))])


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def generate_flange_cloud(
    model: FlangeModel = FlangeModel(),
    pose_cam: RigidTransform = RigidTransform(),
    sensor_sigma: float = 0.0,
    seed=0,
    frame_tag: str = "cam",
) -> PointCloud:
    """Flange face sampled in its own frame, posed by ``pose_cam``, plus noise.

    The ground-truth TCP is ``pose_cam.translation``.
    """
    rng = _rng(seed)
    pts = pose_cam.apply(_face_points(model, rng))
    if sensor_sigma > 0:
        pts = pts + rng.normal(0.0, sensor_sigma, size=pts.shape)
    return PointCloud(pts, frame_tag, source="synthetic flange")


def _wrist_points(model: FlangeModel, rng, spacing: float) -> np.ndarray:
    # half cylinder of the wrist housing, 5 mm behind the face
    radius = model.outer_radius + 0.0135
    length = 0.060
    ang = np.arange(0, math.pi, spacing / radius)
    zs = -0.005 - np.arange(0, length, spacing)
    A, Z = np.meshgrid(ang, zs)
    return np.column_stack([radius * np.cos(A).ravel(), radius * np.sin(A).ravel(), Z.ravel()])


def generate_scene(
    model: FlangeModel,
    flange_pose: RigidTransform,
    sensor_sigma: float = 0.0,
    seed=0,
    floor_z: Optional[float] = None,
    floor_half_extent: float = 0.25,
    floor_spacing: float = 0.004,
    wrist: bool = True,
    clutter_spacing: float = 0.002,
) -> PointCloud:
    """Scanner scene: flange face, optional wrist housing and floor plane z = floor_z."""
    rng = _rng(seed)
    parts = [flange_pose.apply(_face_points(model, rng))]
    if wrist:
        parts.append(flange_pose.apply(_wrist_points(model, rng, clutter_spacing)))
    if floor_z is not None:
        c = flange_pose.translation
        g = np.arange(-floor_half_extent, floor_half_extent + 1e-12, floor_spacing)
        X, Y = np.meshgrid(c[0] + g, c[1] + g)
        parts.append(np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, floor_z)]))
    pts = np.concatenate(parts)
    if sensor_sigma > 0:
        pts = pts + rng.normal(0.0, sensor_sigma, size=pts.shape)
    return PointCloud(pts, "cam", source="synthetic scene")


@dataclass(frozen=True)
class SimScenario:
    H_true: RigidTransform = H_TRUE
    # 0.2 m off the optical axis, 0.6 m from the camera
    workspace_center: tuple = (0.4, -0.0125, 0.4)
    workspace_size: tuple = (0.3, 0.3, 0.2)
    grid_shape: tuple = (5, 5, 3)
    n_poses: int = 75
    orientation_limit: float = 0.3
    theta_max: float = 0.3
    noise_sigma: float = 1e-3
    n_realizations: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.n_poses < 4:
            raise ValueError("need at least 4 poses")


def _lattice(center, size, shape) -> np.ndarray:
    axes = [
        np.linspace(c - s / 2, c + s / 2, k) if k > 1 else np.array([c])
        for c, s, k in zip(center, size, shape)
    ]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])


def _grid_shape(n: int, size) -> tuple:
    """Near-cubic lattice with at least n nodes, proportioned to the workspace."""
    if n == 75 and tuple(size) == (0.3, 0.3, 0.2):
        return (5, 5, 3)
    s = np.asarray(size, dtype=float)
    s = np.where(s > 0, s, s.max() if s.max() > 0 else 1.0)
    scale = (n / np.prod(s)) ** (1 / 3)
    shape = np.maximum(1, np.round(s * scale)).astype(int)
    while np.prod(shape) < n:
        shape[np.argmax(s / shape)] += 1
    return tuple(int(k) for k in shape)


def _spread(nodes: np.ndarray, n: int) -> np.ndarray:
    """n lattice nodes, kept in lattice order, that fill the workspace.

    Starts from four alternating box corners (a tetrahedron) and adds nodes by
    farthest-point selection. A prefix of the lattice would lie in one plane
    for small n.
    """
    if n >= len(nodes):
        return nodes
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    corners = [np.where(np.array(bits) == 1, hi, lo) for bits in ((0, 0, 0), (1, 1, 0), (1, 0, 1), (0, 1, 1))]
    chosen = list(dict.fromkeys(int(np.argmin(np.linalg.norm(nodes - c, axis=1))) for c in corners))[:n]
    d = np.min(np.linalg.norm(nodes[:, None] - nodes[chosen][None], axis=2), axis=1)
    while len(chosen) < n:
        i = int(np.argmax(d))
        chosen.append(i)
        d = np.minimum(d, np.linalg.norm(nodes - nodes[i], axis=1))
    return nodes[np.sort(chosen)]


def sample_poses(scenario: SimScenario = SimScenario(), rng=None) -> list[RigidTransform]:
    """Flange poses on a lattice filling the workspace, with random orientation.

    Roll, pitch and yaw are uniform in (-limit, limit); draws whose flange
    normal tilts more than ``theta_max`` from the base z axis are redrawn.
    """
    rng = _rng(scenario.rng_seed if rng is None else rng)
    shape = scenario.grid_shape
    if int(np.prod(shape)) < scenario.n_poses:
        shape = _grid_shape(scenario.n_poses, scenario.workspace_size)
    pos = _spread(_lattice(scenario.workspace_center, scenario.workspace_size, shape), scenario.n_poses)
    lim = scenario.orientation_limit
    poses = []
    for p in pos:
        while True:
            rpy = rng.uniform(-lim, lim, size=3)
            R = rotation_from_rpy(rpy)
            if math.acos(min(1.0, R[2, 2])) <= scenario.theta_max:
                break
        poses.append(RigidTransform(R, p))
    return poses


def disturb_point(p_base, H_true: RigidTransform, sigma: float, seed=0) -> np.ndarray:
    """Camera-frame observation of a base-frame TCP with isotropic Gaussian noise.

    ``H_true`` maps camera to base, so the clean observation is
    ``inv(H_true) @ p_base``. Accepts a single point or an (N, 3) array.
    """
    rng = _rng(seed)
    p = invert(H_true).apply(np.asarray(p_base, dtype=float))
    if sigma > 0:
        p = p + rng.normal(0.0, sigma, size=p.shape)
    return p


def make_pairs(poses: Sequence[RigidTransform], H_true: RigidTransform, sigma: float, rng) -> list[SamplePair]:
    base = np.array([T.translation for T in poses])
    cam = disturb_point(base, H_true, sigma, rng)
    return [SamplePair(c, T.translation, T) for c, T in zip(cam, poses)]


def inject_outliers(pairs: list[SamplePair], indices, offsets) -> list[SamplePair]:
    """Replace the camera-frame TCP of selected pairs by a displaced one."""
    out = list(pairs)
    for i, off in zip(indices, offsets):
        p = out[i]
        out[i] = SamplePair(p.p_cam + np.asarray(off, dtype=float), p.p_base, p.robot_pose, "outlier")
    return out


def random_offsets(rng, n: int, low: float = 0.020, high: float = 0.100) -> np.ndarray:
    """``n`` displacements with uniform random direction and length in [low, high]."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.uniform(low, high, size=(n, 1))


def outlier_study_pairs(
    n_pairs: int = 54,
    n_outliers: int = 3,
    sigma: float = 3e-4,
    seed: int = 0,
    scenario: SimScenario = None,
    offset_range: tuple = (0.020, 0.100),
):
    """Pairs with a few grossly displaced camera TCPs, as left by false segmentations.

    Returns (pairs, outlier_indices); displaced pairs carry ``cloud_ref='outlier'``.
    """
    rng = _rng(seed)
    scenario = scenario or SimScenario(n_poses=n_pairs)
    poses = sample_poses(replace(scenario, n_poses=n_pairs), rng)
    pairs = make_pairs(poses, scenario.H_true, sigma, rng)
    idx = np.sort(rng.choice(n_pairs, size=n_outliers, replace=False))
    return inject_outliers(pairs, idx, random_offsets(rng, n_outliers, *offset_range)), idx.tolist()


# ---------------------------------------------------------------------------
# Monte-Carlo sweep


@dataclass
class SweepResult:
    sigmas: np.ndarray
    # stats[method] -> dict(mean=(S, 6), std=(S, 6)) in mm / deg
    stats: dict = field(default_factory=dict)
    # traces[sigma_index] -> dict(mean=(K, 6), std=(K, 6)); row k = pairs sampled k + 4
    traces: dict = field(default_factory=dict)
    n_realizations: int = 0
    master_seed: int = 0

    def slope(self, method: str, component: str) -> float:
        """Least-squares slope of a component's std against sigma (per mm of sigma)."""
        j = COMPONENTS.index(component)
        x = self.sigmas * 1e3
        y = self.stats[method]["std"][:, j]
        return float(np.polyfit(x, y, 1)[0])


def nondegenerate_order(points: np.ndarray, rng) -> np.ndarray:
    """Random permutation whose first four points are not coplanar.

    Lattice nodes are often exactly coplanar; such leading quadruples are
    redrawn.
    """
    points = np.asarray(points, dtype=float)
    check_configuration(points)
    while True:
        order = rng.permutation(len(points))
        try:
            check_configuration(points[order[:4]])
        except DegenerateConfiguration:
            continue
        return order


def shuffle_pairs(pairs: Sequence[SamplePair], rng) -> list[SamplePair]:
    """Random order whose first four pairs can initialize the pool."""
    order = nondegenerate_order(np.array([p.p_base for p in pairs]), rng)
    return [pairs[i] for i in order]


def realization_rng(master_seed: int, sigma_index: int, realization: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, sigma_index, realization]))


def run_realization(args):
    """One realization: returns (all-points row, iterative row, iterative trace)."""
    scenario, sigma, sigma_index, realization, methods = args
    rng = realization_rng(scenario.rng_seed, sigma_index, realization)
    poses = sample_poses(scenario, rng)
    pairs = make_pairs(poses, scenario.H_true, sigma, rng)
    pairs = shuffle_pairs(pairs, rng)
    verifier = SimulationVerifier(scenario.H_true)

    all_row = it_row = trace = None
    if "all" in methods:
        fit = fit_rigid(pairs)
        all_row = PoseError.from_transform(verifier(fit.transform).delta).as_row()
    if "iterative" in methods:
        cfg = calib.CalibConfig(e_required=1e-9, k_max=len(pairs), cost_kind=TranslationNorm)
        out = calib.run(pairs, verifier, cfg)
        trace = np.full((len(pairs) - 3, 6), np.nan)
        for h in out.history:
            trace[h.iteration] = h.pose_error.as_row()
        # after early termination the pool stays fixed
        last = len(out.history)
        if last < len(trace):
            trace[last:] = trace[last - 1]
        it_row = trace[-1].tolist()
    return all_row, it_row, trace


def run_sweep(
    sigmas: Sequence[float],
    scenario: SimScenario = SimScenario(),
    n_realizations: Optional[int] = None,
    methods=("all", "iterative"),
    trace_sigmas: Sequence[float] = (1e-3,),
    n_jobs: int = 1,
) -> SweepResult:
    """Aggregate per-component error mean/std over realizations for each sigma (meters)."""
    sigmas = np.asarray(sigmas, dtype=float)
    R = scenario.n_realizations if n_realizations is None else n_realizations
    jobs = [
        (scenario, float(s), i, r, tuple(methods)) for i, s in enumerate(sigmas) for r in range(R)
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(run_realization, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))
    else:
        results = [run_realization(j) for j in jobs]

    out = SweepResult(sigmas=sigmas, n_realizations=R, master_seed=scenario.rng_seed)
    for m_index, method in ((0, "all"), (1, "iterative")):
        if method not in methods:
            continue
        rows = np.array([res[m_index] for res in results]).reshape(len(sigmas), R, 6)
        out.stats[method] = {"mean": rows.mean(axis=1), "std": rows.std(axis=1, ddof=1) if R > 1 else np.zeros((len(sigmas), 6))}
    if "iterative" in methods:
        for i, s in enumerate(sigmas):
            if any(abs(s - t) < 1e-12 for t in trace_sigmas):
                tr = np.stack([results[i * R + r][2] for r in range(R)])
                out.traces[i] = {
                    "mean": tr.mean(axis=0),
                    "std": tr.std(axis=0, ddof=1) if R > 1 else np.zeros(tr.shape[1:]),
                }
    return out
