import math

import numpy as np
import pytest

from flangecal.circle_fit import RansacParams, detect_flange, extract_rim, ransac_circle
from flangecal.cloud import PassThroughBox
from flangecal.flange_sim import (
    COMPONENTS,
    FlangeModel,
    SimScenario,
    disturb_point,
    generate_flange_cloud,
    generate_scene,
    make_pairs,
    nondegenerate_order,
    outlier_study_pairs,
    random_offsets,
    realization_rng,
    run_sweep,
    sample_poses,
    shuffle_pairs,
)
from flangecal.rigid_fit import check_configuration
from flangecal.se3 import H_TRUE, RigidTransform, invert, random_transform, rpy_from_rotation


def test_model_validation():
    with pytest.raises(ValueError):
        FlangeModel(hole_count=-1)
    with pytest.raises(ValueError):
        FlangeModel(outer_radius=0.0)
    with pytest.raises(ValueError):
        FlangeModel(bolt_circle_radius=0.030)  # holes would cross the rim


def test_identity_cloud_geometry():
    m = FlangeModel()
    pts = generate_flange_cloud(m, RigidTransform.identity(), 0.0, seed=3).points
    assert len(pts) > 10_000
    assert np.all(np.abs(pts[:, 2]) < 1e-12)
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert np.all((r >= m.annulus_inner_radius) & (r <= m.outer_radius + 1e-15))


def test_holes_are_empty():
    m = FlangeModel()
    pts = generate_flange_cloud(m, RigidTransform.identity(), 0.0, seed=4).points[:, :2]
    for c in m.hole_centers():
        assert not np.any(np.linalg.norm(pts - c, axis=1) < m.hole_radius)
    assert len(m.hole_centers()) == 4
    assert np.allclose(np.linalg.norm(m.hole_centers(), axis=1), m.bolt_circle_radius)


def test_density_matches_area():
    m = FlangeModel()
    area = math.pi * (m.outer_radius**2 - m.annulus_inner_radius**2) - m.hole_count * math.pi * m.hole_radius**2
    n = len(generate_flange_cloud(m, seed=0))
    assert abs(n - area * m.sample_density) < 0.02 * area * m.sample_density


@pytest.mark.parametrize("seed", range(4))
def test_ransac_recovers_generator_center(seed):
    pose = random_transform(np.random.default_rng(seed), 0.5)
    cloud = generate_flange_cloud(FlangeModel(), pose, 0.0, seed=seed)
    fit = ransac_circle(extract_rim(cloud), RansacParams(rng_seed=seed))
    assert np.linalg.norm(fit.center - pose.translation) < 1e-6


def test_generator_seeding():
    a = generate_flange_cloud(FlangeModel(), sensor_sigma=1e-4, seed=5).points
    b = generate_flange_cloud(FlangeModel(), sensor_sigma=1e-4, seed=5).points
    c = generate_flange_cloud(FlangeModel(), sensor_sigma=1e-4, seed=6).points
    assert np.array_equal(a, b)
    assert a.shape != c.shape or not np.array_equal(a, c)


def test_scene_pipeline_closure():
    # scene mode TCP equals the direct TCP within RANSAC tolerance
    pose = RigidTransform.from_rpy((0.2, -0.1, 0.5), [0.05, -0.02, 0.6])
    scene = generate_scene(FlangeModel(), pose, 0.0, seed=1, floor_z=0.65)
    c = pose.translation
    box = PassThroughBox(tuple(c - 0.06), tuple(c + 0.06))
    assert np.linalg.norm(detect_flange(scene, box).center - c) < 1e-6


def test_zero_extent_workspace():
    sc = SimScenario(n_poses=8, workspace_size=(0, 0, 0), grid_shape=(1, 1, 1))
    poses = sample_poses(sc)
    assert len(poses) == 8
    assert all(np.array_equal(p.translation, poses[0].translation) for p in poses)


def test_default_poses():
    sc = SimScenario()
    poses = sample_poses(sc)
    pos = np.array([p.translation for p in poses])
    assert len(poses) == 75
    assert len({tuple(p) for p in pos}) == 75
    lo = np.array(sc.workspace_center) - np.array(sc.workspace_size) / 2
    hi = np.array(sc.workspace_center) + np.array(sc.workspace_size) / 2
    assert np.all((pos >= lo - 1e-12) & (pos <= hi + 1e-12))
    for p in poses:
        assert np.all(np.abs(rpy_from_rotation(p.rotation).as_array()) < sc.orientation_limit)
        assert math.acos(min(1.0, p.rotation[2, 2])) <= sc.theta_max


def test_lattice_grows_for_more_poses():
    poses = sample_poses(SimScenario(n_poses=100))
    assert len({tuple(p.translation) for p in poses}) == 100


@pytest.mark.parametrize("n", [4, 5, 6, 11, 12, 20, 40, 74])
def test_partial_lattice_spans_volume(n):
    pos = np.array([p.translation for p in sample_poses(SimScenario(n_poses=n))])
    assert len({tuple(p) for p in pos}) == n
    assert np.linalg.svd(pos - pos.mean(axis=0), compute_uv=False)[2] > 0.01


def test_scenario_validation():
    with pytest.raises(ValueError):
        SimScenario(noise_sigma=-1)
    with pytest.raises(ValueError):
        SimScenario(n_poses=3)


def test_disturb_noiseless_origin():
    p = disturb_point(np.zeros(3), H_TRUE, 0.0)
    assert np.allclose(p, invert(H_TRUE).apply(np.zeros(3)), atol=0)


def test_disturb_noise_statistics():
    base = np.zeros((100_000, 3))
    cam = disturb_point(base, H_TRUE, 1e-3, seed=11)
    std = (cam - invert(H_TRUE).apply(np.zeros(3))).std(axis=0)
    assert np.all((std >= 0.98e-3) & (std <= 1.02e-3))


def test_disturb_seeding():
    p = np.array([0.4, 0.0, 0.4])
    assert np.array_equal(disturb_point(p, H_TRUE, 1e-3, 1), disturb_point(p, H_TRUE, 1e-3, 1))
    assert not np.array_equal(disturb_point(p, H_TRUE, 1e-3, 1), disturb_point(p, H_TRUE, 1e-3, 2))


def test_nondegenerate_order_leads_with_volume():
    rng = np.random.default_rng(0)
    pts = np.array([p.translation for p in sample_poses(SimScenario(), rng)])
    for _ in range(20):
        check_configuration(pts[nondegenerate_order(pts, rng)[:4]])


def test_shuffle_is_permutation():
    rng = np.random.default_rng(2)
    pairs = make_pairs(sample_poses(SimScenario(), rng), H_TRUE, 0.0, rng)
    sh = shuffle_pairs(pairs, rng)
    assert sorted(id(p) for p in sh) == sorted(id(p) for p in pairs)


def test_random_offsets_range():
    off = random_offsets(np.random.default_rng(0), 500)
    n = np.linalg.norm(off, axis=1)
    assert np.all((n >= 0.02) & (n <= 0.1))


def test_outlier_study_pairs():
    pairs, idx = outlier_study_pairs(seed=3)
    assert len(pairs) == 54 and len(idx) == 3
    assert [i for i, p in enumerate(pairs) if p.cloud_ref == "outlier"] == idx


def test_realization_rng_independent_streams():
    a = realization_rng(0, 1, 2).random(4)
    assert np.array_equal(a, realization_rng(0, 1, 2).random(4))
    assert not np.array_equal(a, realization_rng(0, 2, 1).random(4))


@pytest.fixture(scope="module")
def small_sweep():
    return run_sweep([1e-3, 3e-3], SimScenario(), n_realizations=6)


def test_sweep_shapes(small_sweep):
    for m in ("all", "iterative"):
        assert small_sweep.stats[m]["mean"].shape == (2, 6)
        assert np.all(small_sweep.stats[m]["std"] >= 0)
    tr = small_sweep.traces[0]
    assert tr["mean"].shape == (72, 6)
    assert 1 not in small_sweep.traces
    assert COMPONENTS[0] == "dx"
    assert math.isfinite(small_sweep.slope("all", "dx"))


def test_sweep_serial_parallel_identical(small_sweep):
    par = run_sweep([1e-3, 3e-3], SimScenario(), n_realizations=6, n_jobs=2)
    for m in ("all", "iterative"):
        for k in ("mean", "std"):
            assert np.array_equal(par.stats[m][k], small_sweep.stats[m][k])
    assert np.array_equal(par.traces[0]["std"], small_sweep.traces[0]["std"])


def test_sweep_single_method():
    res = run_sweep([1e-3], SimScenario(), n_realizations=2, methods=("all",))
    assert set(res.stats) == {"all"} and res.traces == {}
