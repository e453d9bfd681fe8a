import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flangecal.circle_fit import (
    RansacParams,
    canonical_normal,
    circle_through_three,
    detect_flange,
    extract_rim,
    flange_tcp_from_scene,
    point_to_circle_distance,
    ransac_circle,
)
from flangecal.cloud import PassThroughBox, PointCloud
from flangecal.errors import DegenerateSample, NoModelFound, SegmentationFailed
from flangecal.flange_sim import FlangeModel, generate_scene
from flangecal.se3 import RigidTransform, random_transform

R0 = 0.031


def arc(n, radius=R0, start=0.0, sweep=2 * math.pi, center=(0, 0, 0), sigma=0.0, seed=0, endpoint=False):
    rng = np.random.default_rng(seed)
    th = start + np.linspace(0, sweep, n, endpoint=endpoint)
    pts = np.column_stack([radius * np.cos(th), radius * np.sin(th), np.zeros(n)]) + center
    return pts + rng.normal(0, sigma, pts.shape) if sigma else pts


def kasa_center(xy):
    # algebraic fit: x^2 + y^2 + D x + E y + F = 0
    A = np.column_stack([xy[:, 0], xy[:, 1], np.ones(len(xy))])
    b = -(xy[:, 0] ** 2 + xy[:, 1] ** 2)
    D, E, _ = np.linalg.lstsq(A, b, rcond=None)[0]
    return np.array([-D / 2, -E / 2])


def test_three_point_unit_circle():
    c = circle_through_three([1, 0, 0], [0, 1, 0], [-1, 0, 0])
    np.testing.assert_allclose(c.center, 0, atol=1e-15)
    assert c.radius == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(c.normal, [0, 0, 1])


def test_three_point_constructed_circle():
    center = np.array([0.2, 0.1, 0.5])
    th = np.radians([0, 90, 210])
    pts = center + R0 * np.column_stack([np.cos(th), np.sin(th), np.zeros(3)])
    c = circle_through_three(*pts)
    np.testing.assert_allclose(c.center, center, atol=1e-9)
    assert abs(c.radius - R0) < 1e-9


def test_three_point_collinear():
    with pytest.raises(DegenerateSample):
        circle_through_three([0, 0, 0], [1, 0, 0], [2, 0, 0])


def test_canonical_normal_sign():
    np.testing.assert_array_equal(canonical_normal([0, 0, -2]), [0, 0, 1])
    np.testing.assert_array_equal(canonical_normal([0, -1, 0]), [0, 1, 0])
    np.testing.assert_array_equal(canonical_normal([-1, 0, 0]), [1, 0, 0])


def test_point_to_circle_distance():
    d = point_to_circle_distance(np.array([[0, 0, 0], [R0, 0, 0.003], [0.041, 0, 0]]), np.zeros(3), np.array([0, 0, 1.0]), R0)
    np.testing.assert_allclose(d, [R0, 0.003, 0.010])


def test_full_circle_noiseless():
    fit = ransac_circle(arc(360))
    assert np.linalg.norm(fit.center) < 1e-6
    assert fit.inlier_count == 360


def test_half_arc_noisy_against_algebraic_fit():
    pts = arc(400, sweep=math.pi, sigma=1e-4, seed=4, endpoint=True)
    fit = ransac_circle(pts)
    oracle = kasa_center(pts[:, :2])
    assert np.linalg.norm(fit.center) < 3e-4
    assert np.linalg.norm(fit.center[:2] - oracle) < 3e-4


def test_wrong_radius_rejected():
    with pytest.raises(NoModelFound):
        ransac_circle(arc(360, radius=0.045))


def test_model_check_soundness_under_noise():
    for seed in range(5):
        fit = ransac_circle(arc(300, sigma=2e-4, seed=seed), RansacParams(rng_seed=seed))
        assert abs(fit.radius - R0) <= 1e-3


def test_determinism():
    pts = arc(300, sigma=1e-4, seed=9)
    a, b = ransac_circle(pts), ransac_circle(pts)
    np.testing.assert_array_equal(a.center, b.center)
    np.testing.assert_array_equal(a.normal, b.normal)
    assert a.radius == b.radius and a.inlier_count == b.inlier_count


@settings(max_examples=20)
@given(st.floats(math.pi / 2, 2 * math.pi), st.floats(0, 2 * math.pi))
def test_noiseless_partial_arcs(sweep, start):
    fit = ransac_circle(arc(200, start=start, sweep=sweep, endpoint=True))
    assert np.linalg.norm(fit.center) < 3e-4


@settings(max_examples=15)
@given(st.integers(0, 2**31))
def test_rigid_invariance(seed):
    pts = arc(300, sigma=5e-5, seed=1)
    T = random_transform(np.random.default_rng(seed))
    a = ransac_circle(pts)
    b = ransac_circle(T.apply(pts))
    assert np.linalg.norm(b.center - T.apply(a.center)) < 3e-4


def test_extract_rim_keeps_outer_ring():
    model = FlangeModel()
    scene = generate_scene(model, RigidTransform(), wrist=False)
    rim = extract_rim(scene)
    r = np.hypot(rim.points[:, 0], rim.points[:, 1])
    assert np.sum(np.abs(r - model.outer_radius) < 1e-9) >= 0.5 * len(rim)


def scene_box(center, half=0.1):
    c = np.asarray(center)
    return PassThroughBox(c - half, c + half)


def test_scene_tcp_noiseless():
    pose = RigidTransform.from_rpy((0.2, -0.1, 0.3), [0.05, -0.02, 0.6])
    scene = generate_scene(FlangeModel(), pose, floor_z=0.75, seed=1)
    tcp = flange_tcp_from_scene(scene, PassThroughBox([-0.5, -0.5, 0.3], [0.5, 0.5, 0.7]))
    assert np.linalg.norm(tcp - pose.translation) < 1e-6


def test_scene_tcp_noisy():
    pose = RigidTransform.from_rpy((0.1, 0.2, -0.4), [0.0, 0.03, 0.55])
    scene = generate_scene(FlangeModel(), pose, sensor_sigma=3e-4, seed=2)
    fit = detect_flange(scene, scene_box(pose.translation))
    assert np.linalg.norm(fit.center - pose.translation) < 5e-4


def test_floor_only_fails():
    g = np.arange(-0.1, 0.1, 0.002)
    X, Y = np.meshgrid(g, g)
    floor = PointCloud(np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)]))
    with pytest.raises(SegmentationFailed):
        flange_tcp_from_scene(floor, PassThroughBox([-1, -1, -1], [1, 1, 1]))
