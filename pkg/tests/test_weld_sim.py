import math

import numpy as np
import pytest

from flangecal.errors import ContactLost, KinematicSingularity, NeverEngaged
from flangecal.weld_sim import (
    Polyline,
    SeamWorld,
    ServoParams,
    ToolState2D,
    arc_seam,
    make_world,
    path_rms,
    run_weld,
    s_curve_seam,
    servo_velocity,
    srm_contact,
    straight_seam,
    torch_omega,
)


@pytest.fixture(scope="module")
def straight_run():
    seam = straight_seam(0.3)
    world = make_world(seam, vision_noise=0.001, seed=0)
    return seam, world, run_weld(world, ServoParams())


# --- geometry ---------------------------------------------------------------


def test_polyline_closest_and_ties():
    pl = Polyline([[0, 0], [1, 0], [1, 1]])
    q, t, s, i, _ = pl.closest([0.5, 0.2])
    assert np.allclose(q, [0.5, 0]) and np.allclose(t, [1, 0]) and s == pytest.approx(0.5)
    # the corner is equidistant to both segments: lower index wins
    assert pl.closest([1.5, -0.5])[3] == 0
    assert pl.length == pytest.approx(2.0)
    assert np.allclose(pl.point_at(1.5), [1, 0.5])
    with pytest.raises(ValueError):
        Polyline([[0, 0]])
    with pytest.raises(ValueError):
        Polyline([[0, 0], [0, 0], [1, 0]])


def test_seam_generators():
    arc = arc_seam(0.1, math.pi / 2)
    assert arc.length == pytest.approx(0.1 * math.pi / 2, rel=1e-4)
    assert np.allclose(arc.points[-1], [0.1, 0.1])
    led = arc_seam(0.1, math.pi / 2, lead=0.05)
    assert led.length == pytest.approx(0.1 * math.pi / 2 + 0.1, rel=1e-4)
    sc = s_curve_seam(0.3, 0.02)
    assert np.max(np.abs(sc.points[:, 1])) == pytest.approx(0.02, rel=1e-3)


def test_tool_state_frame():
    for a in np.linspace(-3, 3, 13):
        s = ToolState2D(np.zeros(2), a)
        assert abs(s.t_d @ s.n_d) < 1e-15
        assert abs(np.linalg.norm(s.t_d) - 1) < 1e-15 and abs(np.linalg.norm(s.n_d) - 1) < 1e-15
        assert np.allclose(s.P_r - s.torch(0.05), 0.05 * s.t_d)


def test_world_validation():
    with pytest.raises(ValueError):
        SeamWorld(straight_seam(), np.empty((0, 2)))
    with pytest.raises(ValueError):
        SeamWorld(straight_seam(), [[0, 0], [1, 0]], tool_offset=0.0)
    with pytest.raises(ValueError):
        SeamWorld(straight_seam(), [[0, 0], [1, 0]], side=0)
    with pytest.raises(ValueError):
        ServoParams(k_p=0)


# --- contact ------------------------------------------------------------------


def straight_world(**kw):
    return make_world(straight_seam(0.3), vision_noise=0.0, **kw)


def test_contact_on_wall_zero_deformation():
    c = srm_contact([0.1, 0.0], 0.0, straight_world())
    assert np.allclose(c.delta, 0, atol=1e-15) and abs(c.delta_n) < 1e-15 and abs(c.delta_t) < 1e-15


def test_contact_projection_example():
    c = srm_contact([0.1, 0.002], 0.0, straight_world())
    assert np.allclose(c.P_s, [0.1, 0.0], atol=1e-15)
    assert np.allclose(c.delta, [0, 0.002], atol=1e-15)
    assert c.delta_n == pytest.approx(0.002) and c.delta_t == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(c.n_s, [0, 1])


def test_contact_side_sign():
    c = srm_contact([0.1, 0.002], 0.0, straight_world(side=-1))
    assert c.delta_n == pytest.approx(-0.002)


def test_contact_lost_far_away():
    with pytest.raises(ContactLost):
        srm_contact([0.1, 0.05], 0.0, straight_world(max_engagement=0.010))


# --- servo and torch ------------------------------------------------------------


def test_servo_pure_feed():
    w, p = straight_world(), ServoParams()
    V = servo_velocity([0.1, 0.002], p.delta_d, np.array([0, 1.0]), w, p)
    assert np.allclose(V, [p.v_const, 0], atol=1e-15)


def test_servo_linear_law():
    w = straight_world()
    p = ServoParams(k_p=10.0, delta_d=0.001)
    V = servo_velocity([0.1, 0.0], 0.0, np.array([0, 1.0]), w, p)
    assert V[1] == pytest.approx(0.010, abs=1e-15)
    assert V[0] == pytest.approx(p.v_const, abs=1e-15)


def test_planned_tangent_straight():
    w = straight_world()
    for i in range(len(w.planned_path)):
        t, n = w.planned_frame(i)
        assert np.allclose(t, [1, 0], atol=1e-12) and np.allclose(n, [0, 1], atol=1e-12)


def test_omega_zero_when_constraint_met():
    assert torch_omega([0.01, 0.0], 0.0, 0.05, [0, 1.0]) == 0.0


def test_omega_hand_example():
    v, d = 0.004, 0.05
    om = torch_omega([0, v], 0.0, d, [0, 1.0])
    assert om == pytest.approx(-v / d, abs=1e-15)
    # substitution: V_t = V_r + omega |d| n_d has no component along n_t
    assert abs((np.array([0, v]) + om * d * np.array([0, 1.0])) @ [0, 1.0]) < 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_omega_constraint_by_substitution(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-math.pi, math.pi)
    n_t = rng.normal(size=2)
    n_t /= np.linalg.norm(n_t)
    n_d = np.array([-math.sin(a), math.cos(a)])
    if abs(n_d @ n_t) < 0.05:
        return
    V = rng.normal(0, 0.01, 2)
    om = torch_omega(V, a, 0.05, n_t)
    assert abs((V + om * 0.05 * n_d) @ n_t) < 1e-12


def test_omega_singularity():
    with pytest.raises(KinematicSingularity):
        torch_omega([0.01, 0.0], 0.0, 0.05, [1.0, 0.0])


# --- full runs ------------------------------------------------------------------


def test_straight_run_completes(straight_run):
    seam, world, tr = straight_run
    assert tr.status == "completed"
    assert tr.P_r[-1, 0] >= world.planned_path[-1, 0] - 1e-3


def test_straight_steady_state(straight_run):
    seam, world, tr = straight_run
    s = tr.P_r[:, 0]
    steady = s > 0.1 * seam.length
    err = np.abs(tr.delta_n[steady] - tr.delta_d[steady])
    assert np.all(err < 0.1 * ServoParams().delta_d)


def test_refined_beats_planned(straight_run):
    seam, world, tr = straight_run
    assert path_rms(tr.refined_path, seam) < path_rms(world.planned_path, seam)


def test_constraint_residual(straight_run):
    _, _, tr = straight_run
    assert np.max(np.abs(tr.constraint_residual)) < 1e-9


def test_trace_invariants(straight_run):
    _, world, tr = straight_run
    d = world.tool_offset
    t_d = np.column_stack([np.cos(tr.alpha), np.sin(tr.alpha)])
    assert np.allclose(tr.P_r - tr.P_t, d * t_d, atol=1e-12)
    assert np.all(np.diff(tr.refined_index) > 0)
    assert np.allclose(np.linalg.norm(tr.n_hat_t, axis=1), 1, atol=1e-12)


def test_servo_converges_at_rate_kp():
    seam = straight_seam(0.05)
    world = make_world(seam, vision_noise=0.0, offset=(0.0, 0.005))
    p = ServoParams(k_p=10.0)
    tr = run_weld(world, p)
    e = np.abs(tr.delta_n - p.delta_d)
    use = (e > 1e-7) & (e < 2e-3)
    slope = np.polyfit(tr.t[use], np.log(e[use]), 1)[0]
    assert abs(-slope - p.k_p) < 0.2 * p.k_p


def test_determinism():
    seam = s_curve_seam(0.06, 0.005)
    a = run_weld(make_world(seam, seed=4), ServoParams())
    b = run_weld(make_world(seam, seed=4), ServoParams())
    assert np.array_equal(a.P_r, b.P_r) and np.array_equal(a.omega, b.omega)


def test_tight_arc_hits_singularity():
    tr = run_weld(make_world(arc_seam(0.015, 2.5, lead=0.1), vision_noise=0.0), ServoParams())
    assert tr.status == "singularity"


def test_never_engaged():
    world = make_world(straight_seam(0.1), vision_noise=0.0, offset=(0.0, 0.05))
    with pytest.raises(NeverEngaged):
        run_weld(world)


def test_contact_loss_resets_setpoint():
    # the vision path runs 40 mm past the end of the real seam
    seam = straight_seam(0.04)
    planned = straight_seam(0.08).resample(0.01)
    tr = run_weld(SeamWorld(seam, planned), ServoParams())
    assert tr.status == "contact_lost"
    assert any("reset" in msg for _, msg in tr.events)
    assert tr.delta_d[-1] == 0.0


def test_degenerate_servo_tracks_seam():
    seam = straight_seam(0.1)
    tr = run_weld(make_world(seam, vision_noise=0.0), ServoParams(delta_d=0.0))
    assert tr.status == "completed"
    assert np.max(np.abs(tr.P_t[:, 1])) < 1e-9
