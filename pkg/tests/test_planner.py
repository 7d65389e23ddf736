import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probewalk.model import N_LEGS, RobotParams, RobotState, feet_positions
from probewalk.ocp import knot_times
from probewalk.ocp.terms import friction_cone_residual
from probewalk.planner import (
    GrfEnvelope,
    MpcConfig,
    MpcController,
    PlannerParameterError,
    ReferenceBundle,
    SwingParams,
    crawl_schedule,
    envelope_in_cone,
    extract_grf_envelope,
    make_references,
    optimize_stride,
    project_into_region,
    swing_reference,
    weight_distribution,
)
from probewalk.planner import _poly
from probewalk.vfa import ConvexRegion, halfspaces_from_region, whole_plane_region

P = RobotParams()
X0 = RobotState.nominal(P).to_vector()
FEET0 = feet_positions(P, X0[6:12], X0[12:24])

coords = st.floats(-0.5, 0.5)
points = st.tuples(coords, coords, st.floats(-0.1, 0.1)).map(np.array)


# ---------------------------------------------------------------- gait


def test_crawl_order_from_rf():
    # RF, LH, LF, RH
    assert crawl_schedule(1).sequence == (1, 2, 0, 3)


@pytest.mark.parametrize("leg", range(4))
def test_crawl_schedule_properties(leg):
    sched = crawl_schedule(leg)
    assert sched.sequence[0] == leg and sorted(sched.sequence) == [0, 1, 2, 3]
    assert sum(sched.phase_durations) == pytest.approx(4.0)
    contact = sched.contact_at(np.arange(0.0, 4.0, 0.001))
    assert contact.sum(axis=1).min() == 3
    swinging = (~contact).sum(axis=1)
    assert swinging.max() == 1
    for other in sched.sequence:
        a, b = sched.swing_window(other)
        assert b - a == pytest.approx(0.75)


def test_lead_shift_outside_phase_rejected():
    with pytest.raises(PlannerParameterError):
        crawl_schedule(0, lead_shift=1.5)


# ---------------------------------------------------------------- swing splines


def test_swing_in_place_is_vertical_bump():
    p = np.array([0.2, 0.1, 0.0])
    s = swing_reference(p, p, SwingParams(step_height=0.08))
    t = np.linspace(0, s.duration, 301)
    pos = s.position(t)
    np.testing.assert_allclose(pos[:, :2] - p[:2], 0.0, atol=1e-12)
    np.testing.assert_allclose(pos[-1], p, atol=1e-12)
    assert pos[:, 2].max() == pytest.approx(0.08, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(points, points, st.floats(0.2, 2.0))
def test_swing_endpoints_and_boundary_velocities(p0, p1, T):
    sw = SwingParams()
    s = swing_reference(p0, p1, sw, T)
    np.testing.assert_allclose(s.position(0.0), p0, atol=1e-12)
    np.testing.assert_allclose(s.position(T), p1, atol=1e-12)
    np.testing.assert_allclose(s.velocity(0.0), (0, 0, sw.liftoff_velocity), atol=1e-9)
    np.testing.assert_allclose(s.velocity(T), (0, 0, sw.touchdown_velocity), atol=1e-9)
    assert s.apex[2] == pytest.approx(max(p0[2], p1[2]) + sw.step_height)


@settings(max_examples=50, deadline=None)
@given(points, points, st.floats(0.2, 2.0))
def test_swing_c2_at_apex(p0, p1, T):
    s = swing_reference(p0, p1, duration=T)
    # evaluate each segment's polynomial at the junction from both sides
    left = [np.asarray(s._eval(T / 2, k)) for k in range(3)]
    right = [_poly(s._c2, 0.0, k) for k in range(3)]
    for a, b in zip(left, right):
        np.testing.assert_allclose(a, b, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(points, points)
def test_swing_never_below_flat_ground(p0, p1):
    # equal endpoint heights: the ground is the plane z = p0_z
    p1 = np.r_[p1[:2], p0[2]]
    s = swing_reference(p0, p1)
    z = s.position(np.arange(0.0, s.duration + 1e-12, 0.001))[:, 2]
    assert z.min() >= p0[2] - 1e-12


def test_swing_needs_positive_duration():
    with pytest.raises(PlannerParameterError):
        swing_reference(np.zeros(3), np.ones(3), duration=0.0)


# ---------------------------------------------------------------- references


def test_weight_split():
    f = weight_distribution(P, [True, False, True, True]).reshape(4, 3)
    np.testing.assert_allclose(f[:, 2], [P.weight / 3, 0, P.weight / 3, P.weight / 3])
    np.testing.assert_array_equal(f[:, :2], 0.0)


def test_references_constant_when_target_is_start():
    sched = crawl_schedule(1)
    refs = make_references(P, X0, X0[6:12], FEET0, sched)
    np.testing.assert_allclose(refs.x[:, 6:12] - X0[6:12], 0.0, atol=1e-12)
    np.testing.assert_array_equal(refs.x[:, :6], 0.0)
    stance = refs.contact.all(axis=1)
    np.testing.assert_allclose(refs.x[stance][:, 12:] - X0[12:], 0.0, atol=1e-9)


def test_reference_base_midpoint_and_forces():
    sched = crawl_schedule(1)
    target = X0[6:12] + (0.1, 0, 0, 0, 0, 0)
    refs = make_references(P, X0, target, FEET0 + (0.1, 0, 0), sched)
    k = int(np.argmin(abs(refs.times - 2.0)))
    np.testing.assert_allclose(refs.x[k, 6:12], 0.5 * (X0[6:12] + target), atol=1e-12)
    three = refs.contact.sum(axis=1) == 3
    fz = refs.u[three][:, 2:12:3]
    np.testing.assert_allclose(np.sort(fz, axis=1)[:, 1:], P.weight / 3)


# ---------------------------------------------------------------- envelope


def test_envelope_constant():
    env = extract_grf_envelope(np.tile([0.0, 0.0, 50.0], (10, 1)), 0, (0, 9))
    np.testing.assert_array_equal(env.forces, np.tile([0.0, 0.0, 50.0], (6, 1)))


def test_envelope_synthetic_matches_scan():
    t = np.linspace(0, 1, 21)
    f = np.column_stack([10 * np.sin(t), 10 * np.cos(t), 50 + 10 * t])
    env = extract_grf_envelope(f, 0, (0, 20))
    expected = []
    for axis in range(3):
        col = [row[axis] for row in f]
        expected += [f[col.index(max(col))], f[col.index(min(col))]]
    np.testing.assert_array_equal(env.forces, expected)


def test_envelope_single_knot():
    f = np.arange(30.0).reshape(10, 3)
    env = extract_grf_envelope(f, 0, (4, 4))
    np.testing.assert_array_equal(env.forces, np.tile(f[4], (6, 1)))


def test_envelope_empty_window():
    with pytest.raises(PlannerParameterError):
        extract_grf_envelope(np.zeros((5, 3)), 0, (3, 2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_envelope_bounds_every_knot(seed):
    f = np.random.default_rng(seed).normal(0, 30, (40, 3))
    env = extract_grf_envelope(f, 0, (5, 30))
    seg = f[5:31]
    for axis in range(3):
        assert env.forces[2 * axis, axis] == seg[:, axis].max()
        assert env.forces[2 * axis + 1, axis] == seg[:, axis].min()


# ---------------------------------------------------------------- stride optimization


@pytest.fixture(scope="module")
def flat_plan():
    target = X0[6:12] + (0.1, 0, 0, 0, 0, 0)
    feet = FEET0 + (0.1, 0, 0)
    return feet, optimize_stride(P, X0, target, feet, [whole_plane_region()] * 4, 1)


def test_whole_plane_footholds_equal_targets(flat_plan):
    feet, plan = flat_plan
    np.testing.assert_array_equal(plan.touchdowns, feet)


def test_flat_plan_envelope_in_cone(flat_plan):
    _, plan = flat_plan
    assert envelope_in_cone(plan.envelope, tol=1e-6)
    assert np.all(plan.envelope.forces[:, 2] > 0)
    for axis in range(3):
        assert plan.envelope.forces[2 * axis, axis] >= plan.envelope.forces[2 * axis + 1, axis]


def test_flat_plan_trajectory_ends_near_target(flat_plan):
    _, plan = flat_plan
    assert plan.trajectory.X[-1, 6] == pytest.approx(X0[6] + 0.1, abs=0.02)


def test_region_excluding_target_moves_foothold():
    target_base = X0[6:12] + (0.1, 0, 0, 0, 0, 0)
    feet = FEET0 + (0.1, 0, 0)
    rf = feet[1]
    # region 4-10 cm behind the RF target
    verts = np.array([[rf[0] - 0.10, rf[1] - 0.05], [rf[0] - 0.04, rf[1] - 0.05],
                      [rf[0] - 0.04, rf[1] + 0.05], [rf[0] - 0.10, rf[1] + 0.05]])
    hs = halfspaces_from_region(ConvexRegion(verts, np.array([0.0, 0, 1]), np.zeros(3)))
    assert hs.residuals(rf).min() < 0
    regions = [whole_plane_region()] * 4
    regions[1] = hs
    plan = optimize_stride(P, X0, target_base, feet, regions, 1)
    assert hs.residuals(plan.touchdowns[1]).min() >= -2e-3
    assert plan.touchdowns[1][0] < rf[0] - 0.03


@settings(max_examples=100, deadline=None)
@given(points, st.floats(0.0, 0.01))
def test_projection_matches_clamp(p, margin):
    # axis-aligned rectangle [0, 0.2] x [-0.1, 0.1]: projection is a clamp of x and y
    verts = np.array([[0.0, -0.1], [0.2, -0.1], [0.2, 0.1], [0.0, 0.1]])
    hs = halfspaces_from_region(ConvexRegion(verts, np.array([0.0, 0, 1]), np.zeros(3)))
    q = project_into_region(p, hs, margin)
    expected = np.array([np.clip(p[0], margin, 0.2 - margin), np.clip(p[1], -0.1 + margin, 0.1 - margin), p[2]])
    np.testing.assert_allclose(q, expected, atol=1e-9)


def test_projection_whole_plane_is_identity():
    p = np.array([3.0, -2.0, 1.0])
    np.testing.assert_array_equal(project_into_region(p, whole_plane_region()), p)


# ---------------------------------------------------------------- MPC


def standing_track(t_end=3.0):
    times = np.array([0.0, t_end])
    contact = np.ones((2, N_LEGS), bool)
    u = np.zeros((2, 24))
    u[:, :12] = weight_distribution(P, contact)
    return ReferenceBundle(times, np.tile(X0, (2, 1)), u, np.tile(FEET0, (2, 1, 1)), np.zeros((2, 4, 3)), contact)


def test_mpc_horizon_intervals():
    assert len(knot_times(0.0, MpcConfig().horizon, MpcConfig().dt)) - 1 == 67


def test_mpc_equilibrium_on_flat_ground():
    mpc = MpcController(P, MpcConfig(max_iter=5))
    res = mpc.step(X0, 0.0, standing_track())
    f = res.u[:12].reshape(4, 3)
    np.testing.assert_allclose(f[:, 2], P.weight / 4, rtol=1e-3)
    np.testing.assert_allclose(f[:, :2], 0.0, atol=1e-2)
    np.testing.assert_allclose(res.u[12:], 0.0, atol=1e-4)
    assert not res.stale
    for leg in range(4):
        assert friction_cone_residual(f[leg], (0, 0, 1), 0.5) > 0
