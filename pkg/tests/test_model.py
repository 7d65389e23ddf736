import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probewalk._kernels import dynamics_kernel, feet_kernel, pack_params, rk4_kernel
from probewalk.model import (
    GRAVITY,
    N_LEGS,
    DegenerateGeometryError,
    RobotParams,
    RobotState,
    SingularityError,
    WorkspaceError,
    centroidal_dynamics,
    com_projection,
    estimate_contact_force,
    feet_kinematics,
    feet_positions,
    forward_kinematics,
    inverse_kinematics,
    leg_bias_torques,
    leg_jacobian,
    local_surface_normal,
    rotation,
    support_polygon,
    synthesize_torques,
)
from probewalk.ocp.integrate import rk4_step

P = RobotParams()


def random_config(rng):
    q_b = np.r_[rng.uniform(-0.1, 0.1, 2), rng.uniform(0.35, 0.45), rng.uniform(-0.2, 0.2, 3)]
    q_j = np.concatenate([[rng.uniform(-0.4, 0.4), rng.uniform(0.2, 1.3), rng.uniform(-2.4, -0.6)]
                          for _ in range(N_LEGS)])
    return q_b, q_j


def random_xu(rng, n=5):
    X = np.zeros((n, 24))
    U = np.zeros((n, 24))
    for k in range(n):
        q_b, q_j = random_config(rng)
        X[k] = np.r_[rng.normal(0, 1, 6), q_b, q_j]
        U[k] = np.r_[rng.normal(0, 50, 12), rng.normal(0, 1, 12)]
    return X, U


def test_default_parameters():
    assert P.leg_height == 0.40
    assert P.footpad_radius == 0.025
    assert P.mass == 21.0


def test_nominal_foot_below_hip():
    q_b = np.zeros(6)
    for leg in range(N_LEGS):
        foot = forward_kinematics(P, q_b, P.nominal_joints, leg)
        np.testing.assert_allclose(foot, P.hip_offsets[leg] + (0, 0, -0.40), atol=1e-12)


def test_base_raise_translates_feet():
    q_b = np.zeros(6)
    up = q_b + np.r_[0, 0, 0.1, 0, 0, 0]
    np.testing.assert_allclose(feet_positions(P, up, P.nominal_joints) - feet_positions(P, q_b, P.nominal_joints),
                               np.tile([0, 0, 0.1], (4, 1)), atol=1e-15)


def test_yaw_rotates_feet():
    a = feet_positions(P, np.zeros(6), P.nominal_joints)
    b = feet_positions(P, np.r_[0, 0, 0, np.pi / 2, 0, 0], P.nominal_joints)
    np.testing.assert_allclose(b[:, 0], -a[:, 1], atol=1e-12)
    np.testing.assert_allclose(b[:, 1], a[:, 0], atol=1e-12)


def test_ik_nominal_round_trip():
    for leg in range(N_LEGS):
        foot = forward_kinematics(P, np.zeros(6), P.nominal_joints, leg)
        np.testing.assert_allclose(inverse_kinematics(P, np.zeros(6), foot, leg), P.nominal_leg_angles, atol=1e-12)


def test_ik_overextension():
    with pytest.raises(WorkspaceError) as info:
        inverse_kinematics(P, np.zeros(6), P.hip_offsets[0] + (0, 0, -0.7), 0)
    assert info.value.overextended


def test_fk_ik_round_trip_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        q_b, q_j = random_config(rng)
        leg = int(rng.integers(4))
        foot = forward_kinematics(P, q_b, q_j, leg)
        q = inverse_kinematics(P, q_b, foot, leg)
        q_all = q_j.copy()
        q_all[3 * leg : 3 * leg + 3] = q
        assert np.linalg.norm(forward_kinematics(P, q_b, q_all, leg) - foot) <= 1e-9
        assert q[2] < 0  # knee bent backward


def test_jacobian_finite_difference():
    rng = np.random.default_rng(1)
    eps = 1e-7
    for _ in range(100):
        q_b, q_j = random_config(rng)
        leg = int(rng.integers(4))
        J = leg_jacobian(P, q_b, q_j, leg)
        fd = np.zeros((3, 3))
        for j in range(3):
            qp, qm = q_j.copy(), q_j.copy()
            qp[3 * leg + j] += eps
            qm[3 * leg + j] -= eps
            fd[:, j] = (forward_kinematics(P, q_b, qp, leg) - forward_kinematics(P, q_b, qm, leg)) / (2 * eps)
        assert np.max(np.abs(J - fd)) < 1e-6


def test_stretched_leg_singular():
    q_j = np.zeros(12)  # knee straight
    J = leg_jacobian(P, np.zeros(6), q_j, 0)
    assert np.linalg.matrix_rank(J, tol=1e-9) < 3
    with pytest.raises(SingularityError):
        estimate_contact_force(P, np.zeros(6), q_j[:3], np.zeros(3), np.zeros(3), 0)


def test_zero_joint_velocity_zero_foot_velocity():
    J = leg_jacobian(P, np.zeros(6), P.nominal_joints, 2)
    np.testing.assert_array_equal(J @ np.zeros(3), 0.0)


def test_gravity_compensation_gives_zero_force():
    q_b = np.zeros(6)
    q = P.nominal_leg_angles
    tau = leg_bias_torques(P, q_b, q, np.zeros(3), 1)
    np.testing.assert_allclose(estimate_contact_force(P, q_b, q, np.zeros(3), tau, 1), 0.0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_force_round_trip(seed):
    rng = np.random.default_rng(seed)
    q_b, q_j = random_config(rng)
    leg = int(rng.integers(4))
    sl = slice(3 * leg, 3 * leg + 3)
    f = np.r_[rng.uniform(-50, 50, 2), rng.uniform(0, 200)]
    tau = synthesize_torques(P, q_b, q_j[sl], np.zeros(3), f, leg)
    assert np.max(np.abs(estimate_contact_force(P, q_b, q_j[sl], np.zeros(3), tau, leg) - f)) <= 1e-6


def test_support_triangle_example():
    feet = np.array([[1, 0, 0], [9, 9, 0], [-1, 1, 0], [-1, -1, 0]], dtype=float)
    A, b = support_polygon(feet, 1)
    assert np.all(A @ np.zeros(2) + b > 0)
    assert np.isclose(A @ np.array([1.0, 0.0]) + b, 0.0).any()


def test_support_collinear():
    feet = np.array([[0, 0, 0], [9, 9, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    with pytest.raises(DegenerateGeometryError):
        support_polygon(feet, 1)


def barycentric_inside(tri, r):
    a, b, c = tri
    m = np.column_stack([b - a, c - a])
    l1, l2 = np.linalg.solve(m, r - a)
    return l1 >= 0 and l2 >= 0 and l1 + l2 <= 1


def test_support_membership_vs_barycentric():
    rng = np.random.default_rng(5)
    agree = 0
    for _ in range(1000):
        feet = np.c_[rng.uniform(-1, 1, (4, 2)), np.zeros(4)]
        leg = int(rng.integers(4))
        tri = feet[[j for j in range(4) if j != leg], :2]
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        if abs(e1[0] * e2[1] - e1[1] * e2[0]) < 1e-3:
            continue
        r = rng.uniform(-1, 1, 2)
        A, b = support_polygon(feet, leg)
        res = A @ r + b
        if np.min(np.abs(res)) < 1e-9:
            continue
        assert bool(np.all(res >= 0)) == barycentric_inside(tri, r)
        agree += 1
    assert agree > 900


def test_com_projection():
    s = RobotState.nominal(P)
    np.testing.assert_allclose(com_projection(P, s), (0.0, 0.0))
    s.q_b[0] += 0.05
    np.testing.assert_allclose(com_projection(P, s), (0.05, 0.0))


def test_com_projection_mass_sum():
    # lumped model: all mass sits at the base origin
    rng = np.random.default_rng(3)
    q_b, q_j = random_config(rng)
    s = RobotState(np.zeros(6), q_b, q_j)
    masses = np.array([P.mass])
    bodies = np.array([q_b[:2]])
    np.testing.assert_allclose(com_projection(P, s), (masses @ bodies) / masses.sum(), atol=1e-12)


def test_normal_horizontal():
    pts = np.array([[0, 0, 0.2], [1, 0, 0.2], [0, 1, 0.2], [1, 1, 0.2]])
    np.testing.assert_allclose(local_surface_normal(pts), (0, 0, 1), atol=1e-12)


def test_normal_inclined():
    t = np.tan(np.radians(10))
    pts = np.array([[x, y, x * t] for x, y in [(0, 0), (1, 0), (0, 1), (0.5, -0.3)]])
    want = (-np.sin(np.radians(10)), 0, np.cos(np.radians(10)))
    np.testing.assert_allclose(local_surface_normal(pts), want, atol=1e-9)


def test_normal_noisy_vs_svd():
    rng = np.random.default_rng(9)
    pts = np.c_[rng.uniform(-1, 1, (4, 2)), rng.normal(0, 0.01, 4)]
    c = pts - pts.mean(0)
    n = np.linalg.svd(c)[2][-1]
    n = n if n[2] > 0 else -n
    np.testing.assert_allclose(local_surface_normal(pts), n, atol=1e-9)


def test_normal_collinear():
    with pytest.raises(DegenerateGeometryError):
        local_surface_normal(np.array([[0, 0, 0], [1, 1, 0], [2, 2, 0]], dtype=float))


def test_free_fall():
    x = RobotState.nominal(P).to_vector()
    xdot = centroidal_dynamics(P, x, np.zeros(24))
    np.testing.assert_allclose(xdot[0:3], P.mass * GRAVITY)
    np.testing.assert_allclose(xdot[3:6], 0.0)


def test_symmetric_support_balances():
    x = RobotState.nominal(P).to_vector()
    u = np.zeros(24)
    u[2:12:3] = P.mass * 9.81 / 4
    xdot = centroidal_dynamics(P, x, u)
    np.testing.assert_allclose(xdot[0:6], 0.0, atol=1e-12)


def test_dynamics_jacobians_finite_difference():
    rng = np.random.default_rng(11)
    X, U = random_xu(rng, 3)
    for x, u in zip(X, U):
        _, A, B = centroidal_dynamics(P, x, u, derivatives=True)
        eps = 1e-6
        for j in range(24):
            e = np.zeros(24)
            e[j] = eps
            fa = (centroidal_dynamics(P, x + e, u) - centroidal_dynamics(P, x - e, u)) / (2 * eps)
            fb = (centroidal_dynamics(P, x, u + e) - centroidal_dynamics(P, x, u - e)) / (2 * eps)
            np.testing.assert_allclose(A[:, j], fa, rtol=1e-5, atol=1e-5)
            np.testing.assert_allclose(B[:, j], fb, rtol=1e-5, atol=1e-5)


def test_angular_momentum_conserved_in_flight():
    # gravity acts at the CoM, so without contacts the angular momentum has no wrench
    x = RobotState.nominal(P).to_vector()
    x[0:6] = (0.3, -0.1, 0.05, 0.02, 0.01, -0.03)
    f = lambda X, U, d: centroidal_dynamics(P, X, U, d)
    h = x[None].copy()
    for _ in range(50):
        prev = h.copy()
        h = rk4_step(f, h, np.zeros((1, 24)), 0.004)
        assert np.max(np.abs(h[0, 3:6] - prev[0, 3:6])) <= 1e-9


def test_rotation_is_orthonormal():
    R = rotation(np.array([0.3, -0.2, 0.1]))
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-14)


def test_robot_file(tmp_path):
    path = tmp_path / "r.ini"
    path.write_text("[robot]\nmass = 30\nhip_offsets = 0.3 0.1 0, 0.3 -0.1 0, -0.3 0.1 0, -0.3 -0.1 0\n")
    p = RobotParams.from_file(path)
    assert p.mass == 30.0
    np.testing.assert_allclose(p.hip_offsets[3], (-0.3, -0.1, 0))
    path.write_text("[robot]\nwheels = 4\n")
    with pytest.raises(ValueError):
        RobotParams.from_file(path)


# compiled kernels against the numpy reference


def test_feet_kernel_matches_numpy():
    rng = np.random.default_rng(21)
    X, U = random_xu(rng, 6)
    ref = feet_kinematics(P, X, U)
    p, v, dp, dvx, dvu = feet_kernel(X, U, pack_params(P), True, True)
    np.testing.assert_allclose(p, ref["p"], atol=1e-12)
    np.testing.assert_allclose(v, ref["v"], atol=1e-11)
    np.testing.assert_allclose(dp, ref["dp_dx"], atol=1e-11)
    np.testing.assert_allclose(dvx, ref["dv_dx"], atol=1e-10)
    np.testing.assert_allclose(dvu, ref["dv_du"], atol=1e-11)


def test_dynamics_kernel_matches_numpy():
    rng = np.random.default_rng(22)
    X, U = random_xu(rng, 6)
    xdot, A, B = centroidal_dynamics(P, X, U, derivatives=True)
    kx, kA, kB = dynamics_kernel(X, U, pack_params(P), True)
    np.testing.assert_allclose(kx, xdot, rtol=1e-12, atol=1e-10)
    np.testing.assert_allclose(kA, A, rtol=1e-12, atol=1e-10)
    np.testing.assert_allclose(kB, B, rtol=1e-12, atol=1e-10)


def test_rk4_kernel_matches_numpy():
    rng = np.random.default_rng(23)
    X, U = random_xu(rng, 4)
    h = np.full(4, 0.015)
    f = lambda x, u, d: centroidal_dynamics(P, x, u, d)
    xn, Px, Pu = rk4_step(f, X, U, h, derivatives=True)
    kx, kPx, kPu = rk4_kernel(X, U, h, pack_params(P), True)
    np.testing.assert_allclose(kx, xn, rtol=1e-12, atol=1e-10)
    np.testing.assert_allclose(kPx, Px, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(kPu, Pu, rtol=1e-10, atol=1e-10)
