import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probewalk.model import RobotParams, RobotState, feet_kinematics
from probewalk.ocp import (
    TABLE_I,
    AssemblyError,
    BarrierParams,
    OcpProblem,
    References,
    ScheduleError,
    Weights,
    barrier_derivatives,
    dense_kkt_solve,
    foot_placement_residuals,
    friction_cone_residual,
    knot_times,
    linearize,
    mode_constraints,
    probing_force_residual,
    relaxed_log_barrier,
    riccati_solve,
    rk4_step,
    solve_sqp,
    stage_cost,
    support_polygon_residuals,
    transcribe,
)
from probewalk.vfa import HalfSpaces, whole_plane_region

PARAMS = RobotParams()


# ------------------------------------------------------------------ barriers


def test_table_values_load_exactly():
    expected = {
        "friction_cone": (10.0, 0.1),
        "foot_placement": (0.1, 0.005),
        "joint_position": (0.1, 0.01),
        "joint_velocity": (0.1, 0.1),
        "contact_force": (1.0, 0.5),
        "support_polygon": (100.0, 0.02),
        "probing_force": (0.7, 0.7),
    }
    assert {k: (v.mu, v.delta) for k, v in TABLE_I.items()} == expected


def test_barrier_zero_at_one():
    assert relaxed_log_barrier(1.0, BarrierParams(3.0, 0.1)) == 0.0


def test_barrier_junction_value():
    bp = BarrierParams(10.0, 0.1)
    log_branch = -10.0 * np.log(0.1)
    quad_branch = 10.0 * (0.5 * ((0.1 - 0.2) / 0.1) ** 2 - 0.5 - np.log(0.1))
    assert relaxed_log_barrier(0.1, bp) == pytest.approx(23.0259, abs=1e-4)
    assert log_branch == pytest.approx(quad_branch, abs=1e-12)


def test_barrier_finite_when_violated():
    value = relaxed_log_barrier(-0.05, TABLE_I["support_polygon"])
    expected = 100.0 * (0.5 * ((-0.05 - 0.04) / 0.02) ** 2 - 0.5 - np.log(0.02))
    assert np.isfinite(value)
    assert value == pytest.approx(expected)


@pytest.mark.parametrize("name", sorted(TABLE_I))
def test_barrier_c2_at_junction(name):
    bp = TABLE_I[name]
    eps = 1e-10 * bp.delta
    lo = barrier_derivatives(bp.delta - eps, bp.mu, bp.delta)
    hi = barrier_derivatives(bp.delta + eps, bp.mu, bp.delta)
    scale = bp.mu / bp.delta**2
    for a, b in zip(lo, hi):
        assert abs(a - b) <= 1e-6 * max(1.0, scale)
    # derivatives agree with finite differences on both sides
    for h in (0.5 * bp.delta, 2.0 * bp.delta):
        f0, d1, d2 = barrier_derivatives(h, bp.mu, bp.delta)
        fp, d1p, _ = barrier_derivatives(h + 1e-6, bp.mu, bp.delta)
        fm, d1m, _ = barrier_derivatives(h - 1e-6, bp.mu, bp.delta)
        np.testing.assert_allclose((fp - fm) / 2e-6, d1, rtol=1e-6)
        np.testing.assert_allclose((d1p - d1m) / 2e-6, d2, rtol=1e-5)


@given(st.floats(-10, 10, allow_nan=False))
def test_barrier_finite_everywhere(h):
    assert np.isfinite(relaxed_log_barrier(h, TABLE_I["friction_cone"]))


def test_barrier_params_positive():
    with pytest.raises(ValueError):
        BarrierParams(0.0, 0.1)


# ------------------------------------------------------------------ residuals


@pytest.mark.parametrize(
    "f, expected", [((0, 0, 10), 5.0), ((5, 0, 10), 0.0), ((0, 0, -1), -0.5)]
)
def test_friction_cone_residual(f, expected):
    assert friction_cone_residual(f, [0, 0, 1], 0.5) == pytest.approx(expected)


def _unit_square():
    A = np.array([[1.0, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]])
    return HalfSpaces(-A, np.full(4, 0.5))


def test_foot_placement_residuals():
    hs = _unit_square()
    np.testing.assert_allclose(foot_placement_residuals([0, 0, 0], hs), 0.5)
    assert np.isclose(foot_placement_residuals([0.5, 0.5, 0], hs).min(), 0.0)
    assert foot_placement_residuals([1, 0, 0], hs).min() < 0
    assert foot_placement_residuals([7, -3, 2], whole_plane_region()).min() >= 0


def test_support_polygon_residuals_equilateral():
    r = 0.3
    normals = np.array([[np.cos(a), np.sin(a)] for a in (np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3)])
    A_s, b_s = -normals, np.full(3, r)
    np.testing.assert_allclose(support_polygon_residuals([0, 0], A_s, b_s, 0.0), 0.3)
    np.testing.assert_allclose(support_polygon_residuals([0, 0], A_s, b_s, 0.3), 0.0, atol=1e-15)
    h = support_polygon_residuals(r * normals[0], A_s, b_s, 0.0)
    assert np.isclose(h.min(), 0.0)


def test_probing_force_residual():
    np.testing.assert_array_equal(probing_force_residual([0, 0, 60], [0, 0, 80]), [0, 0, -20])
    np.testing.assert_array_equal(probing_force_residual([1, 2, 3], [1, 2, 3]), 0)
    with pytest.raises(ScheduleError):
        probing_force_residual([0, 0, 1], [0, 0, 1], in_contact=False)


def test_mode_constraint_counts():
    all_stance = mode_constraints([True] * 4)
    assert all_stance.n_equalities == 12 and len(all_stance.cone_legs) == 4
    one_swing = mode_constraints([True, False, True, True])
    assert one_swing.zero_force_rows == (1,) and one_swing.normal_velocity_rows == (1,)
    assert one_swing.n_equalities == 9 + 3 + 1


# ------------------------------------------------------------------ stage cost


def _refs():
    x = RobotState.nominal(PARAMS).to_vector()
    p = feet_kinematics(PARAMS, x[None])["p"][0]
    return References(x, np.zeros(24), p, np.zeros((4, 3)))


def test_stage_cost_zero_on_reference():
    r = _refs()
    assert stage_cost(r.x, r.u, r.p, r.v, r, Weights()) == 0.0


def test_stage_cost_unit_deviation():
    r = _refs()
    Q = np.zeros(24)
    Q[7] = 2.0
    x = r.x.copy()
    x[7] += 1.0
    assert stage_cost(x, r.u, r.p, r.v, r, Weights(Q=Q, W_p=0.0)) == pytest.approx(1.0)


def test_stage_cost_barrier_at_one_is_neutral():
    r = _refs()
    x = r.x + 0.01
    base = stage_cost(x, r.u, r.p, r.v, r, Weights())
    withb = stage_cost(x, r.u, r.p, r.v, r, Weights(), barriers=[(1.0, TABLE_I["friction_cone"])])
    assert withb == base


# ------------------------------------------------------------------ transcription


def test_knot_counts():
    assert len(knot_times(0.0, 1.0, 0.015)) - 1 == 67
    assert len(knot_times(0.0, 4.0, 0.05)) - 1 == 80


def test_zero_horizon_rejected():
    with pytest.raises(AssemblyError):
        knot_times(1.0, 1.0, 0.015)


def _standing_problem(n_int=1, dt=0.015, **kw):
    x0 = RobotState.nominal(PARAMS).to_vector()
    times = knot_times(0.0, n_int * dt, dt)
    n = len(times)
    u_ref = np.zeros((n, 24))
    u_ref[:, 2:12:3] = PARAMS.weight / 4
    feet = feet_kinematics(PARAMS, x0[None])["p"][0]
    defaults = dict(
        params=PARAMS, x_init=x0, times=times, contact=np.ones((n, 4), bool), x_ref=np.tile(x0, (n, 1)),
        u_ref=u_ref, p_ref=np.tile(feet, (n, 1, 1)), v_ref=np.zeros((n, 4, 3)),
    )
    defaults.update(kw)
    return OcpProblem(**defaults)


def test_inconsistent_schedule_rejected():
    pb = _standing_problem(3)
    pb.contact = pb.contact[:-1]
    with pytest.raises(AssemblyError):
        transcribe(pb)


def test_probing_on_swing_leg_rejected():
    pb = _standing_problem(3)
    n = len(pb.times)
    pb.contact[:, 1] = False
    pb.probing_force, pb.probing_leg = True, 1
    pb.f_p, pb.probing_mask = np.zeros((n, 3)), np.ones(n, bool)
    with pytest.raises(ScheduleError):
        transcribe(pb)


def test_stance_feet_stationary_when_equalities_hold():
    pb = _standing_problem(1)
    nlp = transcribe(pb)
    X, U = nlp.initial_guess()
    e = nlp.equalities(X, U)[0]
    np.testing.assert_allclose(e, 0.0, atol=1e-12)
    x1 = nlp.dynamics(X[:1], U)[0]
    p0 = feet_kinematics(PARAMS, X[:1])["p"][0]
    p1 = feet_kinematics(PARAMS, x1[None])["p"][0]
    np.testing.assert_allclose(p1, p0, atol=1e-8)


def test_stance_drift_is_second_order():
    # velocity rows hold at the knot; away from equilibrium the foot drifts by O(dt^2)
    pb = _standing_problem(1)
    nlp = transcribe(pb)
    X, U = nlp.initial_guess()
    U[0, 2:12:3] *= 1.5
    drift = []
    for dt in (0.01, 0.005):
        x1 = rk4_step(nlp._f, X[:1], U[:1], dt)
        drift.append(np.abs(feet_kinematics(PARAMS, x1)["p"][0] - feet_kinematics(PARAMS, X[:1])["p"][0]).max())
    assert drift[1] == pytest.approx(drift[0] / 4, rel=1e-2)


# ------------------------------------------------------------------ SQP


def test_weight_distributes_equally():
    pb = _standing_problem(1, friction=False, force_limits=False, joint_limits=False)
    nlp = transcribe(pb)
    X, U = nlp.initial_guess()
    U[0, :12] = np.random.default_rng(0).normal(0.0, 10.0, 12)
    traj = solve_sqp(nlp, X, U, max_iter=30, tol=1e-10)
    forces = traj.U[0, :12].reshape(4, 3)
    np.testing.assert_allclose(forces, np.tile([0.0, 0.0, PARAMS.weight / 4], (4, 1)), atol=1e-6)


def test_warm_start_at_optimum_is_fixed_point():
    pb = _standing_problem(1, friction=False, force_limits=False, joint_limits=False)
    nlp = transcribe(pb)
    first = solve_sqp(nlp, max_iter=30, tol=1e-10)
    again = solve_sqp(nlp, first.X, first.U, max_iter=5, tol=1e-8)
    assert again.iterations == 1 and again.converged
    np.testing.assert_allclose(again.X, first.X, atol=1e-8)


def test_merit_non_increasing():
    pb = _standing_problem(20)
    pb.x_ref[:, 6] += np.linspace(0.0, 0.05, len(pb.times))
    nlp = transcribe(pb)
    X, U = nlp.initial_guess()
    X[:, 8] += 0.01
    traj = solve_sqp(nlp, X, U, max_iter=30)
    assert traj.converged
    assert np.all(np.diff(traj.merit_history) <= 1e-9 * np.abs(traj.merit_history[:-1]))
    assert traj.residuals["max_defect"] <= 1e-6 and traj.residuals["max_equality"] <= 1e-6
    assert all(h > 0 for h in traj.residuals["barrier_min"].values())


def test_riccati_matches_dense_kkt():
    pb = _standing_problem(6)
    pb.contact[2:5, 0] = False
    pb.u_ref[2:5, 0:3] = 0.0
    nlp = transcribe(pb)
    rng = np.random.default_rng(3)
    X, U = nlp.initial_guess()
    X = X + rng.normal(0, 1e-3, X.shape)
    U = U + rng.normal(0, 1.0, U.shape)
    lq, _ = linearize(nlp, X, U)
    dX1, dU1 = riccati_solve(lq, reg=0.0)
    dX2, dU2 = dense_kkt_solve(lq)
    np.testing.assert_allclose(dX1, dX2, atol=1e-7)
    np.testing.assert_allclose(dU1, dU2, atol=1e-6)


def test_cost_gradient_matches_finite_differences():
    pb = _standing_problem(5)
    pb.contact[1:4, 2] = False
    pb.v_ref[1:4, 2, 2] = 0.1
    nlp = transcribe(pb)
    rng = np.random.default_rng(7)
    X, U = nlp.initial_guess()
    X = X + rng.normal(0, 1e-2, X.shape)
    U = U + rng.normal(0, 2.0, U.shape)
    gx, gu = nlp.gradient(X, U)
    for _ in range(25):
        if rng.random() < 0.5:
            k, j, eps = rng.integers(len(X)), rng.integers(24), 1e-6
            Xp, Xm = X.copy(), X.copy()
            Xp[k, j] += eps
            Xm[k, j] -= eps
            fd, an = (nlp.cost(Xp, U) - nlp.cost(Xm, U)) / (2 * eps), gx[k, j]
        else:
            k, j, eps = rng.integers(len(U)), rng.integers(24), 1e-5
            Up, Um = U.copy(), U.copy()
            Up[k, j] += eps
            Um[k, j] -= eps
            fd, an = (nlp.cost(X, Up) - nlp.cost(X, Um)) / (2 * eps), gu[k, j]
        assert abs(fd - an) <= 1e-5 * max(1.0, abs(an))


class DoubleIntegrator:
    """Scalar double integrator with quadratic cost, in the NLP protocol."""

    def __init__(self, N=30, dt=0.1, x0=(1.0, 0.0), q=(1.0, 0.5), rho=0.1):
        self.N, self.nx, self.nu = N, 2, 1
        self.times = dt * np.arange(N + 1)
        self.dt = dt
        self.x_init = np.array(x0)
        self.Qd = np.diag(q)
        self.rho = rho

    @staticmethod
    def _f(x, u, derivatives):
        xdot = np.stack([x[:, 1], u[:, 0]], axis=1)
        if not derivatives:
            return xdot
        n = len(x)
        A = np.broadcast_to(np.array([[0.0, 1.0], [0.0, 0.0]]), (n, 2, 2)).copy()
        B = np.broadcast_to(np.array([[0.0], [1.0]]), (n, 2, 1)).copy()
        return xdot, A, B

    def dynamics(self, X, U, derivatives=False):
        return rk4_step(self._f, X, U, self.dt, derivatives)

    def initial_guess(self):
        return np.tile(self.x_init, (self.N + 1, 1)), np.zeros((self.N, 1))

    def cost(self, X, U):
        return 0.5 * np.einsum("ni,ij,nj->", X, self.Qd, X) + 0.5 * self.rho * np.sum(U * U)

    def cost_expansion(self, X, U):
        N = self.N
        Q = np.broadcast_to(self.Qd, (N + 1, 2, 2)).copy()
        R = np.full((N, 1, 1), self.rho)
        return self.cost(X, U), Q, np.zeros((N, 1, 2)), R, X @ self.Qd, self.rho * U

    def equalities(self, X, U, derivatives=False):
        if derivatives:
            return [None] * self.N, [None] * self.N, [None] * self.N
        return [None] * self.N


def _condensed_optimum(di: DoubleIntegrator):
    """Batch least squares over inputs with the exact discrete transition."""
    h = di.dt
    Ad = np.array([[1.0, h], [0.0, 1.0]])
    Bd = np.array([[0.5 * h * h], [h]])
    N = di.N
    # x_k = Ad^k x0 + sum_j Ad^(k-1-j) Bd u_j
    Phi = np.zeros((N + 1, 2, 2))
    Gam = np.zeros((N + 1, 2, N))
    Phi[0] = np.eye(2)
    for k in range(1, N + 1):
        Phi[k] = Ad @ Phi[k - 1]
        Gam[k] = Ad @ Gam[k - 1]
        Gam[k][:, k - 1] = Bd[:, 0]
    L = np.linalg.cholesky(di.Qd)
    rows = [L.T @ Gam[k] for k in range(N + 1)]
    rhs = [-L.T @ Phi[k] @ di.x_init for k in range(N + 1)]
    M = np.vstack(rows + [np.sqrt(di.rho) * np.eye(N)])
    y = np.concatenate(rhs + [np.zeros(N)])
    u = np.linalg.lstsq(M, y, rcond=None)[0]
    X = np.array([Phi[k] @ di.x_init + Gam[k] @ u for k in range(N + 1)])
    return X, u[:, None]


@pytest.mark.parametrize("x0", [(1.0, 0.0), (-0.3, 2.0)])
def test_double_integrator_matches_condensed_optimum(x0):
    di = DoubleIntegrator(x0=x0)
    traj = solve_sqp(di, max_iter=10, tol=1e-12)
    X_ref, U_ref = _condensed_optimum(di)
    np.testing.assert_allclose(traj.X, X_ref, atol=1e-6)
    np.testing.assert_allclose(traj.U, U_ref, atol=1e-6)


def test_double_integrator_dense_solver_agrees():
    di = DoubleIntegrator(N=12)
    a = solve_sqp(di, max_iter=5, tol=1e-12)
    b = solve_sqp(di, max_iter=5, tol=1e-12, qp_solver=dense_kkt_solve)
    np.testing.assert_allclose(a.U, b.U, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(-2, 2))
def test_rk4_exact_for_double_integrator(h, u):
    x = np.array([[0.3, -0.2]])
    xn = rk4_step(DoubleIntegrator._f, x, np.array([[u]]), h)
    np.testing.assert_allclose(xn[0], [0.3 - 0.2 * h + 0.5 * u * h * h, -0.2 + u * h], atol=1e-12)


def test_rk4_sensitivities_match_finite_differences():
    pb = _standing_problem(2)
    nlp = transcribe(pb)
    rng = np.random.default_rng(1)
    X, U = nlp.initial_guess()
    x, u = X[:1] + rng.normal(0, 0.05, (1, 24)), U[:1] + rng.normal(0, 5, (1, 24))
    step = lambda x, u, d=False: rk4_step(nlp._f, x, u, 0.015, d)  # noqa: E731
    _, Px, Pu = step(x, u, True)
    eps = 1e-6
    for j in range(24):
        dx = np.zeros((1, 24))
        dx[0, j] = eps
        fd = (step(x + dx, u)[0] - step(x - dx, u)[0]) / (2 * eps)
        np.testing.assert_allclose(Px[0][:, j], fd, atol=1e-6)
        fd = (step(x, u + dx)[0] - step(x, u - dx)[0]) / (2 * eps)
        np.testing.assert_allclose(Pu[0][:, j], fd, atol=1e-6)


def test_solver_failure_is_reported_not_raised():
    class Duplicated(type(transcribe(_standing_problem(2)))):
        def packed_equalities(self, X, U, derivatives=False):
            C, D, e, m = super().packed_equalities(X, U, derivatives)
            # standing: 12 rows used of 13, so the spare slot repeats row 0
            for arr in (C, D, e):
                arr[:, 12] = arr[:, 0]
            return C, D, e, m + 1

    nlp = Duplicated(_standing_problem(2))
    X, U = nlp.initial_guess()
    traj = solve_sqp(nlp, X, U, max_iter=3)
    assert traj.failed and traj.status.startswith("solver failure")
    np.testing.assert_array_equal(traj.X, X)
