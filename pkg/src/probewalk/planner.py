"""Crawl references, full-stride trajectory optimization and the receding-horizon MPC."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from probewalk.model import (
    EUL,
    N_LEGS,
    POS,
    QJ,
    RobotParams,
    WorkspaceError,
    feet_kinematics,
    inverse_kinematics_batch,
    leg_index,
)
from probewalk.ocp import (
    TABLE_I,
    OcpProblem,
    Trajectory,
    Weights,
    friction_cone_residual,
    knot_times,
    solve_sqp,
    transcribe,
)

log = logging.getLogger(__name__)

# swing order continues diagonally, then along the same side: RF, LH, LF, RH, RF, ...
CRAWL_CYCLE = (1, 2, 0, 3)


class PlannerParameterError(ValueError):
    pass


class PlanningError(RuntimeError):
    pass


# ---------------------------------------------------------------- gait


@dataclass(frozen=True)
class GaitSchedule:
    """One crawl stride: each phase is a four-leg base shift followed by one swing."""

    sequence: tuple
    phase_duration: float = 1.0
    shift_duration: float = 0.25
    t0: float = 0.0
    lead_shift: float | None = None  # shift before the first swing, if different

    @property
    def stride(self) -> float:
        return self.phase_duration * len(self.sequence)

    @property
    def phase_durations(self) -> tuple:
        return (self.phase_duration,) * len(self.sequence)

    def swing_window(self, leg) -> tuple[float, float]:
        k = self.sequence.index(leg_index(leg))
        start = self.t0 + k * self.phase_duration
        shift = self.lead_shift if (k == 0 and self.lead_shift is not None) else self.shift_duration
        return start + shift, start + self.phase_duration

    def swing_leg(self, t: float):
        for leg in self.sequence:
            a, b = self.swing_window(leg)
            if a <= t < b:
                return leg
        return None

    def contact(self, t: float) -> np.ndarray:
        out = np.ones(N_LEGS, bool)
        leg = self.swing_leg(t)
        if leg is not None:
            out[leg] = False
        return out

    def contact_at(self, times) -> np.ndarray:
        return np.array([self.contact(t) for t in np.atleast_1d(times)])


def crawl_schedule(probing_leg, stride: float = 4.0, shift_fraction: float = 0.25, t0: float = 0.0,
                   lead_shift: float | None = None) -> GaitSchedule:
    i = leg_index(probing_leg)
    k = CRAWL_CYCLE.index(i)
    seq = CRAWL_CYCLE[k:] + CRAWL_CYCLE[:k]
    phase = stride / len(seq)
    if lead_shift is not None and not 0.0 <= lead_shift < phase:
        raise PlannerParameterError("lead shift must lie within the first phase")
    return GaitSchedule(seq, phase, shift_fraction * phase, t0, lead_shift)


# ---------------------------------------------------------------- swing splines


def _quintic(p0, v0, a0, p1, v1, a1, T):
    """Coefficients c[0..5] (per axis, shape (6, d)) of a quintic on [0, T]."""
    M = np.array(
        [
            [1, 0, 0, 0, 0, 0],
            [0, 1, 0, 0, 0, 0],
            [0, 0, 2, 0, 0, 0],
            [1, T, T**2, T**3, T**4, T**5],
            [0, 1, 2 * T, 3 * T**2, 4 * T**3, 5 * T**4],
            [0, 0, 2, 6 * T, 12 * T**2, 20 * T**3],
        ]
    )
    return np.linalg.solve(M, np.vstack([p0, v0, a0, p1, v1, a1]))


def _poly(c, t, order):
    t = np.asarray(t, dtype=float)[..., None]
    if order == 0:
        powers = [t**k for k in range(6)]
        return sum(c[k] * powers[k] for k in range(6))
    if order == 1:
        return sum(k * c[k] * t ** (k - 1) for k in range(1, 6))
    return sum(k * (k - 1) * c[k] * t ** (k - 2) for k in range(2, 6))


@dataclass(frozen=True)
class SwingParams:
    step_height: float = 0.08
    liftoff_velocity: float = 0.1
    touchdown_velocity: float = -0.1


@dataclass
class SwingSpline:
    p0: np.ndarray
    p1: np.ndarray
    duration: float
    params: SwingParams = SwingParams()

    def __post_init__(self):
        if not self.duration > 0:
            raise PlannerParameterError("swing duration must be positive")
        self.p0 = np.asarray(self.p0, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)
        T = 0.5 * self.duration
        delta = self.p1 - self.p0
        apex = 0.5 * (self.p0 + self.p1)
        apex[2] = max(self.p0[2], self.p1[2]) + self.params.step_height
        # apex speed of a rest-to-rest minimum-jerk profile over the full swing
        v_apex = 1.875 * delta / self.duration
        v_apex[2] = 0.0
        zero = np.zeros(3)
        v0 = np.array([0.0, 0.0, self.params.liftoff_velocity])
        v1 = np.array([0.0, 0.0, self.params.touchdown_velocity])
        self._c1 = _quintic(self.p0, v0, zero, apex, v_apex, zero, T)
        self._c2 = _quintic(apex, v_apex, zero, self.p1, v1, zero, T)
        self.apex = apex

    def _eval(self, t, order):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        T = 0.5 * self.duration
        first = _poly(self._c1, t, order)
        second = _poly(self._c2, t - T, order)
        return np.where((t <= T)[..., None], first, second)

    def position(self, t):
        return self._eval(t, 0)

    def velocity(self, t):
        return self._eval(t, 1)

    def acceleration(self, t):
        return self._eval(t, 2)


def swing_reference(p0, p1, params: SwingParams = SwingParams(), duration: float = 0.75) -> SwingSpline:
    return SwingSpline(p0, p1, duration, params)


# ---------------------------------------------------------------- references


@dataclass
class ReferenceBundle:
    """Knot-sampled references; also usable as a track sampled at other times."""

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    v: np.ndarray
    contact: np.ndarray

    def sample(self, times) -> "ReferenceBundle":
        times = np.asarray(times, dtype=float)
        t = np.clip(times, self.times[0], self.times[-1])
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)
        nxt = np.minimum(idx + 1, len(self.times) - 1)
        span = self.times[nxt] - self.times[idx]
        w = np.where(span > 0, (t - self.times[idx]) / np.where(span > 0, span, 1.0), 0.0)

        def lerp(a):
            shape = (-1,) + (1,) * (a.ndim - 1)
            return (1 - w).reshape(shape) * a[idx] + w.reshape(shape) * a[nxt]

        return ReferenceBundle(times, lerp(self.x), lerp(self.u), lerp(self.p), lerp(self.v), self.contact[idx])

    def then_hold(self, t_end: float) -> "ReferenceBundle":
        """Extend with the final sample held until ``t_end``."""
        if t_end <= self.times[-1]:
            return self
        last = self.sample([self.times[-1]])
        last.v[:] = 0.0
        last.u[:, 12:] = 0.0
        return concatenate_tracks(self, replace(last, times=np.array([t_end])))


def concatenate_tracks(a: ReferenceBundle, b: ReferenceBundle) -> ReferenceBundle:
    keep = a.times < b.times[0]
    return ReferenceBundle(
        np.concatenate([a.times[keep], b.times]),
        np.concatenate([a.x[keep], b.x]),
        np.concatenate([a.u[keep], b.u]),
        np.concatenate([a.p[keep], b.p]),
        np.concatenate([a.v[keep], b.v]),
        np.concatenate([a.contact[keep], b.contact]),
    )


def weight_distribution(params: RobotParams, contact) -> np.ndarray:
    """Vertical force reference mg/#stance on stance legs, shape (..., 12)."""
    contact = np.asarray(contact, bool)
    n_stance = np.maximum(contact.sum(axis=-1, keepdims=True), 1)
    fz = params.weight * contact / n_stance
    forces = np.zeros(contact.shape + (3,))
    forces[..., 2] = fz
    return forces.reshape(contact.shape[:-1] + (12,))


def feet_track(schedule: GaitSchedule, feet_start, touchdowns, times, swing: SwingParams = SwingParams()):
    """Foot positions/velocities along the schedule; returns (p, v, splines)."""
    feet_start = np.asarray(feet_start, dtype=float)
    touchdowns = np.asarray(touchdowns, dtype=float)
    times = np.asarray(times, dtype=float)
    p = np.repeat(feet_start[None], len(times), axis=0)
    v = np.zeros_like(p)
    splines = {}
    for leg in schedule.sequence:
        a, b = schedule.swing_window(leg)
        spline = SwingSpline(feet_start[leg], touchdowns[leg], b - a, swing)
        splines[leg] = spline
        during = (times >= a) & (times < b)
        after = times >= b
        p[during, leg] = spline.position(times[during] - a)
        v[during, leg] = spline.velocity(times[during] - a)
        p[after, leg] = touchdowns[leg]
    return p, v, splines


def joint_references(params: RobotParams, times, base, feet) -> np.ndarray:
    """IK along base (n, 6) and feet (n, 4, 3); names the first failing time/leg."""
    try:
        return inverse_kinematics_batch(params, base[:, :3], base[:, 3:], feet)
    except WorkspaceError:
        for k, t in enumerate(times):
            for leg in range(N_LEGS):
                try:
                    inverse_kinematics_batch(params, base[k : k + 1, :3], base[k : k + 1, 3:], feet[k : k + 1])
                except WorkspaceError as exc:
                    raise WorkspaceError(
                        f"IK failed at t={t:.3f}s for leg {leg}: {exc}", exc.overextended
                    ) from exc
        raise


def make_references(params: RobotParams, x0, base_target, touchdowns, schedule: GaitSchedule, times=None,
                    feet_start=None, swing: SwingParams = SwingParams()) -> ReferenceBundle:
    """Linear base interpolation, zero momentum, equal weight split and IK joints."""
    x0 = np.asarray(x0, dtype=float)
    base_target = np.asarray(base_target, dtype=float)
    if base_target.shape != (6,) or x0.shape != (24,):
        raise PlannerParameterError("base target must be a 6-vector and x0 a 24-vector")
    if times is None:
        times = knot_times(schedule.t0, schedule.t0 + schedule.stride, 0.05)
    times = np.asarray(times, dtype=float)
    if feet_start is None:
        feet_start = feet_kinematics(params, x0[None], derivatives=False)["p"][0]
    s = np.clip((times - schedule.t0) / schedule.stride, 0.0, 1.0)[:, None]
    base0 = x0[6:12]
    base = (1 - s) * base0 + s * base_target
    p, v, _ = feet_track(schedule, feet_start, touchdowns, times, swing)
    contact = schedule.contact_at(times)
    n = len(times)
    x = np.zeros((n, 24))
    x[:, 6:12] = base
    x[:, QJ] = joint_references(params, times, base, p)
    u = np.zeros((n, 24))
    u[:, :12] = weight_distribution(params, contact)
    if n > 1:
        u[:, 12:] = np.gradient(x[:, QJ], times, axis=0)
    return ReferenceBundle(times, x, u, p, v, contact)


# ---------------------------------------------------------------- stride optimization


@dataclass
class GrfEnvelope:
    forces: np.ndarray  # (6, 3): argmax x, argmin x, argmax y, argmin y, argmax z, argmin z
    foothold: np.ndarray
    labels: tuple = ("max_x", "min_x", "max_y", "min_y", "max_z", "min_z")

    def max_normal(self, normal=(0.0, 0.0, 1.0)) -> np.ndarray:
        return self.forces[int(np.argmax(self.forces @ np.asarray(normal)))]


def extract_grf_envelope(traj, leg, window, foothold=None) -> GrfEnvelope:
    """Per-axis extreme force vectors of ``leg`` over knots window[0]..window[1] inclusive.

    ``traj`` is a Trajectory or an (n, 3) array of knot forces.
    """
    if isinstance(traj, Trajectory):
        forces = traj.U[:, 3 * leg_index(leg) : 3 * leg_index(leg) + 3]
    else:
        forces = np.asarray(traj, dtype=float)
    k0, k1 = int(window[0]), int(window[1])
    if k1 < k0 or k0 < 0 or k0 >= len(forces):
        raise PlannerParameterError("empty envelope window")
    seg = forces[k0 : min(k1, len(forces) - 1) + 1]
    picks = []
    for axis in range(3):
        picks.append(seg[int(np.argmax(seg[:, axis]))])
        picks.append(seg[int(np.argmin(seg[:, axis]))])
    foothold = np.zeros(3) if foothold is None else np.asarray(foothold, dtype=float)
    return GrfEnvelope(np.array(picks), foothold)


@dataclass
class StrideConfig:
    stride: float = 4.0
    dt: float = 0.05
    shift_fraction: float = 0.25
    max_iter: int = 12
    tol: float = 1e-6
    swing: SwingParams = field(default_factory=SwingParams)
    weights: Weights = field(default_factory=Weights)
    barriers: dict = field(default_factory=lambda: dict(TABLE_I))
    mu_c: float = 0.5


@dataclass
class StridePlan:
    trajectory: Trajectory
    touchdowns: np.ndarray  # (4, 3) adapted touch-down positions
    envelope: GrfEnvelope
    schedule: GaitSchedule
    references: ReferenceBundle
    regions: list

    def track(self) -> ReferenceBundle:
        """Optimized trajectory as an MPC reference track (swing feet on splines)."""
        ref = self.references
        traj = self.trajectory
        u = np.vstack([traj.U, traj.U[-1:]])
        x = traj.X.copy()
        return ReferenceBundle(ref.times.copy(), x, u, ref.p.copy(), ref.v.copy(), ref.contact.copy())


def _touchdown_knots(schedule: GaitSchedule, times):
    out = {}
    for leg in schedule.sequence:
        _, b = schedule.swing_window(leg)
        out[leg] = int(np.searchsorted(times, b - 1e-9))
    return out


def project_into_region(p, hs, margin: float = 0.0, iters: int = 200) -> np.ndarray:
    """Closest point to ``p`` with every residual >= margin (Dykstra's projections)."""
    p = np.asarray(p, dtype=float)
    if hs is None or getattr(hs, "unbounded", False) or np.all(hs.residuals(p) >= margin):
        return p.copy()
    x = p.copy()
    corr = np.zeros((len(hs.b), 3))
    for _ in range(iters):
        prev = x.copy()
        for i, (a, b) in enumerate(zip(hs.A, hs.b)):
            y = x + corr[i]
            nn = a @ a
            r = a @ y + b - margin
            x_new = y - (min(r, 0.0) / nn) * a if nn > 0 else y
            corr[i] = y - x_new
            x = x_new
        if np.max(np.abs(x - prev)) < 1e-13:
            break
    return x


def optimize_stride(params: RobotParams, x0, base_target, targets, regions, probing_leg,
                    config: StrideConfig = StrideConfig(), t0: float = 0.0, feet_start=None,
                    warm: Trajectory | None = None, lead_shift: float | None = None) -> StridePlan:
    """Solve the full-stride OCP; returns footholds, the trajectory and the probing envelope.

    ``lead_shift=0`` starts the probing leg's swing immediately (leg already lifted).
    """
    schedule = crawl_schedule(probing_leg, config.stride, config.shift_fraction, t0, lead_shift)
    times = knot_times(t0, t0 + config.stride, config.dt)
    targets = np.asarray(targets, dtype=float).copy()
    # a target outside its region would fight the soft placement constraint
    for leg, hs in enumerate(regions):
        targets[leg] = project_into_region(targets[leg], hs, config.barriers["foot_placement"].delta)
    refs = make_references(params, x0, base_target, targets, schedule, times, feet_start, config.swing)
    n = len(times)
    td = _touchdown_knots(schedule, times)
    placement = np.zeros((n, N_LEGS), bool)
    for leg, k in td.items():
        placement[k:, leg] = True
    bounded = [hs is not None and not getattr(hs, "unbounded", False) for hs in regions]
    problem = OcpProblem(
        params=params, x_init=np.asarray(x0, dtype=float), times=times, contact=refs.contact,
        x_ref=refs.x, u_ref=refs.u, p_ref=refs.p, v_ref=refs.v, weights=config.weights,
        mu_c=config.mu_c, barriers=config.barriers, foot_placement=any(bounded), regions=list(regions),
        placement_mask=placement,
    )
    nlp = transcribe(problem)
    X0, U0 = nlp.initial_guess()
    if warm is not None and warm.X.shape == X0.shape:
        X0, U0 = warm.X.copy(), warm.U.copy()
    traj = solve_sqp(nlp, X0, U0, max_iter=config.max_iter, tol=config.tol)
    if traj.failed:
        raise PlanningError(traj.status)
    feet = feet_kinematics(params, traj.X, derivatives=False)["p"]
    touchdowns = targets.copy()
    for leg, k in td.items():
        if bounded[leg]:
            touchdowns[leg] = feet[k, leg]
    leg = leg_index(probing_leg)
    k_td = td[leg]
    window = (k_td, n - 2)
    envelope = extract_grf_envelope(traj, leg, window, touchdowns[leg])
    return StridePlan(traj, touchdowns, envelope, schedule, refs, list(regions))


def envelope_in_cone(envelope: GrfEnvelope, normal=(0.0, 0.0, 1.0), mu_c: float = 0.5, tol: float = 0.0) -> bool:
    return all(friction_cone_residual(f, normal, mu_c) >= -tol for f in envelope.forces)


# ---------------------------------------------------------------- MPC


@dataclass
class MpcConfig:
    horizon: float = 1.0
    dt: float = 0.015
    rate: float = 100.0
    max_iter: int = 1
    tol: float = 1e-6
    alpha: float = 0.04
    mu_c: float = 0.5
    weights: Weights = field(default_factory=Weights)
    barriers: dict = field(default_factory=lambda: dict(TABLE_I))


@dataclass
class MpcConstraints:
    """Constraint activation hand-off from the state machine."""

    support: tuple | None = None  # (A_s, b_s, t_start, t_end)
    probing: tuple | None = None  # (leg, profile(t) -> (3,), t_start, t_end)
    regions: list | None = None
    region_windows: list | None = None  # per leg (t_start, t_end) or None
    weights: Weights | None = None  # replaces the controller's weights while set


@dataclass
class MpcResult:
    u: np.ndarray
    trajectory: Trajectory
    stale: bool
    t: float
    problem: OcpProblem | None = None

    def state_at(self, t: float) -> np.ndarray:
        return self.trajectory.state_at(t)


class MpcController:
    """Receding-horizon solver warm-started from its previous solution."""

    def __init__(self, params: RobotParams, config: MpcConfig = MpcConfig()):
        self.params = params
        self.config = config
        self.last: MpcResult | None = None

    def build_problem(self, x, t: float, refs: ReferenceBundle, cons: MpcConstraints) -> OcpProblem:
        cfg = self.config
        times = knot_times(t, t + cfg.horizon, cfg.dt)
        r = refs.sample(times)
        n = len(times)
        pb = OcpProblem(
            params=self.params, x_init=np.asarray(x, dtype=float), times=times, contact=r.contact,
            x_ref=r.x, u_ref=r.u, p_ref=r.p, v_ref=r.v, weights=cons.weights or cfg.weights, mu_c=cfg.mu_c,
            barriers=cfg.barriers, alpha=cfg.alpha,
        )
        if cons.support is not None:
            A_s, b_s, ta, tb = cons.support
            mask = (times >= ta - 1e-9) & (times <= tb + 1e-9)
            if mask.any():
                pb.support_polygon, pb.A_s, pb.b_s, pb.support_mask = True, A_s, b_s, mask
        if cons.probing is not None:
            leg, profile, ta, tb = cons.probing
            mask = (times >= ta - 1e-9) & (times < tb) & r.contact[:, leg]
            if mask.any():
                pb.probing_force, pb.probing_leg, pb.probing_mask = True, leg, mask
                pb.f_p = np.array([profile(tk) for tk in times])
        if cons.regions is not None:
            mask = np.zeros((n, N_LEGS), bool)
            for leg, win in enumerate(cons.region_windows or [None] * N_LEGS):
                hs = cons.regions[leg]
                if win is None or hs is None or getattr(hs, "unbounded", False):
                    continue
                mask[:, leg] = (times >= win[0]) & (times <= win[1]) & r.contact[:, leg]
            if mask.any():
                pb.foot_placement, pb.regions, pb.placement_mask = True, list(cons.regions), mask
        return pb

    def _warm_start(self, nlp, x):
        X, U = nlp.initial_guess()
        prev = self.last
        if prev is not None and not prev.stale:
            tr = prev.trajectory
            t = np.clip(nlp.times, tr.times[0], tr.times[-1])
            for j in range(X.shape[1]):
                X[:, j] = np.interp(t, tr.times, tr.X[:, j])
            idx = np.clip(np.searchsorted(tr.times, t[:-1], side="right") - 1, 0, len(tr.U) - 1)
            U = tr.U[idx].copy()
            # inputs on legs whose mode changed are reset to the references
            contact = nlp.contact[:-1]
            _, U_ref = nlp.initial_guess()
            for leg in range(N_LEGS):
                sl = slice(3 * leg, 3 * leg + 3)
                swing = ~contact[:, leg]
                U[swing, sl] = 0.0
                fresh = contact[:, leg] & (np.abs(U[:, sl]).sum(axis=1) == 0.0)
                U[fresh, sl] = U_ref[fresh, sl]
        X[0] = x
        return X, U

    def step(self, x, t: float, refs: ReferenceBundle, cons: MpcConstraints = MpcConstraints()) -> MpcResult:
        pb = self.build_problem(x, t, refs, cons)
        nlp = transcribe(pb)
        X0, U0 = self._warm_start(nlp, np.asarray(x, dtype=float))
        traj = solve_sqp(nlp, X0, U0, max_iter=self.config.max_iter, tol=self.config.tol)
        if traj.failed or not np.all(np.isfinite(traj.U)):
            log.debug("MPC failure at t=%.3f: %s", t, traj.status)
            if self.last is not None:
                return replace(self.last, stale=True)
        result = MpcResult(traj.U[0].copy(), traj, traj.failed, t, pb)
        self.last = result
        return result


def mpc_step(controller: MpcController, state, refs: ReferenceBundle, cons: MpcConstraints, t: float) -> MpcResult:
    return controller.step(state, t, refs, cons)


def base_pose(x) -> np.ndarray:
    x = np.asarray(x)
    return np.concatenate([x[..., POS], x[..., EUL]], axis=-1)
