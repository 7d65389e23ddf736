"""Closed-loop quasi-static simulation with the probing supervisor."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from probewalk import LEGS
from probewalk.config import ScenarioConfig
from probewalk.fsm import (
    CollapseDetector,
    FsmParams,
    ProbeContext,
    ProbeState,
    detect_collapse,
    detect_contact,
    leg_up_reference,
    next_target,
    plan_alternatives,
    probe_around_points,
    probing_profile,
    step as fsm_step,
)
from probewalk.model import (
    EUL,
    N_LEGS,
    POS,
    QJ,
    RobotParams,
    RobotState,
    SingularityError,
    WorkspaceError,
    feet_positions,
    inverse_kinematics,
    leg_bias_torques,
    leg_extension,
    leg_jacobian,
    polygon_halfplanes,
    support_polygon,
)
from probewalk.ocp import TABLE_I, Weights, default_state_weights, solve_sqp, transcribe
from probewalk.planner import (
    CRAWL_CYCLE,
    MpcConfig,
    MpcConstraints,
    MpcController,
    PlanningError,
    ReferenceBundle,
    StrideConfig,
    SwingParams,
    SwingSpline,
    concatenate_tracks,
    joint_references,
    optimize_stride,
    weight_distribution,
)
from probewalk.terrain import HeightGrid, TerrainGeometryError, TerrainModel, elevation_map_of
from probewalk.vfa import NoSafeFootholdError, adapt_foothold, whole_plane_region

log = logging.getLogger(__name__)

UP = np.array([0.0, 0.0, 1.0])
FAR = 1e9
MAX_LIFT_WAIT = 2.0  # s
SHIFT_ACCEL = 0.5  # peak base acceleration for shifting into the three-leg triangle (m/s^2)


class SimulationFault(RuntimeError):
    pass


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.004
    mpc_period: float = 0.01
    torque_noise: float = 0.0
    contact_stiffness: float = 1e4  # virtual impedance of a swing foot pressing on terrain (N/m)
    fall_margin: float = 0.05
    seed: int = 0


@dataclass
class Command:
    x_next: np.ndarray  # desired state one inner step ahead
    forces: np.ndarray  # (4, 3) commanded ground reaction forces
    stance: np.ndarray  # (4,) legs the controller treats as load-bearing


# ---------------------------------------------------------------- world


@dataclass
class SimWorld:
    params: RobotParams
    terrain: TerrainModel
    x: np.ndarray
    sim: SimParams = field(default_factory=SimParams)
    t: float = 0.0
    contact: np.ndarray = field(default_factory=lambda: np.zeros(N_LEGS, bool))
    lost: np.ndarray = field(default_factory=lambda: np.zeros(N_LEGS, bool))
    collapsed: np.ndarray = field(default_factory=lambda: np.zeros(N_LEGS, bool))
    anchors: np.ndarray = field(default_factory=lambda: np.zeros((N_LEGS, 3)))
    feet: np.ndarray = field(default_factory=lambda: np.zeros((N_LEGS, 3)))
    support_heights: np.ndarray = field(default_factory=lambda: np.zeros(N_LEGS))
    forces: np.ndarray = field(default_factory=lambda: np.zeros((N_LEGS, 3)))
    est_forces: np.ndarray = field(default_factory=lambda: np.zeros((N_LEGS, 3)))
    torques: np.ndarray = field(default_factory=lambda: np.zeros((N_LEGS, 3)))
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.sim.seed)

    @classmethod
    def standing(cls, params: RobotParams, terrain: TerrainModel, xy=(0.0, 0.0), sim: SimParams = SimParams()):
        """Nominal stance with all four feet resting on the terrain surface."""
        x = RobotState.nominal(params, (xy[0], xy[1], params.leg_height)).to_vector()
        feet = feet_positions(params, x[6:12], x[QJ])
        heights = []
        for foot in feet:
            h = terrain.surface_height(foot[:2])
            if h is None:
                raise SimulationFault(f"initial foot at {foot[:2]} is over a hole")
            heights.append(h)
        x[8] += float(np.mean(heights))
        world = cls(params, terrain, x, sim)
        for leg in range(N_LEGS):
            foot = feet_positions(params, x[6:12], x[QJ])[leg]
            world.anchors[leg] = [foot[0], foot[1], heights[leg]]
            world.contact[leg] = True
        world.x[QJ] = np.concatenate([inverse_kinematics(params, x[6:12], world.anchors[i], i) for i in range(4)])
        world.feet = world.anchors.copy()
        world.support_heights = np.array(heights, dtype=float)
        return world

    def load_bearing(self) -> np.ndarray:
        return self.contact & ~self.lost

    def touch_down(self, leg: int, max_gap: float | None = None) -> bool:
        """Declare contact at the surface under the foot; False over a hole or a large gap."""
        foot = self.feet[leg]
        h = self.terrain.surface_height(foot[:2])
        if h is None or (max_gap is not None and foot[2] - h > max_gap):
            return False
        self.anchors[leg] = [foot[0], foot[1], h]
        self.feet[leg] = self.anchors[leg]
        self.support_heights[leg] = h
        self.contact[leg] = True
        self.lost[leg] = False
        self.collapsed[leg] = False
        return True

    def lift_off(self, leg: int) -> None:
        if self.contact[leg]:
            self.terrain.release(self.anchors[leg])
        self.contact[leg] = False
        self.lost[leg] = False
        self.collapsed[leg] = False


def _leg_statics(params, q_b, q_leg, qd_leg, leg):
    q_j = np.zeros(12)
    q_j[3 * leg : 3 * leg + 3] = q_leg
    return leg_jacobian(params, q_b, q_j, leg), leg_bias_torques(params, q_b, q_leg, qd_leg, leg)


def sim_step(world: SimWorld, command: Command) -> SimWorld:
    """Advance one inner step: apply commanded forces to the terrain and follow the kinematic plan."""
    x = np.asarray(command.x_next, dtype=float).copy()
    forces = np.asarray(command.forces, dtype=float).reshape(N_LEGS, 3)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(forces))):
        raise SimulationFault(f"non-finite command at t={world.t:.3f}")
    params = world.params
    world.t = round(world.t + world.sim.dt, 9)
    q_b = x[6:12]
    stance = np.asarray(command.stance, bool)
    qd = np.zeros(12)
    for leg in range(N_LEGS):
        sl = slice(3 * leg, 3 * leg + 3)
        if world.contact[leg] and not stance[leg]:
            world.lift_off(leg)
        if world.contact[leg] and not world.lost[leg]:
            f = forces[leg].copy()
            if f[2] < 0.0:
                f[:] = 0.0
            resp = world.terrain.apply_load(world.anchors[leg], -f)
            foot = world.anchors[leg] + resp.displacement
            world.support_heights[leg] = resp.support_height
            world.collapsed[leg] |= resp.collapsed
            try:
                x[12 + 3 * leg : 15 + 3 * leg] = inverse_kinematics(params, q_b, foot, leg)
            except WorkspaceError:
                # support dropped out of reach: the leg hangs and carries nothing
                world.lost[leg] = True
                f[:] = 0.0
                foot = feet_positions(params, q_b, x[QJ])[leg]
            world.forces[leg] = f
            world.feet[leg] = foot
        else:
            foot = feet_positions(params, q_b, x[QJ])[leg]
            world.feet[leg] = foot
            f = np.zeros(3)
            h = world.terrain.surface_height(foot[:2])
            if h is not None and foot[2] < h and not world.lost[leg]:
                f[2] = world.sim.contact_stiffness * (h - foot[2])
            world.forces[leg] = f
        qd[sl] = 0.0
    # joint torques for the commanded/impedance forces, then the torque-based estimate
    for leg in range(N_LEGS):
        sl = slice(12 + 3 * leg, 15 + 3 * leg)
        J, h = _leg_statics(params, q_b, x[sl], qd[3 * leg : 3 * leg + 3], leg)
        tau = h - J.T @ world.forces[leg]
        if world.sim.torque_noise > 0:
            tau = tau + world.rng.normal(0.0, world.sim.torque_noise, 3)
        world.torques[leg] = tau
        try:
            world.est_forces[leg] = -np.linalg.solve(J.T, tau - h)
        except np.linalg.LinAlgError:
            world.est_forces[leg] = np.nan
    world.x = x
    return world


def fall_check(world: SimWorld, margin: float) -> str | None:
    """Fall proxy: fewer than three load-bearing feet, or CoM beyond the hull by ``margin``."""
    bearing = world.load_bearing()
    if bearing.sum() < 3:
        return f"only {int(bearing.sum())} load-bearing feet"
    pts = world.feet[bearing, :2]
    try:
        A, b = polygon_halfplanes(pts)
    except ValueError:
        return "degenerate support"
    inside = float(np.min(A @ world.x[6:8] + b))
    if inside < -margin:
        return f"CoM {-inside:.3f} m outside the support hull"
    return None


# ---------------------------------------------------------------- reference tracks


def _hold_track(params, t0, t1, base, feet, contact, u_forces=None) -> ReferenceBundle:
    times = np.array([t0, max(t1, t0 + 1e-3)])
    x = np.zeros((2, 24))
    x[:, 6:12] = base
    x[:, QJ] = joint_references(params, times, x[:, 6:12], np.repeat(feet[None], 2, axis=0))
    u = np.zeros((2, 24))
    u[:, :12] = weight_distribution(params, contact) if u_forces is None else u_forces
    p = np.repeat(np.asarray(feet, dtype=float)[None], 2, axis=0)
    return ReferenceBundle(times, x, u, p, np.zeros_like(p), np.repeat(np.asarray(contact, bool)[None], 2, axis=0))


def _safe_ik(params, base, feet):
    """IK per leg; unreachable feet get the nominal joints."""
    q = np.empty(12)
    for leg in range(N_LEGS):
        try:
            q[3 * leg : 3 * leg + 3] = inverse_kinematics(params, base, feet[leg], leg)
        except WorkspaceError:
            q[3 * leg : 3 * leg + 3] = params.nominal_leg_angles
    return q


def _leg_track(params, t0, base0, base1, feet, leg, spline: SwingSpline | None, contact_leg: bool,
               duration: float, descend: float = 0.0, descend_speed: float = 0.1, dt: float = 0.02):
    """Three stance legs fixed, ``leg`` following ``spline`` then optionally descending."""
    n = max(int(np.ceil(duration / dt)), 1)
    t_sw = np.linspace(0.0, duration, n + 1)
    seg = [t_sw]
    if descend > 0:
        n_d = max(int(np.ceil(descend / descend_speed / dt)), 1)
        seg.append(duration + np.linspace(0.0, descend / descend_speed, n_d + 1)[1:])
    rel = np.concatenate(seg)
    times = t0 + rel
    k = len(times)
    s = np.clip(rel / duration, 0.0, 1.0)[:, None]
    base = (1 - s) * base0 + s * base1
    p = np.repeat(np.asarray(feet, dtype=float)[None], k, axis=0)
    v = np.zeros_like(p)
    if spline is not None:
        in_swing = rel <= duration
        p[in_swing, leg] = spline.position(rel[in_swing])
        v[in_swing, leg] = spline.velocity(rel[in_swing])
        after = ~in_swing
        p[after, leg] = spline.p1 - UP * descend_speed * (rel[after] - duration)[:, None]
        v[after, leg] = -UP * descend_speed
    contact = np.ones((k, N_LEGS), bool)
    contact[:, leg] = contact_leg
    x = np.zeros((k, 24))
    x[:, 6:12] = base
    for i in range(k):
        x[i, QJ] = _safe_ik(params, base[i], p[i])
    u = np.zeros((k, 24))
    u[:, :12] = weight_distribution(params, contact)
    u[1:, 12:] = np.diff(x[:, QJ], axis=0) / np.diff(times)[:, None]
    return ReferenceBundle(times, x, u, p, v, contact)


def _descend_limit(params, base, foot, leg, ratio, step=0.005, max_depth=0.3) -> float:
    """Depth below ``foot`` the leg can reach while staying under ``ratio`` extension."""
    depth = 0.0
    while depth + step <= max_depth:
        target = foot - UP * (depth + step)
        try:
            q = inverse_kinematics(params, base, target, leg)
        except WorkspaceError:
            break
        if leg_extension(params, q) > ratio:
            break
        depth += step
    return depth


def _closest_in_halfplanes(A, b, c):
    """Closest point to ``c`` with A x + b >= 0 (2-D, by active-set enumeration); None if empty."""
    c = np.asarray(c, dtype=float)
    cands = [c]
    for i in range(len(A)):
        a = A[i]
        cands.append(c - (a @ c + b[i]) / (a @ a) * a)
        for j in range(i + 1, len(A)):
            M = np.vstack([A[i], A[j]])
            if abs(np.linalg.det(M)) > 1e-12:
                cands.append(np.linalg.solve(M, -np.r_[b[i], b[j]]))
    best = None
    for x in cands:
        if np.all(A @ x + b >= -1e-12) and (best is None or np.linalg.norm(x - c) < np.linalg.norm(best - c)):
            best = x
    return best


def probing_base_xy(feet, leg, probe_point, share, base_xy, margin, inner_margin=0.005):
    """Base position nearest ``base_xy`` from which a probing load ``share`` of the weight can be
    held statically with non-negative forces on the other three legs.

    The CoM must stay ``margin`` inside the three-leg triangle, and the remaining load's centre
    of pressure ``(c - share p) / (1 - share)`` must stay inside it too. ``share`` is reduced when
    both cannot hold; returns (xy, share used).
    """
    A, b = support_polygon(feet, leg)
    p = np.asarray(probe_point, dtype=float)[:2]
    w = float(np.clip(share, 0.0, 0.95))
    for _ in range(30):
        A2 = np.vstack([A, A])
        b2 = np.r_[b - margin, -w * (A @ p) + (1 - w) * (b - inner_margin)]
        xy = _closest_in_halfplanes(A2, b2, base_xy)
        if xy is not None:
            return xy, w
        w *= 0.9
    xy = _closest_in_halfplanes(A, b - margin, base_xy)
    return (np.asarray(base_xy, dtype=float) if xy is None else xy), 0.0


def _delay(track: ReferenceBundle, t_from: float, delta: float) -> ReferenceBundle:
    """Shift every sample at or after ``t_from`` later by ``delta`` (holding the gap)."""
    times = track.times.copy()
    later = times >= t_from
    times[later] += delta
    hold = track.sample([t_from - 1e-6])
    head = ReferenceBundle(times[~later], track.x[~later], track.u[~later], track.p[~later], track.v[~later],
                           track.contact[~later])
    gap = replace(hold, times=np.array([t_from]))
    tail = ReferenceBundle(times[later], track.x[later], track.u[later], track.p[later], track.v[later],
                           track.contact[later])
    out = concatenate_tracks(head, gap) if len(head.times) else gap
    return concatenate_tracks(out, tail) if len(tail.times) else out


# ---------------------------------------------------------------- episode


@dataclass
class EpisodeResult:
    traversed: bool
    outcome: str  # traversed | stopped | fell | stalled | error
    exit_code: int
    distance: float
    steps: int
    strides: float
    probe_segments: int
    collapses: int
    min_support_residual: float | None
    wall_clock: float
    sim_time: float
    fall_reason: str | None = None
    max_probe_acceleration: float = 0.0
    max_contact_penetration: float = 0.0
    probing_footholds: list = field(default_factory=list)  # planned probing touch-downs
    probe_contacts: list = field(default_factory=list)  # where the probing foot actually landed
    comparisons: list = field(default_factory=list)
    out_dir: str | None = None

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("probing_footholds")
        out.pop("probe_contacts")
        out.pop("comparisons")
        out["comparison_steps"] = len(self.comparisons)
        return out


EXIT_CODES = {"traversed": 0, "stopped": 2, "stalled": 2, "fell": 3, "error": 1}


class Supervisor:
    """Runs the state machine, planner, MPC and simulator in one deterministic loop."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.params = cfg.robot
        self.terrain = cfg.terrain()
        self.probing = cfg.probing_enabled
        self.vfa = cfg.vfa_enabled
        self.compare = cfg.flag("modes", "compare_support")
        n = cfg.num
        self.fsm_params = FsmParams(
            step_length=n("planner", "step_length"),
            contact_threshold=n("fsm", "contact_threshold"),
            contact_streak=cfg.int("fsm", "contact_streak"),
            collapse_threshold=n("fsm", "collapse_threshold"),
            alternative_spacing=n("fsm", "alternative_spacing"),
            around_radius=self.params.footpad_radius,
            max_extension_ratio=n("fsm", "max_extension_ratio"),
            leg_up_clearance=n("fsm", "leg_up_clearance"),
        )
        self.around_duration = n("fsm", "around_swing_duration")
        mu_c = n("planner", "friction_coefficient")
        self.stride_cfg = StrideConfig(
            stride=n("planner", "stride"), dt=n("planner", "to_dt"), max_iter=cfg.int("planner", "to_max_iter"),
            tol=n("solver", "to_tol"), mu_c=mu_c,
        )
        self.mpc_cfg = MpcConfig(
            horizon=n("planner", "mpc_horizon"), dt=n("planner", "mpc_dt"), max_iter=cfg.int("planner", "mpc_max_iter"),
            tol=n("solver", "mpc_tol"), alpha=n("planner", "alpha"), mu_c=mu_c,
        )
        self.compare_iter = cfg.int("solver", "compare_max_iter")
        self.compare_weights = Weights(Q=default_state_weights(momentum=n("planner", "compare_momentum_weight")))
        # lift only once the CoM sits inside the alpha-shrunk triangle by half the barrier relaxation
        self.lift_margin = self.mpc_cfg.alpha + 0.5 * TABLE_I["support_polygon"].delta
        # probing holds the base still: base momentum is penalized much harder
        self.probe_weights = Weights(Q=default_state_weights(momentum=n("planner", "probe_momentum_weight")))
        self.move_weights = Weights(Q=default_state_weights(momentum=n("planner", "move_momentum_weight")))
        self.sim = SimParams(
            dt=n("sim", "dt"), mpc_period=n("sim", "mpc_period"), torque_noise=n("sim", "torque_noise"),
            contact_stiffness=n("sim", "contact_stiffness"), fall_margin=n("sim", "fall_margin"), seed=cfg.seed,
        )
        self.target_distance = n("scenario", "target_distance")
        self.max_time = n("scenario", "max_sim_time")
        self.direction = np.array([1.0, 0.0])
        res = n("sim", "map_resolution")
        self.grid: HeightGrid | None = elevation_map_of(self.terrain, res) if self.vfa else None
        self.world = SimWorld.standing(self.params, self.terrain, (n("scenario", "start_x"), 0.0), self.sim)
        self.x_start = self.world.x[6:9].copy()
        self.mpc = MpcController(self.params, self.mpc_cfg)
        first = CRAWL_CYCLE[0]
        self.ctx = ProbeContext(first, self.world.anchors.copy())
        self.state = ProbeState.PRE_OPT
        self.detector = CollapseDetector(self.fsm_params.collapse_threshold)
        self.track: ReferenceBundle | None = None
        self.cons = MpcConstraints()
        self.result = None
        self.phase: dict = {}
        self.plan = None
        self.origin = None
        self.dirty = False
        self.outcome: str | None = None
        self.fall_reason = None
        self.steps = 0
        self.probe_segments = 0
        self.collapses = 0
        self.min_residual = np.inf
        self.max_accel = 0.0
        self.max_penetration = 0.0
        self.probe_base_history: list = []
        self.pending_events: list = []
        self.run_rows: list = []
        self.probe_rows: list = []
        self.event_rows: list = []
        self.footholds: list = []
        self.contacts: list = []
        self.comparisons: list = []

    # ------------------------------------------------------------ events
    def _event(self, event: str, **data):
        leg = self.ctx.probing_leg
        before = self.state
        res = fsm_step(self.state, self.ctx, event, **data)
        self.state = res.state
        pos = data.get("position", self.world.feet[leg])
        f = self.world.est_forces[leg]
        self.event_rows.append([
            f"{self.world.t:.3f}", before.value, event, res.state.value, LEGS[leg],
            *[f"{v:.4f}" for v in pos], *[f"{v:.2f}" for v in f], int(res.accepted),
        ])
        self.pending_events.append(event)
        self.dirty = True
        log.debug("t=%.3f %s --%s--> %s", self.world.t, before.value, event, res.state.value)
        return res

    def _baseline_state(self, state: ProbeState, event: str):
        leg = self.ctx.probing_leg
        self.event_rows.append([
            f"{self.world.t:.3f}", self.state.value, event, state.value, LEGS[leg],
            *[f"{v:.4f}" for v in self.world.feet[leg]], *[f"{v:.2f}" for v in self.world.est_forces[leg]], 1,
        ])
        self.pending_events.append(event)
        self.dirty = True
        self.state = state

    # ------------------------------------------------------------ helpers
    @property
    def leg(self) -> int:
        return self.ctx.probing_leg

    def _base_pose(self):
        return self.world.x[6:12].copy()

    def _support(self):
        return support_polygon(self.world.feet, self.leg)

    def _com_residual(self):
        A, b = self._support()
        return A @ self.world.x[6:8] + b

    def _ground_height(self) -> float:
        bearing = self.world.load_bearing()
        return float(np.mean(self.world.anchors[bearing, 2])) if bearing.any() else 0.0

    def _regions_for(self, targets):
        adapted = np.asarray(targets, dtype=float).copy()
        regions = [whole_plane_region() for _ in range(N_LEGS)]
        if self.grid is None:
            return adapted, regions
        for leg in range(N_LEGS):
            try:
                foothold, hs, *_ = adapt_foothold(self.grid, adapted[leg])
            except NoSafeFootholdError:
                continue
            adapted[leg], regions[leg] = foothold, hs
        return adapted, regions

    # ------------------------------------------------------------ planning
    def _pre_opt(self):
        if self.world.x[6] - self.x_start[0] >= self.target_distance:
            self.outcome = "traversed"
            return
        base_target, targets = next_target(
            self._on_path(), self.params, self.direction, UP, self.fsm_params.step_length, self._ground_height()
        )
        self.phase = {"base_target": base_target, "targets": targets}
        if self.probing:
            self._event("targets_ready")
        else:
            self._baseline_state(ProbeState.SEND, "targets_ready")
        adapted, regions = self._regions_for(targets)
        self.phase.update(adapted=adapted, regions=regions)
        if self.probing:
            self._event("vfa_done")
        else:
            self._baseline_state(ProbeState.OPT, "vfa_done")
        self._optimize(base_target, adapted, regions)

    def _on_path(self) -> np.ndarray:
        """Current state with the base moved laterally back onto the walking line.

        Probing shifts the base sideways over the support triangle; nominal footholds taken from that
        pose would drift across the field stride by stride.
        """
        x = self.world.x.copy()
        d = self.direction
        rel = x[6:8] - self.x_start[:2]
        x[6:8] = self.x_start[:2] + (rel @ d) * d
        return x

    def _optimize(self, base_target, targets, regions, lead_shift=None):
        plan = None
        for shrink in (1.0, 0.5):
            bt = base_target.copy()
            bt[:2] = self.world.x[6:8] + shrink * (base_target[:2] - self.world.x[6:8])
            try:
                plan = optimize_stride(
                    self.params, self.world.x, bt, targets, regions, self.leg, self.stride_cfg, t0=self.world.t,
                    feet_start=self.world.feet, lead_shift=lead_shift,
                )
                break
            except (PlanningError, WorkspaceError) as exc:
                log.info("stride optimization failed at t=%.2f (%s)", self.world.t, exc)
        if plan is None:
            self.outcome = "stalled"
            return
        self.plan = plan
        touchdown = plan.touchdowns[self.leg]
        self.footholds.append(touchdown.copy())
        if self.probing:
            alts = plan_alternatives(touchdown, self.direction, self.grid, self.fsm_params.alternative_spacing)
            self._event("plan_ready", alternatives=alts, target=touchdown)
            if self.ctx.attempt == 0:
                self.origin = (touchdown.copy(), base_target.copy())
        else:
            self._baseline_state(ProbeState.MOVE, "plan_ready")
        self._enter_move(plan)

    def _enter_move(self, plan):
        leg = self.leg
        t_lift, t_td = plan.schedule.swing_window(leg)
        track = plan.track()
        keep = track.times <= t_td + 1e-9
        track = ReferenceBundle(track.times[keep], track.x[keep], track.u[keep], track.p[keep], track.v[keep],
                                track.contact[keep])
        if self.probing:
            share = float(plan.envelope.max_normal(UP)[2]) / self.params.weight
            base_td = track.sample([t_td]).x[0, 6:8]
            xy, _ = probing_base_xy(self.world.feet, leg, plan.touchdowns[leg], share, base_td,
                                    self.mpc_cfg.alpha + 0.02)
            goal = track.sample([t_td]).x[0, 6:12].copy()
            goal[:2] = xy
            b0 = self._base_pose()
            t0 = track.times[0]
            # smoothstep peak acceleration is 6 d / T^2
            T = max(t_lift - t0, np.sqrt(6.0 * np.linalg.norm(goal[:3] - b0[:3]) / SHIFT_ACCEL))
            if T > t_lift - t0:
                extra = T - (t_lift - t0)
                track = _delay(track, t_lift, extra)
                t_lift, t_td = t_lift + extra, t_td + extra
            track = self._rest_to_rest(track, b0, goal, t0, t0 + T)
            end = track.sample([t_td])
            base = end.x[0, 6:12]
            depth = _descend_limit(self.params, base, plan.touchdowns[leg], leg, self.fsm_params.max_extension_ratio)
            feet = end.p[0].copy()
            feet[leg] = plan.touchdowns[leg]
            tail = _leg_track(self.params, t_td, base, base, feet, leg, None, False, 1e-3, depth)
            tail.p[:, leg] = plan.touchdowns[leg] - UP * 0.1 * np.clip(tail.times - t_td, 0, None)[:, None]
            tail.v[:, leg] = -UP * 0.1
            for i in range(len(tail.times)):
                tail.x[i, QJ] = _safe_ik(self.params, base, tail.p[i])
            track = concatenate_tracks(track, tail).then_hold(t_td + depth / 0.1 + 5.0)
            A, b = support_polygon(self.world.feet, leg)
            self.cons = MpcConstraints(support=(A, b, t_lift, FAR))
            self.phase.update(descend_end=t_td + depth / 0.1)
        else:
            track = track.then_hold(t_td + 5.0)
            self.cons = MpcConstraints()
        self.track = track
        self.phase.update(t_lift=t_lift, t_td=t_td, lifted=False, waited=0.0)

    # ------------------------------------------------------------ per-tick logic
    def tick(self):
        s = self.state
        if s is ProbeState.PRE_OPT:
            self._pre_opt()
        elif s is ProbeState.MOVE:
            self._tick_move()
        elif s is ProbeState.DETECT_CONTACT:
            self._tick_detect()
        elif s is ProbeState.PROBE:
            self._tick_probe()
        elif s is ProbeState.PROBE_AROUND:
            self._tick_around()
        elif s is ProbeState.LEG_UP:
            self._tick_leg_up()
        elif s is ProbeState.RETURN_SAFE:
            self._tick_return()
        elif s is ProbeState.STOPPED:
            self.outcome = "stopped"

    def _tick_move(self):
        t, ph, leg = self.world.t, self.phase, self.leg
        if not self.probing:
            if t >= ph["t_lift"] - 1e-9 and not ph["lifted"]:
                self.world.lift_off(leg)
                ph["lifted"] = True
            if t >= ph["t_td"] - 1e-9:
                if not self.world.touch_down(leg, max_gap=0.03):
                    # nothing under the foot: it is placed anyway and carries nothing
                    self.world.contact[leg] = True
                    self.world.lost[leg] = True
                self._finish_leg()
            return
        if t < ph["t_lift"] - 1e-9:
            return
        if np.min(self._com_residual()) >= self.lift_margin or ph["waited"] >= MAX_LIFT_WAIT:
            self._event("base_safe")
            self.world.lift_off(leg)
            self._event("lift_off")
            self.ctx.streak = 0
            ph["armed_at"] = t + 0.5 * (ph["t_td"] - t)
            return
        # hold the swing until the base is inside the three-leg triangle
        dt = self.sim.dt
        ph["waited"] += dt
        self.track = _delay(self.track, t, dt)
        for key in ("t_lift", "t_td", "descend_end"):
            ph[key] += dt

    def _rest_to_rest(self, track, b0, b1, ta, tb):
        """Replace the base path of ``track`` by a smoothstep from ``b0`` to ``b1`` (at rest at both ends)."""
        T = max(tb - ta, 1e-9)
        s = np.clip((track.times - ta) / T, 0.0, 1.0)
        shape = s * s * (3 - 2 * s)
        rate = np.where((s > 0) & (s < 1), 6 * s * (1 - s) / T, 0.0)
        x = track.x.copy()
        x[:, 6:12] = b0 + shape[:, None] * (b1 - b0)
        x[:, 0:3] = self.params.mass * rate[:, None] * (b1 - b0)[:3]
        x[:, 3:6] = 0.0
        for i in range(len(x)):
            x[i, QJ] = _safe_ik(self.params, x[i, 6:12], track.p[i])
        return replace(track, x=x)

    def _detect(self):
        """Contact streak on the probing leg; returns True once contact is declared."""
        f = self.world.est_forces[self.leg]
        if not np.all(np.isfinite(f)):
            self.ctx.streak = 0
            return False
        hit, self.ctx.streak = detect_contact(
            f, UP, self.fsm_params.contact_threshold, self.ctx.streak, self.fsm_params.contact_streak
        )
        return hit

    def _overextended(self, descend_end) -> bool:
        q = self.world.x[12 + 3 * self.leg : 15 + 3 * self.leg]
        return leg_extension(self.params, q) >= self.fsm_params.max_extension_ratio or self.world.t > descend_end + 0.1

    def _armed(self) -> bool:
        # a foot leaving a tilted plank sits below the restored surface; ignore contact until the apex
        return self.world.t >= self.phase.get("armed_at", 0.0)

    def _tick_detect(self):
        leg = self.leg
        if self._armed() and self._detect():
            if self.world.touch_down(leg):
                anchor = self.world.anchors[leg].copy()
                self.contacts.append(anchor)
                self._event("contact", position=anchor)
                self._enter_probe(anchor)
                return
            self.ctx.streak = 0
        if self._overextended(self.phase["descend_end"]):
            self._event("no_contact_overextension")
            self._enter_leg_up()

    def _stance_forces(self, f_probe):
        """Force references: probing leg at ``f_probe``, the others in static moment balance.

        Vertical forces solve the moment balance about the held base position (clipped to
        non-negative and rescaled); horizontal reactions are split evenly.
        """
        leg = self.leg
        others = [i for i in range(N_LEGS) if i != leg]
        f_probe = np.asarray(f_probe, dtype=float)
        W = self.params.weight
        c = self._probe_base[:2]
        feet = self.world.feet
        M = np.vstack([np.ones(3), feet[others, 0], feet[others, 1]])
        rhs = np.r_[W - f_probe[2], W * c - f_probe[2] * feet[leg, :2]]
        try:
            fz = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            fz = np.full(3, rhs[0] / 3.0)
        fz = np.clip(fz, 0.0, None)
        total = max(W - f_probe[2], 0.0)
        fz = fz * (total / fz.sum()) if fz.sum() > 0 else np.full(3, total / 3.0)
        u = np.zeros(12)
        u[3 * leg : 3 * leg + 3] = f_probe
        for k, i in enumerate(others):
            u[3 * i : 3 * i + 2] = -f_probe[:2] / 3.0
            u[3 * i + 2] = fz[k]
        return u

    def _probe_track(self, t0, forces, seg=0.1):
        """Static posture with a piecewise-constant probing-force reference."""
        base = self._probe_base
        feet = self.world.feet.copy()
        contact = np.ones(N_LEGS, bool)
        tracks = []
        for k, f in enumerate(forces):
            u = self._stance_forces(f)
            tracks.append(_hold_track(self.params, t0 + k * seg, t0 + (k + 1) * seg - 1e-6, base, feet, contact,
                                      u[None].repeat(2, axis=0)))
        tail = _hold_track(self.params, t0 + len(forces) * seg, t0 + len(forces) * seg + 5.0, base, feet, contact)
        out = tracks[0]
        for tr in tracks[1:] + [tail]:
            out = concatenate_tracks(out, tr)
        return out

    def _enter_probe(self, anchor):
        t = self.world.t
        self.detector.store(anchor)
        self._probe_base = self._base_pose()
        profile = probing_profile(self.plan.envelope, UP, 0.1, t0=t)
        self.phase = {"t0": t, "seg": 0, "profile": profile}
        self.track = self._probe_track(t, profile.forces)
        A, b = support_polygon(self.world.feet, self.leg)
        self.cons = MpcConstraints(support=(A, b, t, FAR), probing=(self.leg, profile, t, t + profile.duration),
                                   weights=self.probe_weights)
        self._maybe_compare(profile.forces, t)

    def _collapsed(self) -> bool:
        leg = self.leg
        return bool(self.world.lost[leg] or detect_collapse(self.detector, self.world.feet[leg]))

    def _tick_probe(self):
        ph = self.phase
        if self._collapsed():
            self.collapses += 1
            self._event("collapse")
            self._enter_leg_up()
            return
        t = self.world.t
        if t >= ph["t0"] + 0.1 * (ph["seg"] + 1) - 1e-9:
            ph["seg"] += 1
            self.probe_segments += 1
            if ph["seg"] < len(ph["profile"].forces):
                self._event("probe_segment_done")
            else:
                center = self.ctx.contact_position
                points = probe_around_points(center, self.params.footpad_radius, self.direction, self.grid)
                self._event("envelope_done", around_points=points)
                self.phase = {"queue": list(points) + [center.copy()], "index": 0,
                              "f_max": self.plan.envelope.max_normal(UP)}
                self._around_swing()

    # ------------------------------------------------------------ probe-around
    def _swing_to(self, target, duration, step_height, base1=None):
        leg = self.leg
        t = self.world.t
        base0 = self._base_pose()
        base1 = base0 if base1 is None else base1
        start = self.world.feet[leg].copy()
        spline = SwingSpline(start, target, duration, SwingParams(step_height, 0.1, -0.1))
        depth = _descend_limit(self.params, base1, np.asarray(target, dtype=float), leg,
                               self.fsm_params.max_extension_ratio)
        feet = self.world.feet.copy()
        track = _leg_track(self.params, t, base0, base1, feet, leg, spline, False, duration, depth)
        self.track = track.then_hold(t + duration + depth / 0.1 + 5.0)
        return t + duration + depth / 0.1

    def _around_swing(self):
        self.world.lift_off(self.leg)
        self.ctx.streak = 0
        target = self.phase["queue"][self.phase["index"]]
        self.phase["mode"] = "swing"
        self.phase["armed_at"] = self.world.t + 0.5 * self.around_duration
        self.phase["descend_end"] = self._swing_to(target, self.around_duration, 0.03)
        A, b = support_polygon(self.world.feet, self.leg)
        self.cons = MpcConstraints(support=(A, b, self.world.t, FAR))

    def _tick_around(self):
        ph, leg = self.phase, self.leg
        if ph["mode"] == "swing":
            if self._armed() and self._detect() and self.world.touch_down(leg):
                anchor = self.world.anchors[leg].copy()
                self._event("contact", position=anchor)
                if ph["index"] >= len(ph["queue"]) - 1:
                    self._event("around_done", next_leg=self._next_leg())
                    self._finish_leg(probing_done=True)
                    return
                t = self.world.t
                self.detector.store(anchor)
                self._probe_base = self._base_pose()
                f = ph["f_max"]
                profile = probing_profile(np.array([f]), UP, 0.1, t0=t)
                self.track = self._probe_track(t, profile.forces)
                A, b = support_polygon(self.world.feet, leg)
                self.cons = MpcConstraints(support=(A, b, t, FAR), probing=(leg, profile, t, t + 0.1),
                                           weights=self.probe_weights)
                ph.update(mode="probe", t0=t)
                self._maybe_compare(np.array([f]), t)
                return
            if self._overextended(ph["descend_end"]):
                self._event("no_contact_overextension")
                self._enter_leg_up()
            return
        if self._collapsed():
            self.collapses += 1
            self._event("collapse")
            self._enter_leg_up()
            return
        if self.world.t >= ph["t0"] + 0.1 - 1e-9:
            self.probe_segments += 1
            self._event("probe_segment_done")
            ph["index"] += 1
            self._around_swing()

    def _next_leg(self) -> int:
        k = CRAWL_CYCLE.index(self.leg)
        return CRAWL_CYCLE[(k + 1) % N_LEGS]

    def _finish_leg(self, probing_done=False):
        self.steps += 1
        if not self.probing:
            self.ctx.probing_leg = self._next_leg()
            self._baseline_state(ProbeState.PRE_OPT, "touchdown")
        self.cons = MpcConstraints()
        feet = self.world.feet.copy()
        self.track = _hold_track(self.params, self.world.t, self.world.t + 5.0, self._base_pose(), feet,
                                 np.ones(N_LEGS, bool))
        self.phase = {}

    # ------------------------------------------------------------ recovery
    def _enter_leg_up(self):
        leg = self.leg
        self.world.lift_off(leg)
        self.ctx.streak = 0
        lu = leg_up_reference(self.ctx, self.params, self.world.x, self.world.feet, self.fsm_params.leg_up_clearance)
        base1 = self._base_pose()
        base1[:2] = lu.base_xy
        t = self.world.t
        start = self.world.feet[leg].copy()
        spline = SwingSpline(start, lu.foot, 0.5, SwingParams(0.0, 0.1, 0.0))
        track = _leg_track(self.params, t, self._base_pose(), base1, self.world.feet.copy(), leg, spline, False, 0.5)
        self.track = track.then_hold(t + 5.0)
        A, b = support_polygon(self.world.feet, leg)
        self.cons = MpcConstraints(support=(A, b, t, FAR))
        self.phase = {"t_end": t + 0.5}

    def _tick_leg_up(self):
        t = self.world.t
        ph = self.phase
        if t < ph["t_end"]:
            return
        if np.min(self._com_residual()) < 0.5 * self.mpc_cfg.alpha and t < ph["t_end"] + 2.0:
            return
        if self.ctx.attempt >= len(self.ctx.alternatives):
            self._event("alternatives_exhausted")
            self._enter_return()
            return
        self._event("base_safe")
        # the base target moves with the foothold
        target = self.ctx.target
        origin_foot, origin_base = self.origin
        base_target = origin_base.copy()
        base_target[:2] += (target - origin_foot)[:2]
        _, targets = next_target(self._on_path(), self.params, self.direction, UP, 0.0, self._ground_height())
        targets = targets + np.r_[base_target[:2] - self._on_path()[6:8], 0.0]
        targets[self.leg] = target
        adapted, regions = self._regions_for(targets)
        self._optimize(base_target, adapted, regions, lead_shift=0.0)

    def _enter_return(self):
        target = self.ctx.snapshot[self.leg] if self.ctx.snapshot is not None else self.ctx.safe_footholds[self.leg]
        self.phase = {"descend_end": self._swing_to(target, 0.75, 0.05), "armed_at": self.world.t + 0.375}
        A, b = support_polygon(self.world.feet, self.leg)
        self.cons = MpcConstraints(support=(A, b, self.world.t, FAR))
        self.ctx.streak = 0

    def _tick_return(self):
        leg = self.leg
        if self._armed() and self._detect() and self.world.touch_down(leg):
            self._event("contact", position=self.world.anchors[leg].copy())
            self.outcome = "stopped"
            return
        if self._overextended(self.phase["descend_end"]):
            self._event("base_safe")
            self.outcome = "stopped"

    # ------------------------------------------------------------ MPC and logging
    def _force_consistent_base(self, f_probe):
        """Base xy at which ``f_probe`` is held statically with the rest of the weight centred
        on the other three feet."""
        others = [i for i in range(N_LEGS) if i != self.leg]
        w = float(np.clip(f_probe[2] / self.params.weight, 0.0, 1.0))
        return w * self.world.feet[self.leg, :2] + (1 - w) * self.world.feet[others, :2].mean(axis=0)

    def _maybe_compare(self, forces, t0, seg=0.1):
        """Solve the probing problem with and without the support-polygon barrier from the current state.

        The base reference of each segment is the force-consistent posture and base momentum
        carries the default weight, so the MPC may shift the base to track the force; every
        segment of the (shared) solution counts as one probing step.
        """
        if not self.compare:
            return
        leg = self.leg
        x = self.world.x.copy()
        feet = self.world.feet.copy()
        contact = np.ones(N_LEGS, bool)
        held = self._probe_base
        tracks = []
        for k, f in enumerate(forces):
            base = held.copy()
            base[:2] = self._force_consistent_base(f)
            self._probe_base = base
            u = self._stance_forces(f)
            tracks.append(_hold_track(self.params, t0 + k * seg, t0 + (k + 1) * seg - 1e-6, base, feet, contact,
                                      u[None].repeat(2, axis=0)))
        self._probe_base = held
        end = t0 + len(forces) * seg
        track = tracks[0]
        for tr in tracks[1:] + [_hold_track(self.params, end, end + 5.0, base, feet, contact)]:
            track = concatenate_tracks(track, tr)
        profile = probing_profile(np.asarray(forces), UP, seg, t0=t0)
        A, b = support_polygon(feet, leg)
        solved = {}
        for label, support in (("with", (A, b, t0, FAR)), ("without", None)):
            cons = MpcConstraints(support=support, probing=(leg, profile, t0, end), weights=self.compare_weights)
            pb = self.mpc.build_problem(x, t0, track, cons)
            nlp = transcribe(pb)
            X0, U0 = self.mpc._warm_start(nlp, x)
            solved[label] = solve_sqp(nlp, X0, U0, max_iter=self.compare_iter, tol=self.mpc_cfg.tol)
        for k, f in enumerate(forces):
            out = {"t": t0 + k * seg, "leg": leg, "state": self.state.value, "segment": k}
            for label, traj in solved.items():
                times = traj.times[:-1]
                win = (times >= t0 + k * seg - 1e-9) & (times < t0 + (k + 1) * seg - 1e-9)
                h = traj.X[:, 6:8] @ A.T + b
                err = np.abs(traj.U[win, 3 * leg : 3 * leg + 3] - f)
                out[label] = {
                    "force_error": float(err.max()) if win.any() else 0.0,
                    "min_residual_alpha": float(np.min(h[:-1][win]) - self.mpc_cfg.alpha) if win.any() else 0.0,
                    "min_residual_window": float(np.min(h[:-1][win])) if win.any() else 0.0,
                    "converged": bool(traj.converged),
                }
            self.comparisons.append(out)

    def _solve_mpc(self):
        cons = self.cons
        if self.probing and cons.weights is None:
            cons = replace(cons, weights=self.move_weights)
        self.result = self.mpc.step(self.world.x, self.world.t, self.track, cons)
        if self.state in (ProbeState.PROBE, ProbeState.PROBE_AROUND) and self.cons.probing is not None:
            pb = self.result.problem
            if pb is not None and pb.support_polygon:
                X = self.result.trajectory.X
                h = X[:, 6:8] @ pb.A_s.T + pb.b_s - pb.alpha
                self.min_residual = min(self.min_residual, float(np.min(h[np.asarray(pb.support_mask, bool)])))

    def _command(self) -> Command:
        tr = self.result.trajectory
        t = self.world.t
        x_next = tr.state_at(t + self.sim.dt)
        u = tr.input_at(t)
        stance = self.track.sample([t]).contact[0]
        return Command(x_next, u[:12].reshape(N_LEGS, 3), stance)

    def _log_row(self):
        w = self.world
        A, b = self._support()
        res = A @ w.x[6:8] + b
        row = [f"{w.t:.3f}", self.state.value, LEGS[self.leg], ";".join(self.pending_events)]
        row += [f"{v:.5f}" for v in w.feet.ravel()]
        row += [f"{v:.3f}" for v in self.result.u[:12]]
        row += [f"{v:.3f}" for v in w.est_forces.ravel()]
        row += [f"{v:.5f}" for v in w.x[6:8]]
        row += [f"{v:.5f}" for v in res]
        row += [int(c) for c in w.collapsed]
        self.run_rows.append(row)
        self.pending_events = []
        probing = self.cons.probing
        if probing is not None and probing[2] - 1e-9 <= w.t < probing[3]:
            leg = probing[0]
            f_p = probing[1](w.t)
            kind = "envelope" if self.state is ProbeState.PROBE else "around"
            seg = self.phase.get("seg", self.phase.get("index", 0))
            self.probe_rows.append(
                [f"{w.t:.3f}", LEGS[leg], kind, seg]
                + [f"{v:.3f}" for v in f_p]
                + [f"{v:.3f}" for v in self.result.u[3 * leg : 3 * leg + 3]]
                + [f"{v:.3f}" for v in w.est_forces[leg]]
            )
        if self.state is ProbeState.PROBE:
            self.probe_base_history.append((w.t, w.x[6:9].copy()))
            hist = self.probe_base_history
            if len(hist) >= 3 and hist[-1][0] - hist[-3][0] < 0.021:
                dt = self.sim.mpc_period
                acc = (hist[-1][1] - 2 * hist[-2][1] + hist[-3][1]) / dt**2
                self.max_accel = max(self.max_accel, float(np.linalg.norm(acc)))
        else:
            self.probe_base_history = []
        bearing = w.load_bearing()
        if bearing.any():
            pen = w.support_heights[bearing] - w.feet[bearing, 2]
            self.max_penetration = max(self.max_penetration, float(np.max(pen)))

    # ------------------------------------------------------------ main loop
    def run(self) -> EpisodeResult:
        wall0 = time.perf_counter()
        next_mpc = 0.0
        try:
            while self.outcome is None:
                self.tick()
                if self.outcome is not None:
                    break
                if self.dirty or self.world.t >= next_mpc - 1e-9:
                    # a state change re-plans immediately
                    self._solve_mpc()
                    self._log_row()
                    next_mpc = round(self.world.t + self.sim.mpc_period, 9)
                    self.dirty = False
                sim_step(self.world, self._command())
                reason = fall_check(self.world, self.sim.fall_margin)
                if reason is not None:
                    self.outcome, self.fall_reason = "fell", reason
                    break
                if self.world.t >= self.max_time:
                    self.outcome = "stalled"
        except (SimulationFault, SingularityError, TerrainGeometryError) as exc:
            log.error("episode aborted: %s", exc)
            self.outcome, self.fall_reason = "error", str(exc)
        return EpisodeResult(
            traversed=self.outcome == "traversed",
            outcome=self.outcome,
            exit_code=EXIT_CODES[self.outcome],
            distance=float(self.world.x[6] - self.x_start[0]),
            steps=self.steps,
            strides=self.steps / N_LEGS,
            probe_segments=self.probe_segments,
            collapses=self.collapses,
            min_support_residual=None if not np.isfinite(self.min_residual) else float(self.min_residual),
            wall_clock=time.perf_counter() - wall0,
            sim_time=self.world.t,
            fall_reason=self.fall_reason,
            max_probe_acceleration=self.max_accel,
            max_contact_penetration=self.max_penetration,
            probing_footholds=[f.tolist() for f in self.footholds],
            probe_contacts=[c.tolist() for c in self.contacts],
            comparisons=self.comparisons,
        )

    # ------------------------------------------------------------ output
    def write_logs(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        axes = ("x", "y", "z")
        header = ["time", "state", "leg", "events"]
        header += [f"foot_{l}_{a}" for l in LEGS for a in axes]
        header += [f"fcmd_{l}_{a}" for l in LEGS for a in axes]
        header += [f"fest_{l}_{a}" for l in LEGS for a in axes]
        header += ["com_x", "com_y", "res_0", "res_1", "res_2"]
        header += [f"collapse_{l}" for l in LEGS]
        _write_csv(out_dir / "run_log.csv", header, self.run_rows)
        probe_header = ["time", "leg", "kind", "segment"]
        probe_header += [f"{s}_{a}" for s in ("fp", "fmpc", "fest") for a in axes]
        _write_csv(out_dir / "probe_forces.csv", probe_header, self.probe_rows)
        event_header = ["time", "from", "event", "to", "leg", "px", "py", "pz", "fx", "fy", "fz", "accepted"]
        _write_csv(out_dir / "events.csv", event_header, self.event_rows)
        if self.comparisons:
            rows = []
            for c in self.comparisons:
                rows.append([f"{c['t']:.3f}", LEGS[c["leg"]], c["state"]]
                            + [f"{c[k][m]:.6f}" for k in ("with", "without")
                               for m in ("force_error", "min_residual_alpha", "min_residual_window")])
            hdr = ["time", "leg", "state"] + [f"{k}_{m}" for k in ("with", "without")
                                              for m in ("force_error", "min_residual_alpha", "min_residual_window")]
            _write_csv(out_dir / "support_comparison.csv", hdr, rows)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def run_episode(cfg: ScenarioConfig, out_dir=None) -> EpisodeResult:
    """Run one closed-loop episode; writes logs and a JSON summary when ``out_dir`` is given."""
    sup = Supervisor(cfg)
    result = sup.run()
    if out_dir is not None:
        out = Path(out_dir)
        sup.write_logs(out)
        result.out_dir = str(out)
        with open(out / "summary.json", "w") as fh:
            json.dump(result.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return result
