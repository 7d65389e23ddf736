"""Stepping-probing state machine and its geometric helpers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from probewalk.model import (
    EUL,
    N_LEGS,
    POS,
    RobotParams,
    forward_kinematics,
    leg_index,
    rotation,
    support_polygon,
)
from probewalk.terrain import HeightGrid, height_at

log = logging.getLogger(__name__)


class ProbeState(Enum):
    PRE_OPT = "PRE_OPT"
    SEND = "SEND"
    OPT = "OPT"
    MOVE = "MOVE"
    DETECT_CONTACT = "DETECT_CONTACT"
    PROBE = "PROBE"
    PROBE_AROUND = "PROBE_AROUND"
    LEG_UP = "LEG_UP"
    RETURN_SAFE = "RETURN_SAFE"
    STOPPED = "STOPPED"


EVENTS = (
    "targets_ready",
    "vfa_done",
    "plan_ready",
    "base_safe",
    "lift_off",
    "contact",
    "no_contact_overextension",
    "probe_segment_done",
    "envelope_done",
    "around_done",
    "collapse",
    "alternatives_exhausted",
    "user_stop",
)

S = ProbeState
TRANSITIONS = {
    (S.PRE_OPT, "targets_ready"): S.SEND,
    (S.SEND, "vfa_done"): S.OPT,
    (S.OPT, "plan_ready"): S.MOVE,
    (S.MOVE, "base_safe"): S.MOVE,
    (S.MOVE, "lift_off"): S.DETECT_CONTACT,
    (S.DETECT_CONTACT, "contact"): S.PROBE,
    (S.DETECT_CONTACT, "no_contact_overextension"): S.LEG_UP,
    (S.PROBE, "probe_segment_done"): S.PROBE,
    (S.PROBE, "collapse"): S.LEG_UP,
    (S.PROBE, "envelope_done"): S.PROBE_AROUND,
    (S.PROBE_AROUND, "contact"): S.PROBE_AROUND,
    (S.PROBE_AROUND, "probe_segment_done"): S.PROBE_AROUND,
    (S.PROBE_AROUND, "collapse"): S.LEG_UP,
    (S.PROBE_AROUND, "no_contact_overextension"): S.LEG_UP,
    (S.PROBE_AROUND, "around_done"): S.PRE_OPT,
    (S.LEG_UP, "base_safe"): S.OPT,
    (S.LEG_UP, "alternatives_exhausted"): S.RETURN_SAFE,
    (S.RETURN_SAFE, "contact"): S.STOPPED,
    (S.RETURN_SAFE, "base_safe"): S.STOPPED,
}
for _state in ProbeState:
    TRANSITIONS[(_state, "user_stop")] = S.STOPPED
del _state


class TransitionError(RuntimeError):
    pass


class DetectorStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class FsmParams:
    step_length: float = 0.10
    contact_threshold: float = 20.0
    contact_streak: int = 3
    collapse_threshold: float = 0.03
    alternative_spacing: float = 0.075
    n_alternatives: int = 3
    segment_duration: float = 0.1
    around_radius: float = 0.025
    max_extension_ratio: float = 0.98
    leg_up_clearance: float = 0.15

    def __post_init__(self):
        for name in ("step_length", "contact_threshold", "collapse_threshold", "alternative_spacing",
                     "segment_duration", "around_radius", "leg_up_clearance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.contact_streak < 1 or self.n_alternatives < 0:
            raise ValueError("invalid counts")


@dataclass
class ProbeContext:
    probing_leg: int
    safe_footholds: np.ndarray  # (4, 3)
    snapshot: np.ndarray | None = None
    contact_position: np.ndarray | None = None
    alternatives: list = field(default_factory=list)
    around_points: list = field(default_factory=list)
    envelope_index: int = 0
    around_index: int = 0
    streak: int = 0
    attempt: int = 0
    target: np.ndarray | None = None

    def __post_init__(self):
        self.safe_footholds = np.array(self.safe_footholds, dtype=float)


@dataclass
class StepResult:
    state: ProbeState
    actions: list
    accepted: bool


def step(state: ProbeState, ctx: ProbeContext, event: str, strict: bool = False, **data) -> StepResult:
    """Apply one event; undefined pairs are rejected and leave the state unchanged."""
    key = (state, event)
    if key not in TRANSITIONS:
        msg = f"no transition from {state.value} on {event}"
        if strict:
            raise TransitionError(msg)
        log.warning(msg)
        return StepResult(state, [], False)
    new = TRANSITIONS[key]
    actions: list = []
    if key == (S.PRE_OPT, "targets_ready"):
        actions.append("run_vfa")
    elif key == (S.SEND, "vfa_done"):
        actions.append("optimize")
    elif key == (S.OPT, "plan_ready"):
        ctx.snapshot = ctx.safe_footholds.copy()
        if "target" in data:
            ctx.target = np.asarray(data["target"], dtype=float)
        if ctx.attempt == 0 and "alternatives" in data:
            ctx.alternatives = [np.asarray(a, dtype=float) for a in data["alternatives"]]
        ctx.streak = 0
        actions += ["snapshot_safe", "shift_base"]
    elif key == (S.MOVE, "base_safe"):
        actions.append("start_swing")
    elif key == (S.MOVE, "lift_off"):
        ctx.streak = 0
        actions.append("detect_contact")
    elif event == "contact" and state in (S.DETECT_CONTACT, S.PROBE_AROUND):
        ctx.streak = 0
        if state is S.DETECT_CONTACT:
            ctx.contact_position = np.asarray(data.get("position", ctx.target), dtype=float)
            ctx.envelope_index = 0
        actions.append("start_probe")
    elif key == (S.PROBE, "probe_segment_done"):
        ctx.envelope_index += 1
        actions.append("next_segment")
    elif key == (S.PROBE, "envelope_done"):
        ctx.around_index = 0
        if "around_points" in data:
            ctx.around_points = [np.asarray(p, dtype=float) for p in data["around_points"]]
        actions.append("start_around")
    elif key == (S.PROBE_AROUND, "probe_segment_done"):
        ctx.around_index += 1
        actions.append("next_around_point")
    elif key == (S.PROBE_AROUND, "around_done"):
        leg = ctx.probing_leg
        if ctx.contact_position is not None:
            ctx.safe_footholds[leg] = ctx.contact_position
        ctx.attempt = 0
        if "next_leg" in data:
            ctx.probing_leg = int(data["next_leg"])
        ctx.contact_position = None
        actions += ["update_safe", "next_leg"]
    elif event in ("collapse", "no_contact_overextension") and new is S.LEG_UP:
        actions.append("lift_leg")
    elif key == (S.LEG_UP, "base_safe"):
        if ctx.attempt >= len(ctx.alternatives):
            # caller should have sent alternatives_exhausted
            return step(state, ctx, "alternatives_exhausted", strict)
        ctx.target = ctx.alternatives[ctx.attempt]
        ctx.attempt += 1
        ctx.contact_position = None
        actions.append("use_alternative")
    elif key == (S.LEG_UP, "alternatives_exhausted"):
        actions.append("return_safe")
    elif new is S.STOPPED:
        actions.append("stop")
    return StepResult(new, actions, True)


def classify_pairs():
    """Every (state, event) pair mapped to its target state, or None when rejected."""
    return {(s, e): TRANSITIONS.get((s, e)) for s in ProbeState for e in EVENTS}


# ---------------------------------------------------------------- detectors


def detect_contact(force, normal, threshold: float = 20.0, streak: int = 0, required: int = 3):
    """Returns (contact, new_streak)."""
    fn = float(np.dot(force, normal))
    streak = streak + 1 if fn > threshold else 0
    return streak >= required, streak


@dataclass
class CollapseDetector:
    threshold: float = 0.03
    reference: np.ndarray | None = None

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("collapse threshold must be positive")

    def store(self, position) -> None:
        self.reference = np.asarray(position, dtype=float).copy()

    def displacement(self, position) -> float:
        if self.reference is None:
            raise DetectorStateError("no contact position stored")
        return float(np.linalg.norm(np.asarray(position, dtype=float) - self.reference))


def detect_collapse(detector: CollapseDetector, position) -> bool:
    return detector.displacement(position) > detector.threshold


# ---------------------------------------------------------------- geometry


def _unit_direction(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float)[:2]
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        raise ValueError("motion direction must be non-zero")
    return d / norm


def euler_from_normal(normal, yaw: float = 0.0) -> np.ndarray:
    """(yaw, pitch, roll) whose body z-axis equals the given surface normal."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    c, s = np.cos(yaw), np.sin(yaw)
    nl = np.array([c * n[0] + s * n[1], -s * n[0] + c * n[1], n[2]])
    roll = -np.arcsin(np.clip(nl[1], -1.0, 1.0))
    pitch = np.arctan2(nl[0], nl[2])
    return np.array([yaw, pitch, roll])


def nominal_footholds(params: RobotParams, base_pose) -> np.ndarray:
    q_b = np.asarray(base_pose, dtype=float)
    q_j = params.nominal_joints
    return np.array([forward_kinematics(params, q_b, q_j, leg) for leg in range(N_LEGS)])


def next_target(x, params: RobotParams, direction=None, normal=(0.0, 0.0, 1.0), step_length: float = 0.10,
                ground_height: float | None = None):
    """Base target one step ahead and the nominal footholds under it.

    Returns (base_pose (6,), footholds (4, 3)).
    """
    x = np.asarray(x, dtype=float)
    yaw = x[EUL][0]
    if direction is None:
        direction = rotation(x[EUL])[:2, 0]
    d = _unit_direction(direction)
    euler = euler_from_normal(normal, yaw)
    pos = x[POS].copy()
    pos[:2] += step_length * d
    if ground_height is not None:
        n = np.asarray(normal, dtype=float) / np.linalg.norm(normal)
        pos[2] = ground_height + params.leg_height / n[2] * n[2]
    base = np.concatenate([pos, euler])
    return base, nominal_footholds(params, base)


def _map_height(grid: HeightGrid | None, xy, fallback: float) -> float:
    if grid is None or grid.index_of(xy) is None:
        return fallback
    h = height_at(grid, xy)
    return fallback if np.isnan(h) else float(h)


def plan_alternatives(probe_point, direction, grid: HeightGrid | None = None, spacing: float = 0.075,
                      count: int = 3) -> list:
    p = np.asarray(probe_point, dtype=float)
    d = _unit_direction(direction)
    out = []
    for k in range(1, count + 1):
        xy = p[:2] + k * spacing * d
        out.append(np.array([xy[0], xy[1], _map_height(grid, xy, p[2])]))
    return out


def probe_around_points(p, radius: float = 0.025, direction=(1.0, 0.0), grid: HeightGrid | None = None) -> list:
    """Front, back, left and right of ``p`` in the motion frame."""
    p = np.asarray(p, dtype=float)
    d = _unit_direction(direction)
    lateral = np.array([-d[1], d[0]])
    out = []
    for offset in (radius * d, -radius * d, radius * lateral, -radius * lateral):
        xy = p[:2] + offset
        out.append(np.array([xy[0], xy[1], _map_height(grid, xy, p[2])]))
    return out


@dataclass
class ProbingProfile:
    forces: np.ndarray  # (k, 3) in application order
    segment: float = 0.1
    t0: float = 0.0

    @property
    def duration(self) -> float:
        return self.segment * len(self.forces)

    def segment_index(self, t: float) -> int:
        return int(np.clip(np.floor((t - self.t0) / self.segment + 1e-9), 0, len(self.forces) - 1))

    def __call__(self, t: float) -> np.ndarray:
        return self.forces[self.segment_index(t)]


def probing_profile(envelope, normal=(0.0, 0.0, 1.0), segment: float = 0.1, t0: float = 0.0) -> ProbingProfile:
    forces = np.asarray(envelope.forces if hasattr(envelope, "forces") else envelope, dtype=float)
    order = np.argsort(forces @ np.asarray(normal, dtype=float), kind="stable")
    return ProbingProfile(forces[order], segment, t0)


def triangle_incenter(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)[:, :2]
    a = np.linalg.norm(pts[1] - pts[2])
    b = np.linalg.norm(pts[0] - pts[2])
    c = np.linalg.norm(pts[0] - pts[1])
    return (a * pts[0] + b * pts[1] + c * pts[2]) / (a + b + c)


@dataclass
class LegUpReference:
    base_xy: np.ndarray
    foot: np.ndarray
    feet: np.ndarray  # (4, 3) with the lifted foot replaced


def leg_up_reference(ctx: ProbeContext, params: RobotParams, x, feet, clearance: float = 0.15) -> LegUpReference:
    """Base at the incenter of the other three feet; lifted foot below its hip."""
    x = np.asarray(x, dtype=float)
    leg = leg_index(ctx.probing_leg)
    feet = np.asarray(feet, dtype=float)
    others = feet[[j for j in range(N_LEGS) if j != leg]]
    base_xy = triangle_incenter(others)
    R = rotation(x[EUL])
    hip = x[POS] + R @ params.hip_offsets[leg]
    foot = np.array([hip[0], hip[1], hip[2] - clearance])
    out = feet.copy()
    out[leg] = foot
    return LegUpReference(base_xy, foot, out)


def support_residuals(feet, leg, com_xy, alpha: float = 0.0) -> np.ndarray:
    A_s, b_s = support_polygon(feet, leg)
    return A_s @ np.asarray(com_xy, dtype=float)[:2] + b_s - alpha
