"""Self-check suites behind ``probewalk check``; each returns a :class:`SuiteReport`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from probewalk.fsm import (
    EVENTS,
    TRANSITIONS,
    ProbeContext,
    ProbeState,
    TransitionError,
    classify_pairs,
    plan_alternatives,
    probe_around_points,
    step,
)
from probewalk.model import (
    N_LEGS,
    RobotParams,
    WorkspaceError,
    estimate_contact_force,
    forward_kinematics,
    inverse_kinematics,
    leg_jacobian,
    synthesize_torques,
)
from probewalk.ocp.barriers import TABLE_I, barrier_derivatives
from probewalk.planner import extract_grf_envelope
from probewalk.vfa import SIZE, FootholdHeightmap, NoSafeFootholdError, SafetyMask, select_cell


@dataclass
class SuiteReport:
    name: str
    passed: int = 0
    failed: int = 0
    failures: list = field(default_factory=list)

    def record(self, ok: bool, what: str) -> None:
        if ok:
            self.passed += 1
        else:
            self.failed += 1
            self.failures.append(what)

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def lines(self) -> list[str]:
        out = [f"{self.name}: {self.passed} passed, {self.failed} failed"]
        out += [f"  FAIL {f}" for f in self.failures[:20]]
        return out


def _random_pose(rng, params):
    q_b = np.r_[rng.uniform(-0.05, 0.05, 2), params.leg_height + rng.uniform(-0.05, 0.05),
                rng.uniform(-0.15, 0.15, 3)]
    q_j = np.zeros(12)
    for leg in range(N_LEGS):
        q_j[3 * leg : 3 * leg + 3] = [rng.uniform(-0.3, 0.3), rng.uniform(0.3, 1.2), rng.uniform(-2.2, -0.8)]
    return q_b, q_j


def check_kinematics(seed: int = 0, n: int = 100) -> SuiteReport:
    rep = SuiteReport("kinematics")
    rng = np.random.default_rng(seed)
    params = RobotParams()
    eps = 1e-6
    for k in range(n):
        q_b, q_j = _random_pose(rng, params)
        for leg in range(N_LEGS):
            sl = slice(3 * leg, 3 * leg + 3)
            foot = forward_kinematics(params, q_b, q_j, leg)
            try:
                q = inverse_kinematics(params, q_b, foot, leg)
            except WorkspaceError as exc:
                rep.record(False, f"pose {k} leg {leg}: IK raised {exc}")
                continue
            rep.record(np.allclose(q, q_j[sl], atol=1e-8), f"pose {k} leg {leg}: IK(FK(q)) != q")
            J = leg_jacobian(params, q_b, q_j, leg)
            fd = np.zeros((3, 3))
            for j in range(3):
                dq = q_j.copy()
                dq[3 * leg + j] += eps
                fd[:, j] = (forward_kinematics(params, q_b, dq, leg) - foot) / eps
            rep.record(np.allclose(J, fd, atol=1e-5), f"pose {k} leg {leg}: Jacobian vs finite difference")
            f = np.r_[rng.uniform(-40, 40, 2), rng.uniform(0, 150)]
            tau = synthesize_torques(params, q_b, q_j[sl], np.zeros(3), f, leg)
            est = estimate_contact_force(params, q_b, q_j[sl], np.zeros(3), tau, leg)
            rep.record(np.max(np.abs(est - f)) <= 1e-6, f"pose {k} leg {leg}: force round trip")
    return rep


def check_barriers(rel_step: float = 1e-7, tol: float = 1e-6) -> SuiteReport:
    """Relaxed barriers are C2 at h = delta: branch values agree and central differences match."""
    rep = SuiteReport("barriers")
    for name, bp in TABLE_I.items():
        mu, d = bp.mu, bp.delta
        log_branch = (-mu * np.log(d), -mu / d, mu / d**2)
        at = barrier_derivatives(d, mu, d)
        for order in range(3):
            scale = max(1.0, abs(log_branch[order]))
            rep.record(abs(at[order] - log_branch[order]) <= tol * scale, f"{name}: order {order} value")
        # the quadratic tail, evaluated just below delta, joins the log branch
        tail = barrier_derivatives(d * (1.0 - 1e-12), mu, d)
        for order in range(3):
            scale = max(1.0, abs(log_branch[order]))
            rep.record(abs(tail[order] - log_branch[order]) <= tol * scale, f"{name}: order {order} join")
        h = rel_step * d
        lo, hi = barrier_derivatives(d - h, mu, d), barrier_derivatives(d + h, mu, d)
        for order in (1, 2):
            fd = (hi[order - 1] - lo[order - 1]) / (2 * h)
            rep.record(abs(fd - at[order]) <= tol * abs(at[order]), f"{name}: derivative {order} mismatch")
    return rep


def _brute_envelope(seg):
    out = []
    for axis in range(3):
        col = [row[axis] for row in seg]
        hi = max(range(len(col)), key=lambda i: (col[i], -i))
        lo = min(range(len(col)), key=lambda i: (col[i], i))
        out.append(seg[hi])
        out.append(seg[lo])
    return np.array(out)


def check_envelope(seed: int = 0, n: int = 100) -> SuiteReport:
    rep = SuiteReport("envelope")
    rng = np.random.default_rng(seed)
    for k in range(n):
        length = int(rng.integers(5, 80))
        forces = rng.normal(0.0, 50.0, (length, 3))
        a = int(rng.integers(0, length))
        b = int(rng.integers(a, length))
        env = extract_grf_envelope(forces, 0, (a, b))
        rep.record(np.array_equal(env.forces, _brute_envelope(forces[a : b + 1])), f"trajectory {k}")
    return rep


def _compress(states):
    return [s for i, s in enumerate(states) if i == 0 or s is not states[i - 1]]


def scripted_traces():
    """The three reference event scripts: name -> (event list, expected state path)."""
    S = ProbeState
    touch = np.array([0.34, -0.13, 0.0])
    alts = plan_alternatives(touch, (1.0, 0.0))
    start = [("targets_ready", {}), ("vfa_done", {}), ("plan_ready", {"alternatives": alts, "target": touch})]
    probe = [("base_safe", {}), ("lift_off", {}), ("contact", {"position": touch})]
    happy = start + probe + [("probe_segment_done", {})] * 5
    happy += [("envelope_done", {"around_points": probe_around_points(touch)})]
    happy += [("contact", {}), ("probe_segment_done", {})] * 4 + [("around_done", {"next_leg": 2})]
    single = start + probe + [("collapse", {}), ("base_safe", {})]
    exhausted = list(start)
    for k in range(4):
        exhausted += probe + [("collapse", {})]
        if k < 3:
            exhausted += [("base_safe", {}), ("plan_ready", {"alternatives": alts})]
    exhausted += [("alternatives_exhausted", {}), ("contact", {})]
    head = [S.PRE_OPT, S.SEND, S.OPT, S.MOVE, S.DETECT_CONTACT, S.PROBE]
    return {
        "happy path": (happy, head + [S.PROBE_AROUND, S.PRE_OPT]),
        "single collapse": (single, head + [S.LEG_UP, S.OPT]),
        "alternatives exhausted": (
            exhausted,
            head + [S.LEG_UP, S.OPT, S.MOVE, S.DETECT_CONTACT, S.PROBE] * 3 + [S.LEG_UP, S.RETURN_SAFE, S.STOPPED],
        ),
    }


def replay_trace(script):
    state = ProbeState.PRE_OPT
    ctx = ProbeContext(1, np.zeros((N_LEGS, 3)))
    seen = [state]
    for event, data in script:
        state = step(state, ctx, event, strict=True, **data).state
        seen.append(state)
    return seen, ctx


def check_fsm() -> SuiteReport:
    rep = SuiteReport("fsm")
    table = classify_pairs()
    rep.record(len(table) == len(ProbeState) * len(EVENTS), "pair count")
    for (state, event), target in table.items():
        ctx = ProbeContext(0, np.zeros((N_LEGS, 3)))
        ctx.alternatives = [np.zeros(3)] * 3
        try:
            res = step(state, ctx, event, strict=True)
            ok = target is not None and res.state is target
        except TransitionError:
            ok = target is None
        rep.record(ok, f"{state.name} x {event}")
    rep.record(set(TRANSITIONS) <= set(table), "transition keys are valid pairs")
    for name, (script, expected) in scripted_traces().items():
        try:
            seen, _ = replay_trace(script)
            ok = _compress(seen) == expected
        except TransitionError:
            ok = False
        rep.record(ok, f"trace: {name}")
    return rep


def _brute_nearest(safe):
    best, best_d = None, None
    for i in range(SIZE):
        for j in range(SIZE):
            if safe[i, j]:
                d = (i - SIZE // 2) ** 2 + (j - SIZE // 2) ** 2
                if best_d is None or d < best_d:
                    best, best_d = (i, j), d
    return best


def check_vfa(seed: int = 0, n: int = 100) -> SuiteReport:
    rep = SuiteReport("vfa")
    rng = np.random.default_rng(seed)
    for k in range(n):
        safe = rng.random((SIZE, SIZE)) < rng.uniform(0.02, 0.6)
        mask = SafetyMask(safe, np.where(safe, "none", "roughness"))
        want = _brute_nearest(safe)
        try:
            got = select_cell(mask)
        except NoSafeFootholdError:
            got = None
        rep.record(got == want, f"mask {k}: {got} != {want}")
    fhm = FootholdHeightmap(np.zeros(2), np.zeros((SIZE, SIZE)), 0.02)
    rep.record(np.allclose(fhm.cell_xy(SIZE // 2, SIZE // 2), 0.0), "centre cell maps to the target")
    return rep


SUITES = {
    "kinematics": check_kinematics,
    "barriers": check_barriers,
    "envelope": check_envelope,
    "fsm": check_fsm,
    "vfa": check_vfa,
}


def run_suite(name: str) -> SuiteReport:
    try:
        fn = SUITES[name]
    except KeyError:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}") from None
    return fn()
