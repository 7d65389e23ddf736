"""Cost terms and constraint residuals of the locomotion OCP (single-knot forms)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from probewalk.model import NU, NX
from probewalk.ocp.barriers import BarrierParams, relaxed_log_barrier


class ScheduleError(ValueError):
    """A constraint was requested for a leg whose contact state forbids it."""


def _diag(values, n, name):
    v = np.asarray(values, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{name} must have {n} entries")
    if np.any(v < 0):
        raise ValueError(f"{name} entries must be non-negative")
    return v


@dataclass(frozen=True)
class Weights:
    Q: np.ndarray = field(default_factory=lambda: default_state_weights())
    R: np.ndarray = field(default_factory=lambda: default_input_weights())
    W_p: float = 2e4
    W_v: float = 1e3

    def __post_init__(self):
        object.__setattr__(self, "Q", _diag(self.Q, NX, "Q"))
        object.__setattr__(self, "R", _diag(self.R, NU, "R"))
        if self.W_p < 0 or self.W_v < 0:
            raise ValueError("foot weights must be non-negative")


def default_state_weights(momentum=10.0, position=5e4, orientation=2e4, joints=100.0):
    return np.concatenate([np.full(6, momentum), np.full(3, position), np.full(3, orientation), np.full(12, joints)])


def default_input_weights(force=0.1, joint_velocity=10.0):
    return np.concatenate([np.full(12, force), np.full(12, joint_velocity)])


@dataclass
class References:
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray  # (4, 3)
    v: np.ndarray  # (4, 3)
    swing: np.ndarray = field(default_factory=lambda: np.zeros(4, bool))


def stage_cost(x, u, feet_p, feet_v, refs: References, weights: Weights, barriers=()) -> float:
    """Tracking cost at one knot plus the listed barrier terms.

    ``barriers`` is an iterable of ``(h, BarrierParams)``. Velocity tracking
    applies to swing legs only; stance feet are pinned by equalities.
    """
    dx = np.asarray(x, float) - refs.x
    du = np.asarray(u, float) - refs.u
    dp = np.asarray(feet_p, float) - refs.p
    dv = (np.asarray(feet_v, float) - refs.v)[np.asarray(refs.swing, bool)]
    cost = 0.5 * (dx @ (weights.Q * dx) + du @ (weights.R * du))
    cost += 0.5 * weights.W_p * np.sum(dp * dp) + 0.5 * weights.W_v * np.sum(dv * dv)
    for h, bp in barriers:
        cost += float(np.sum(relaxed_log_barrier(h, bp)))
    return float(cost)


def friction_cone_residual(f, n, mu_c: float) -> float:
    f = np.asarray(f, dtype=float)
    n = np.asarray(n, dtype=float)
    fn = f @ n
    return float(mu_c * fn - np.linalg.norm(f - fn * n))


def foot_placement_residuals(p, hs) -> np.ndarray:
    return hs.A @ np.asarray(p, dtype=float) + hs.b


def support_polygon_residuals(r_xy, A_s, b_s, alpha: float) -> np.ndarray:
    return np.asarray(A_s, float) @ np.asarray(r_xy, float)[:2] + np.asarray(b_s, float) - alpha


def probing_force_residual(f, f_p, in_contact: bool = True) -> np.ndarray:
    if not in_contact:
        raise ScheduleError("probing force applied to a leg in swing")
    return np.asarray(f, dtype=float) - np.asarray(f_p, dtype=float)


def probing_barrier_rows(residual) -> np.ndarray:
    """Symmetric soft-equality rows: the barrier sees delta - |r| style pairs."""
    r = np.asarray(residual, dtype=float)
    return np.concatenate([r, -r])


@dataclass(frozen=True)
class ModeConstraints:
    velocity_rows: tuple  # legs with v_i = 0
    zero_force_rows: tuple  # legs with f_i = 0
    normal_velocity_rows: tuple  # legs with n.v_i = v_ref
    cone_legs: tuple

    @property
    def n_equalities(self) -> int:
        return 3 * len(self.velocity_rows) + 3 * len(self.zero_force_rows) + len(self.normal_velocity_rows)


def mode_constraints(contact) -> ModeConstraints:
    contact = [bool(c) for c in contact]
    if len(contact) != 4:
        raise ValueError("contact set must list four legs")
    stance = tuple(i for i, c in enumerate(contact) if c)
    swing = tuple(i for i, c in enumerate(contact) if not c)
    return ModeConstraints(stance, swing, swing, stance)
