"""Relaxed log-barrier penalties for soft inequality constraints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BarrierParams:
    mu: float
    delta: float

    def __post_init__(self):
        if self.mu <= 0 or self.delta <= 0:
            raise ValueError("barrier parameters must be positive")


# Published tuning for the locomotion MPC with probing constraints.
TABLE_I = {
    "friction_cone": BarrierParams(10.0, 0.1),
    "foot_placement": BarrierParams(0.1, 0.005),
    "joint_position": BarrierParams(0.1, 0.01),
    "joint_velocity": BarrierParams(0.1, 0.1),
    "contact_force": BarrierParams(1.0, 0.5),
    "support_polygon": BarrierParams(100.0, 0.02),
    "probing_force": BarrierParams(0.7, 0.7),
}


def relaxed_log_barrier(h, bp: BarrierParams):
    """-mu*ln(h) above delta, quadratic extension below; C2 at h = delta."""
    return barrier_derivatives(h, bp.mu, bp.delta)[0]


def barrier_derivatives(h, mu: float, delta: float):
    """Value, first and second derivative of the relaxed barrier, elementwise."""
    h = np.asarray(h, dtype=float)
    inner = h > delta
    safe_h = np.where(inner, h, 1.0)
    z = (h - 2.0 * delta) / delta
    value = np.where(inner, -mu * np.log(safe_h), mu * (0.5 * z * z - 0.5 - np.log(delta)))
    d1 = np.where(inner, -mu / safe_h, mu * (h - 2.0 * delta) / delta**2)
    d2 = np.where(inner, mu / safe_h**2, mu / delta**2)
    if value.ndim == 0:
        return float(value), float(d1), float(d2)
    return value, d1, d2
