"""Quadruped kinematics, lumped-mass centroidal dynamics and contact-force estimation.

State layout (24): centroidal momentum (linear 0:3, angular 3:6), base position
6:9, base ZYX Euler angles (yaw, pitch, roll) 9:12, joint positions 12:24.
Input layout (24): contact forces in world frame 0:12, joint velocities 12:24.

Every leg has three joints: abduction about the base x-axis, hip flexion and
knee about the abducted y-axis.  Legs are ordered LF, RF, LH, RH.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from probewalk import LEGS

GRAVITY = np.array([0.0, 0.0, -9.81])
NX = 24
NU = 24
N_LEGS = 4
N_JOINTS = 12

H_LIN = slice(0, 3)
H_ANG = slice(3, 6)
POS = slice(6, 9)
EUL = slice(9, 12)
QJ = slice(12, 24)
FORCES = slice(0, 12)
QD = slice(12, 24)


class WorkspaceError(ValueError):
    """Foot target outside the reachable workspace of a leg."""

    def __init__(self, message: str, overextended: bool = False):
        super().__init__(message)
        self.overextended = overextended


class SingularityError(RuntimeError):
    pass


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class RobotParams:
    # hip-flexion joint positions in the base frame at zero abduction
    hip_offsets: np.ndarray = field(
        default_factory=lambda: np.array(
            [[0.24, 0.13, 0.0], [0.24, -0.13, 0.0], [-0.24, 0.13, 0.0], [-0.24, -0.13, 0.0]]
        )
    )
    abduction_length: float = 0.08
    thigh_length: float = 0.28
    shank_length: float = 0.28
    mass: float = 21.0
    base_inertia: np.ndarray = field(default_factory=lambda: np.array([0.15, 0.45, 0.5]))
    leg_height: float = 0.40
    footpad_radius: float = 0.025
    # point masses used only for the per-leg bias torques
    hip_mass: float = 1.0
    thigh_mass: float = 1.0
    shank_mass: float = 0.3
    joint_lower: np.ndarray = field(default_factory=lambda: np.array([-0.8, -1.0, -2.7]))
    joint_upper: np.ndarray = field(default_factory=lambda: np.array([0.8, 2.5, -0.3]))
    joint_velocity_limit: float = 20.0
    jacobian_condition_limit: float = 1e4

    def __post_init__(self):
        for name in ("abduction_length", "thigh_length", "shank_length", "mass", "leg_height"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if np.any(np.asarray(self.base_inertia) <= 0):
            raise ValueError("base inertia must be positive")
        if self.leg_height >= self.thigh_length + self.shank_length:
            raise ValueError("nominal leg height exceeds the leg length")

    @property
    def sides(self) -> np.ndarray:
        return np.sign(self.hip_offsets[:, 1])

    @property
    def abduction_axes(self) -> np.ndarray:
        out = self.hip_offsets.copy()
        out[:, 1] -= self.sides * self.abduction_length
        return out

    @property
    def weight(self) -> float:
        return self.mass * -GRAVITY[2]

    @property
    def max_extension(self) -> float:
        return self.thigh_length + self.shank_length

    @property
    def nominal_leg_angles(self) -> np.ndarray:
        """Hip/knee angles putting the foot straight below the hip at leg_height."""
        l1, l2, h = self.thigh_length, self.shank_length, self.leg_height
        knee = -np.arccos((h * h - l1 * l1 - l2 * l2) / (2 * l1 * l2))
        hip = -np.arctan2(l2 * np.sin(knee), l1 + l2 * np.cos(knee))
        return np.array([0.0, hip, knee])

    @property
    def nominal_joints(self) -> np.ndarray:
        return np.tile(self.nominal_leg_angles, N_LEGS)

    @classmethod
    def from_file(cls, path) -> "RobotParams":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        return cls.from_mapping(dict(parser["robot"]) if parser.has_section("robot") else {})

    @classmethod
    def from_mapping(cls, values: dict) -> "RobotParams":
        kwargs = {}
        known = {f.name for f in fields(cls)}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown robot parameter {key!r}")
            parts = [float(v) for v in str(raw).replace(",", " ").split()]
            if key == "hip_offsets":
                kwargs[key] = np.array(parts).reshape(N_LEGS, 3)
            elif key in ("base_inertia", "joint_lower", "joint_upper"):
                kwargs[key] = np.array(parts)
            else:
                kwargs[key] = parts[0]
        return cls(**kwargs)

    def with_values(self, **kwargs) -> "RobotParams":
        return replace(self, **kwargs)


@dataclass
class RobotState:
    h_com: np.ndarray
    q_b: np.ndarray
    q_j: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.h_com, self.q_b, self.q_j])

    @classmethod
    def from_vector(cls, x) -> "RobotState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:6].copy(), x[6:12].copy(), x[12:24].copy())

    @classmethod
    def nominal(cls, params: RobotParams, position=(0.0, 0.0, None)) -> "RobotState":
        pos = np.array([position[0], position[1], params.leg_height if position[2] is None else position[2]])
        return cls(np.zeros(6), np.concatenate([pos, np.zeros(3)]), params.nominal_joints.copy())


@dataclass
class ControlInput:
    forces: np.ndarray
    qdot: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.forces).reshape(-1), self.qdot])

    @classmethod
    def from_vector(cls, u) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        return cls(u[FORCES].reshape(N_LEGS, 3).copy(), u[QD].copy())


def leg_index(leg) -> int:
    if isinstance(leg, str):
        return LEGS.index(leg)
    if not 0 <= int(leg) < N_LEGS:
        raise IndexError(f"leg index {leg} out of range")
    return int(leg)


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rotation(euler, derivatives: bool = False):
    """World-from-base rotation for ZYX Euler angles (yaw, pitch, roll).

    With ``derivatives`` also returns dR[..., k, :, :] = dR/d(euler_k).
    """
    e = np.asarray(euler, dtype=float)
    cy, sy = np.cos(e[..., 0]), np.sin(e[..., 0])
    cp, sp = np.cos(e[..., 1]), np.sin(e[..., 1])
    cr, sr = np.cos(e[..., 2]), np.sin(e[..., 2])
    R = np.empty(e.shape[:-1] + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    if not derivatives:
        return R
    dR = np.empty(e.shape[:-1] + (3, 3, 3))
    # yaw
    dR[..., 0, 0, :] = -R[..., 1, :]
    dR[..., 0, 1, :] = R[..., 0, :]
    dR[..., 0, 2, :] = 0.0
    # pitch
    dR[..., 1, 0, 0] = -cy * sp
    dR[..., 1, 0, 1] = cy * cp * sr
    dR[..., 1, 0, 2] = cy * cp * cr
    dR[..., 1, 1, 0] = -sy * sp
    dR[..., 1, 1, 1] = sy * cp * sr
    dR[..., 1, 1, 2] = sy * cp * cr
    dR[..., 1, 2, 0] = -cp
    dR[..., 1, 2, 1] = -sp * sr
    dR[..., 1, 2, 2] = -sp * cr
    # roll
    dR[..., 2, :, 0] = 0.0
    dR[..., 2, :, 1] = R[..., :, 2]
    dR[..., 2, :, 2] = -R[..., :, 1]
    return R, dR


def euler_rates(euler, omega, derivatives: bool = False):
    """Map world angular velocity to ZYX Euler angle rates."""
    e = np.asarray(euler, dtype=float)
    w = np.asarray(omega, dtype=float)
    cy, sy = np.cos(e[..., 0]), np.sin(e[..., 0])
    cp, sp = np.cos(e[..., 1]), np.sin(e[..., 1])
    tp = sp / cp
    a = cy * w[..., 0] + sy * w[..., 1]
    b = -sy * w[..., 0] + cy * w[..., 1]
    rates = np.stack([w[..., 2] + tp * a, b, a / cp], axis=-1)
    if not derivatives:
        return rates
    Einv = np.zeros(e.shape[:-1] + (3, 3))
    Einv[..., 0, 0] = tp * cy
    Einv[..., 0, 1] = tp * sy
    Einv[..., 0, 2] = 1.0
    Einv[..., 1, 0] = -sy
    Einv[..., 1, 1] = cy
    Einv[..., 2, 0] = cy / cp
    Einv[..., 2, 1] = sy / cp
    d_euler = np.zeros(e.shape[:-1] + (3, 3))
    d_euler[..., 0, 0] = tp * b
    d_euler[..., 1, 0] = -a
    d_euler[..., 2, 0] = b / cp
    d_euler[..., 0, 1] = a / cp**2
    d_euler[..., 2, 1] = a * sp / cp**2
    return rates, Einv, d_euler


def _point_kinematics(q, axis, side, l_abd, l1, l2, hessian=False):
    """Base-frame position of a point on the leg chain, with Jacobian (and Hessian).

    ``q`` has shape (..., 3); ``axis``/``side`` broadcast against the leading dims.
    """
    a, h, k = q[..., 0], q[..., 1], q[..., 2]
    ca, sa = np.cos(a), np.sin(a)
    ch, sh = np.cos(h), np.sin(h)
    chk, shk = np.cos(h + k), np.sin(h + k)
    x = -l1 * sh - l2 * shk
    z = -l1 * ch - l2 * chk
    yl = side * l_abd
    p = np.empty(q.shape)
    p[..., 0] = axis[..., 0] + x
    p[..., 1] = axis[..., 1] + ca * yl - sa * z
    p[..., 2] = axis[..., 2] + sa * yl + ca * z

    x_h, x_k = -l1 * ch - l2 * chk, -l2 * chk
    z_h, z_k = l1 * sh + l2 * shk, l2 * shk
    J = np.empty(q.shape + (3,))
    J[..., 0, 0] = 0.0
    J[..., 1, 0] = -sa * yl - ca * z
    J[..., 2, 0] = ca * yl - sa * z
    J[..., 0, 1] = x_h
    J[..., 1, 1] = -sa * z_h
    J[..., 2, 1] = ca * z_h
    J[..., 0, 2] = x_k
    J[..., 1, 2] = -sa * z_k
    J[..., 2, 2] = ca * z_k
    if not hessian:
        return p, J
    x_hh, x_hk, x_kk = l1 * sh + l2 * shk, l2 * shk, l2 * shk
    z_hh, z_hk, z_kk = l1 * ch + l2 * chk, l2 * chk, l2 * chk
    H = np.zeros(q.shape + (3, 3))
    # d2/da2
    H[..., 1, 0, 0] = -(ca * yl - sa * z)
    H[..., 2, 0, 0] = -(sa * yl + ca * z)
    # d2/dadh, d2/dadk
    for j, zj in ((1, z_h), (2, z_k)):
        H[..., 1, 0, j] = H[..., 1, j, 0] = -ca * zj
        H[..., 2, 0, j] = H[..., 2, j, 0] = -sa * zj
    for (i, j), xx, zz in (((1, 1), x_hh, z_hh), ((1, 2), x_hk, z_hk), ((2, 2), x_kk, z_kk)):
        H[..., 0, i, j] = H[..., 0, j, i] = xx
        H[..., 1, i, j] = H[..., 1, j, i] = -sa * zz
        H[..., 2, i, j] = H[..., 2, j, i] = ca * zz
    return p, J, H


def leg_kinematics(params: RobotParams, q_legs, hessian=False):
    """Foot positions in the base frame for joint array (..., 4, 3)."""
    q_legs = np.asarray(q_legs, dtype=float)
    return _point_kinematics(
        q_legs,
        params.abduction_axes,
        params.sides,
        params.abduction_length,
        params.thigh_length,
        params.shank_length,
        hessian=hessian,
    )


def forward_kinematics(params: RobotParams, q_b, q_j, leg) -> np.ndarray:
    i = leg_index(leg)
    q_b = np.asarray(q_b, dtype=float)
    s, _ = leg_kinematics(params, np.asarray(q_j, dtype=float).reshape(N_LEGS, 3))
    return q_b[:3] + rotation(q_b[3:6]) @ s[i]


def feet_positions(params: RobotParams, q_b, q_j) -> np.ndarray:
    q_b = np.asarray(q_b, dtype=float)
    s, _ = leg_kinematics(params, np.asarray(q_j, dtype=float).reshape(N_LEGS, 3))
    return q_b[:3] + s @ rotation(q_b[3:6]).T


def leg_jacobian(params: RobotParams, q_b, q_j, leg) -> np.ndarray:
    """3x3 map from the leg's joint velocities to world foot velocity (fixed base)."""
    i = leg_index(leg)
    _, J = leg_kinematics(params, np.asarray(q_j, dtype=float).reshape(N_LEGS, 3))
    return rotation(np.asarray(q_b, dtype=float)[3:6]) @ J[i]


def inverse_kinematics(params: RobotParams, q_b, target, leg) -> np.ndarray:
    """Joint angles (abduction, hip, knee) reaching a world foot target.

    The knee-backward branch (knee angle < 0) is returned.
    """
    i = leg_index(leg)
    q_b = np.asarray(q_b, dtype=float)
    local = rotation(q_b[3:6]).T @ (np.asarray(target, dtype=float) - q_b[:3])
    return _leg_ik(params, local[None], np.array([i]))[0]


def _leg_ik(params: RobotParams, local, legs, strict=True):
    """Batched IK for base-frame targets ``local`` (n, 3) of legs ``legs`` (n,)."""
    rel = local - params.abduction_axes[legs]
    side = params.sides[legs]
    l = params.abduction_length
    l1, l2 = params.thigh_length, params.shank_length
    d2 = rel[:, 1] ** 2 + rel[:, 2] ** 2
    sag2 = d2 - l * l
    if np.any(sag2 <= 0):
        raise WorkspaceError("target inside the abduction offset")
    z = -np.sqrt(sag2)
    abd = np.arctan2(rel[:, 2], rel[:, 1]) - np.arctan2(z, side * l)
    abd = (abd + np.pi) % (2 * np.pi) - np.pi
    x = rel[:, 0]
    r2 = x * x + z * z
    cos_k = (r2 - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    if np.any(cos_k > 1.0):
        if strict or np.any(cos_k > 1.0 + 1e-12):
            raise WorkspaceError("target beyond maximum leg extension", overextended=True)
    if np.any(cos_k < -1.0):
        raise WorkspaceError("target too close to the hip")
    knee = -np.arccos(np.clip(cos_k, -1.0, 1.0))
    hip = np.arctan2(-x, -z) - np.arctan2(l2 * np.sin(knee), l1 + l2 * np.cos(knee))
    return np.stack([abd, hip, knee], axis=-1)


def inverse_kinematics_all(params: RobotParams, q_b, feet) -> np.ndarray:
    """Joint vector (12,) placing all four feet at world positions ``feet`` (4, 3)."""
    q_b = np.asarray(q_b, dtype=float)
    local = (np.asarray(feet, dtype=float) - q_b[:3]) @ rotation(q_b[3:6])
    return _leg_ik(params, local, np.arange(N_LEGS)).reshape(-1)


def inverse_kinematics_batch(params: RobotParams, positions, eulers, feet) -> np.ndarray:
    """IK over a trajectory: base positions (n,3), eulers (n,3), feet (n,4,3) -> (n,12)."""
    R = rotation(eulers)
    local = np.einsum("nlk,nkj->nlj", feet - positions[:, None, :], R)
    n = local.shape[0]
    legs = np.tile(np.arange(N_LEGS), n)
    return _leg_ik(params, local.reshape(-1, 3), legs).reshape(n, N_JOINTS)


def leg_extension(params: RobotParams, q_leg) -> float:
    """Hip-to-foot distance in the sagittal plane as a fraction of the leg length."""
    h, k = q_leg[1], q_leg[2]
    l1, l2 = params.thigh_length, params.shank_length
    r = np.hypot(l1 * np.sin(h) + l2 * np.sin(h + k), l1 * np.cos(h) + l2 * np.cos(h + k))
    return float(r / params.max_extension)


# ---------------------------------------------------------------- leg dynamics


def _leg_links(params: RobotParams):
    l1, l2 = params.thigh_length, params.shank_length
    return (
        (params.hip_mass, 0.0, 0.0),
        (params.thigh_mass, 0.5 * l1, 0.0),
        (params.shank_mass, l1, 0.5 * l2),
    )


def leg_bias_torques(params: RobotParams, q_b, q_leg, qd_leg, leg) -> np.ndarray:
    """Centrifugal, Coriolis and gravity torques of one leg with the base held fixed."""
    i = leg_index(leg)
    q_leg = np.asarray(q_leg, dtype=float)
    qd_leg = np.asarray(qd_leg, dtype=float)
    R = rotation(np.asarray(q_b, dtype=float)[3:6])
    g_base = R.T @ GRAVITY
    axis = params.abduction_axes[i]
    side = params.sides[i]
    tau = np.zeros(3)
    for m, l1, l2 in _leg_links(params):
        _, J, H = _point_kinematics(q_leg, axis, side, params.abduction_length, l1, l2, hessian=True)
        accel = np.einsum("cab,a,b->c", H, qd_leg, qd_leg)
        tau += m * J.T @ (accel - g_base)
    return tau


def synthesize_torques(params: RobotParams, q_b, q_leg, qd_leg, force, leg) -> np.ndarray:
    """Joint torques holding ground reaction ``force`` (world) in a static leg: tau = h - J^T f."""
    q_j = np.zeros(N_JOINTS)
    i = leg_index(leg)
    q_j[3 * i : 3 * i + 3] = q_leg
    J = leg_jacobian(params, q_b, q_j, i)
    return leg_bias_torques(params, q_b, q_leg, qd_leg, i) - J.T @ np.asarray(force, dtype=float)


def estimate_contact_force(params: RobotParams, q_b, q_leg, qd_leg, tau, leg) -> np.ndarray:
    """Ground reaction force on a foot from joint torques, f = -(J^T)^-1 (tau - h)."""
    i = leg_index(leg)
    q_j = np.zeros(N_JOINTS)
    q_j[3 * i : 3 * i + 3] = q_leg
    J = leg_jacobian(params, q_b, q_j, i)
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > params.jacobian_condition_limit:
        raise SingularityError(f"leg {LEGS[i]} Jacobian condition number {cond:.3g}")
    h = leg_bias_torques(params, q_b, q_leg, qd_leg, i)
    return -np.linalg.solve(J.T, np.asarray(tau, dtype=float) - h)


# ---------------------------------------------------------------- support geometry


def support_polygon(feet, probing_leg):
    """Inward half-planes (A_s, b_s) of the triangle spanned by the non-probing feet.

    A point r lies inside iff A_s @ r + b_s >= 0; rows are unit normals so the
    residual is the signed distance to each edge.
    """
    i = leg_index(probing_leg)
    pts = np.asarray(feet, dtype=float)[[j for j in range(N_LEGS) if j != i], :2]
    return polygon_halfplanes(pts)


def polygon_halfplanes(pts):
    pts = np.asarray(pts, dtype=float)
    centroid = pts.mean(axis=0)
    if len(pts) == 3:
        e1, e2 = pts[1] - pts[0], pts[2] - pts[0]
        area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
        scale = max(np.max(np.linalg.norm(pts - centroid, axis=1)), 1e-12)
        if area < 1e-9 * max(scale**2, 1.0):
            raise DegenerateGeometryError("support feet are collinear")
    angles = np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0])
    pts = pts[np.argsort(angles)]
    A = np.zeros((len(pts), 2))
    b = np.zeros(len(pts))
    for k in range(len(pts)):
        p, q = pts[k], pts[(k + 1) % len(pts)]
        edge = q - p
        length = np.linalg.norm(edge)
        if length < 1e-12:
            raise DegenerateGeometryError("repeated polygon vertex")
        normal = np.array([-edge[1], edge[0]]) / length
        A[k] = normal
        b[k] = -normal @ p
    return A, b


def com_projection(params: RobotParams, state) -> np.ndarray:
    """CoM projected along gravity; the lumped model puts the CoM at the base origin."""
    x = state.to_vector() if isinstance(state, RobotState) else np.asarray(state)
    return x[POS][:2].copy()


def local_surface_normal(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 3:
        raise DegenerateGeometryError("need at least three contact points")
    centered = pts - pts.mean(axis=0)
    _, s, vt = np.linalg.svd(centered)
    if s[1] < 1e-9 * max(s[0], 1e-12) or s[1] < 1e-12:
        raise DegenerateGeometryError("contact points are collinear")
    n = vt[2]
    if n[2] < 0:
        n = -n
    return n / np.linalg.norm(n)


# ---------------------------------------------------------------- centroidal dynamics


def feet_kinematics(params: RobotParams, X, U=None, derivatives=True):
    """Batched foot positions and velocities with derivatives.

    X: (n, 24), U: (n, 24) or None.  Returns a dict with
    ``p`` (n,4,3), ``dp_dx`` (n,4,3,24) and, when U is given, ``v`` (n,4,3),
    ``dv_dx`` (n,4,3,24), ``dv_du`` (n,4,3,24).
    """
    X = np.atleast_2d(X)
    n = X.shape[0]
    q = X[:, QJ].reshape(n, N_LEGS, 3)
    need_h = U is not None and derivatives
    kin = leg_kinematics(params, q, hessian=need_h)
    s, J = kin[0], kin[1]
    R, dR = rotation(X[:, EUL], derivatives=True)
    Rs = np.einsum("nij,nlj->nli", R, s)
    out = {"p": X[:, None, POS] + Rs, "R": R, "Rs": Rs}
    RJ = np.einsum("nij,nljk->nlik", R, J)
    out["RJ"] = RJ
    if derivatives:
        dp = np.zeros((n, N_LEGS, 3, NX))
        dp[:, :, :, 6:9] = np.eye(3)
        dp[:, :, :, 9:12] = np.einsum("nkij,nlj->nlik", dR, s)
        for leg in range(N_LEGS):
            dp[:, leg, :, 12 + 3 * leg : 15 + 3 * leg] = RJ[:, leg]
        out["dp_dx"] = dp
    if U is None:
        return out
    U = np.atleast_2d(U)
    qd = U[:, QD].reshape(n, N_LEGS, 3)
    Ib_inv = 1.0 / np.asarray(params.base_inertia)
    M = np.einsum("nij,j,nkj->nik", R, Ib_inv, R)
    omega = np.einsum("nij,nj->ni", M, X[:, H_ANG])
    jqd = np.einsum("nlik,nlk->nli", RJ, qd)
    v = X[:, None, H_LIN] / params.mass + np.cross(omega[:, None, :], Rs) + jqd
    out["v"] = v
    out["omega"] = omega
    if not derivatives:
        return out
    H = kin[2]
    dv_dx = np.zeros((n, N_LEGS, 3, NX))
    dv_dx[:, :, :, 0:3] = np.eye(3) / params.mass
    dv_dx[:, :, :, 3:6] = -np.einsum("nlij,njk->nlik", skew(Rs), M)
    # d omega / d euler_k
    dM = np.einsum("nkij,j,nmj->nkim", dR, Ib_inv, R)
    domega = np.einsum("nkim,nm->nik", dM + np.swapaxes(dM, -1, -2), X[:, H_ANG])
    dRs = np.einsum("nkij,nlj->nlik", dR, s)  # (n,leg,3,k)
    term1 = np.cross(np.swapaxes(domega, 1, 2)[:, None, :, :], Rs[:, :, None, :])  # (n,l,k,3)
    term2 = np.cross(omega[:, None, None, :], np.swapaxes(dRs, 2, 3))
    Jqd_base = np.einsum("nljk,nlk->nlj", J, qd)
    term3 = np.einsum("nkij,nlj->nlki", dR, Jqd_base)
    dv_dx[:, :, :, 9:12] = np.swapaxes(term1 + term2 + term3, 2, 3)
    Jdot = np.einsum("nlcab,nlb->nlca", H, qd)
    dq = np.einsum("nij,nljk->nlik", skew(omega), RJ) + np.einsum("nij,nljk->nlik", R, Jdot)
    dv_du = np.zeros((n, N_LEGS, 3, NU))
    for leg in range(N_LEGS):
        dv_dx[:, leg, :, 12 + 3 * leg : 15 + 3 * leg] = dq[:, leg]
        dv_du[:, leg, :, 12 + 3 * leg : 15 + 3 * leg] = RJ[:, leg]
    out["dv_dx"] = dv_dx
    out["dv_du"] = dv_du
    return out


def centroidal_dynamics(params: RobotParams, x, u, derivatives=False):
    """State derivative of the lumped-mass centroidal model.

    Accepts single vectors or batches (n, 24).  With ``derivatives`` returns
    (xdot, A, B) with A = d xdot/dx and B = d xdot/du.
    """
    single = np.ndim(x) == 1
    X = np.atleast_2d(np.asarray(x, dtype=float))
    U = np.atleast_2d(np.asarray(u, dtype=float))
    n = X.shape[0]
    q = X[:, QJ].reshape(n, N_LEGS, 3)
    s, J = leg_kinematics(params, q)
    R, dR = rotation(X[:, EUL], derivatives=True)
    Rs = np.einsum("nij,nlj->nli", R, s)
    F = U[:, FORCES].reshape(n, N_LEGS, 3)
    Ib_inv = 1.0 / np.asarray(params.base_inertia)
    M = np.einsum("nij,j,nkj->nik", R, Ib_inv, R)
    omega = np.einsum("nij,nj->ni", M, X[:, H_ANG])

    xdot = np.empty((n, NX))
    xdot[:, H_LIN] = params.mass * GRAVITY + F.sum(axis=1)
    xdot[:, H_ANG] = np.cross(Rs, F).sum(axis=1)
    xdot[:, POS] = X[:, H_LIN] / params.mass
    if derivatives:
        rates, Einv, dE = euler_rates(X[:, EUL], omega, derivatives=True)
    else:
        rates = euler_rates(X[:, EUL], omega)
    xdot[:, EUL] = rates
    xdot[:, QJ] = U[:, QD]
    if not derivatives:
        return xdot[0] if single else xdot

    A = np.zeros((n, NX, NX))
    B = np.zeros((n, NX, NU))
    A[:, 6:9, 0:3] = np.eye(3) / params.mass
    skF = skew(F)  # (n,l,3,3)
    dRs = np.einsum("nkij,nlj->nlik", dR, s)  # (n,l,3,k)
    A[:, 3:6, 9:12] = -np.einsum("nlij,nljk->nik", skF, dRs)
    RJ = np.einsum("nij,nljk->nlik", R, J)
    dh_dq = -np.einsum("nlij,nljk->nlik", skF, RJ)
    skRs = skew(Rs)
    for leg in range(N_LEGS):
        A[:, 3:6, 12 + 3 * leg : 15 + 3 * leg] = dh_dq[:, leg]
        B[:, 0:3, 3 * leg : 3 * leg + 3] = np.eye(3)
        B[:, 3:6, 3 * leg : 3 * leg + 3] = skRs[:, leg]
    A[:, 9:12, 3:6] = np.einsum("nij,njk->nik", Einv, M)
    dM = np.einsum("nkij,j,nmj->nkim", dR, Ib_inv, R)
    domega = np.einsum("nkim,nm->nik", dM + np.swapaxes(dM, -1, -2), X[:, H_ANG])
    A[:, 9:12, 9:12] = np.einsum("nij,njk->nik", Einv, domega) + dE
    B[:, 12:24, 12:24] = np.eye(N_JOINTS)
    if single:
        return xdot[0], A[0], B[0]
    return xdot, A, B
