"""Compiled kinematics, centroidal dynamics and RK4 sensitivities.

These mirror the numpy reference implementations in :mod:`probewalk.model`
(tests compare the two) and exist purely for speed inside the MPC loop.
Robot parameters travel as a flat vector built by :func:`pack_params`.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# parameter vector layout
P_MASS, P_IINV, P_AXES, P_SIDES, P_LABD, P_L1, P_L2, P_G = 0, 1, 4, 16, 20, 21, 22, 23
P_SIZE = 24


def pack_params(params) -> np.ndarray:
    from probewalk.model import GRAVITY

    pv = np.zeros(P_SIZE)
    pv[P_MASS] = params.mass
    pv[P_IINV : P_IINV + 3] = 1.0 / np.asarray(params.base_inertia, dtype=float)
    pv[P_AXES : P_AXES + 12] = np.asarray(params.abduction_axes, dtype=float).ravel()
    pv[P_SIDES : P_SIDES + 4] = params.sides
    pv[P_LABD] = params.abduction_length
    pv[P_L1] = params.thigh_length
    pv[P_L2] = params.shank_length
    pv[P_G] = GRAVITY[2]
    return pv


@njit(cache=True)
def _rotation(e, R, dR):
    cy, sy = np.cos(e[0]), np.sin(e[0])
    cp, sp = np.cos(e[1]), np.sin(e[1])
    cr, sr = np.cos(e[2]), np.sin(e[2])
    R[0, 0] = cy * cp
    R[0, 1] = cy * sp * sr - sy * cr
    R[0, 2] = cy * sp * cr + sy * sr
    R[1, 0] = sy * cp
    R[1, 1] = sy * sp * sr + cy * cr
    R[1, 2] = sy * sp * cr - cy * sr
    R[2, 0] = -sp
    R[2, 1] = cp * sr
    R[2, 2] = cp * cr
    for j in range(3):
        dR[0, 0, j] = -R[1, j]
        dR[0, 1, j] = R[0, j]
        dR[0, 2, j] = 0.0
    dR[1, 0, 0] = -cy * sp
    dR[1, 0, 1] = cy * cp * sr
    dR[1, 0, 2] = cy * cp * cr
    dR[1, 1, 0] = -sy * sp
    dR[1, 1, 1] = sy * cp * sr
    dR[1, 1, 2] = sy * cp * cr
    dR[1, 2, 0] = -cp
    dR[1, 2, 1] = -sp * sr
    dR[1, 2, 2] = -sp * cr
    for i in range(3):
        dR[2, i, 0] = 0.0
        dR[2, i, 1] = R[i, 2]
        dR[2, i, 2] = -R[i, 1]


@njit(cache=True)
def _leg(q, pv, leg, s, J, H, hessian):
    a, h, k = q[0], q[1], q[2]
    l1, l2 = pv[P_L1], pv[P_L2]
    yl = pv[P_SIDES + leg] * pv[P_LABD]
    ca, sa = np.cos(a), np.sin(a)
    ch, sh = np.cos(h), np.sin(h)
    chk, shk = np.cos(h + k), np.sin(h + k)
    x = -l1 * sh - l2 * shk
    z = -l1 * ch - l2 * chk
    ax = P_AXES + 3 * leg
    s[0] = pv[ax] + x
    s[1] = pv[ax + 1] + ca * yl - sa * z
    s[2] = pv[ax + 2] + sa * yl + ca * z
    x_h, x_k = -l1 * ch - l2 * chk, -l2 * chk
    z_h, z_k = l1 * sh + l2 * shk, l2 * shk
    J[0, 0] = 0.0
    J[1, 0] = -sa * yl - ca * z
    J[2, 0] = ca * yl - sa * z
    J[0, 1] = x_h
    J[1, 1] = -sa * z_h
    J[2, 1] = ca * z_h
    J[0, 2] = x_k
    J[1, 2] = -sa * z_k
    J[2, 2] = ca * z_k
    if not hessian:
        return
    H[:] = 0.0
    H[1, 0, 0] = -(ca * yl - sa * z)
    H[2, 0, 0] = -(sa * yl + ca * z)
    H[1, 0, 1] = H[1, 1, 0] = -ca * z_h
    H[2, 0, 1] = H[2, 1, 0] = -sa * z_h
    H[1, 0, 2] = H[1, 2, 0] = -ca * z_k
    H[2, 0, 2] = H[2, 2, 0] = -sa * z_k
    xx = (l1 * sh + l2 * shk, l2 * shk, l2 * shk)
    zz = (l1 * ch + l2 * chk, l2 * chk, l2 * chk)
    pairs = ((1, 1), (1, 2), (2, 2))
    for m in range(3):
        i, j = pairs[m]
        H[0, i, j] = H[0, j, i] = xx[m]
        H[1, i, j] = H[1, j, i] = -sa * zz[m]
        H[2, i, j] = H[2, j, i] = ca * zz[m]


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def feet_kernel(X, U, pv, with_v, deriv):
    """Returns p, v, dp_dx, dv_dx, dv_du with the same layout as feet_kinematics."""
    n = X.shape[0]
    p = np.zeros((n, 4, 3))
    v = np.zeros((n, 4, 3))
    dp = np.zeros((n, 4, 3, 24)) if deriv else np.zeros((1, 4, 3, 24))
    dvx = np.zeros((n, 4, 3, 24)) if (deriv and with_v) else np.zeros((1, 4, 3, 24))
    dvu = np.zeros((n, 4, 3, 24)) if (deriv and with_v) else np.zeros((1, 4, 3, 24))
    R = np.empty((3, 3))
    dR = np.empty((3, 3, 3))
    s = np.empty(3)
    J = np.empty((3, 3))
    H = np.zeros((3, 3, 3))
    Rs = np.empty(3)
    RJ = np.empty((3, 3))
    M = np.empty((3, 3))
    omega = np.empty(3)
    dM = np.empty((3, 3, 3))
    domega = np.empty((3, 3))
    tmp = np.empty(3)
    tmp2 = np.empty(3)
    col = np.empty(3)
    mass = pv[P_MASS]
    for t in range(n):
        _rotation(X[t, 9:12], R, dR)
        if with_v:
            for i in range(3):
                for j in range(3):
                    acc = 0.0
                    for c in range(3):
                        acc += R[i, c] * pv[P_IINV + c] * R[j, c]
                    M[i, j] = acc
            for i in range(3):
                omega[i] = M[i, 0] * X[t, 3] + M[i, 1] * X[t, 4] + M[i, 2] * X[t, 5]
            if deriv:
                for k in range(3):
                    for i in range(3):
                        for j in range(3):
                            acc = 0.0
                            for c in range(3):
                                acc += dR[k, i, c] * pv[P_IINV + c] * R[j, c]
                            dM[k, i, j] = acc
                    for i in range(3):
                        acc = 0.0
                        for j in range(3):
                            acc += (dM[k, i, j] + dM[k, j, i]) * X[t, 3 + j]
                        domega[i, k] = acc
        for leg in range(4):
            q0 = 12 + 3 * leg
            _leg(X[t, q0 : q0 + 3], pv, leg, s, J, H, deriv and with_v)
            for i in range(3):
                Rs[i] = R[i, 0] * s[0] + R[i, 1] * s[1] + R[i, 2] * s[2]
                p[t, leg, i] = X[t, 6 + i] + Rs[i]
                for j in range(3):
                    RJ[i, j] = R[i, 0] * J[0, j] + R[i, 1] * J[1, j] + R[i, 2] * J[2, j]
            if deriv:
                for i in range(3):
                    dp[t, leg, i, 6 + i] = 1.0
                    for k in range(3):
                        dp[t, leg, i, 9 + k] = dR[k, i, 0] * s[0] + dR[k, i, 1] * s[1] + dR[k, i, 2] * s[2]
                    for j in range(3):
                        dp[t, leg, i, q0 + j] = RJ[i, j]
            if not with_v:
                continue
            qd = U[t, q0 : q0 + 3]
            _cross(omega, Rs, tmp)
            for i in range(3):
                v[t, leg, i] = X[t, i] / mass + tmp[i] + RJ[i, 0] * qd[0] + RJ[i, 1] * qd[1] + RJ[i, 2] * qd[2]
            if not deriv:
                continue
            # d/d h_lin, d/d h_ang = -skew(Rs) M
            for i in range(3):
                dvx[t, leg, i, i] = 1.0 / mass
            for j in range(3):
                for i in range(3):
                    col[i] = M[i, j]
                _cross(col, Rs, tmp)
                for i in range(3):
                    dvx[t, leg, i, 3 + j] = tmp[i]
            # J qd in the base frame
            jq0 = J[0, 0] * qd[0] + J[0, 1] * qd[1] + J[0, 2] * qd[2]
            jq1 = J[1, 0] * qd[0] + J[1, 1] * qd[1] + J[1, 2] * qd[2]
            jq2 = J[2, 0] * qd[0] + J[2, 1] * qd[1] + J[2, 2] * qd[2]
            for k in range(3):
                for i in range(3):
                    col[i] = domega[i, k]
                    tmp2[i] = dR[k, i, 0] * s[0] + dR[k, i, 1] * s[1] + dR[k, i, 2] * s[2]
                _cross(col, Rs, tmp)
                for i in range(3):
                    dvx[t, leg, i, 9 + k] = tmp[i] + dR[k, i, 0] * jq0 + dR[k, i, 1] * jq1 + dR[k, i, 2] * jq2
                _cross(omega, tmp2, tmp)
                for i in range(3):
                    dvx[t, leg, i, 9 + k] += tmp[i]
            # d/dq: skew(omega) RJ + R Jdot
            for j in range(3):
                for i in range(3):
                    col[i] = RJ[i, j]
                _cross(omega, col, tmp)
                for c in range(3):
                    acc = 0.0
                    for b in range(3):
                        acc += H[c, j, b] * qd[b]
                    tmp2[c] = acc
                for i in range(3):
                    dvx[t, leg, i, q0 + j] = tmp[i] + R[i, 0] * tmp2[0] + R[i, 1] * tmp2[1] + R[i, 2] * tmp2[2]
                    dvu[t, leg, i, q0 + j] = RJ[i, j]
    return p, v, dp, dvx, dvu


@njit(cache=True)
def _dynamics(x, u, pv, xdot, A, B, deriv):
    """Single-knot centroidal dynamics; A/B only touch their structural non-zeros."""
    mass = pv[P_MASS]
    R = np.empty((3, 3))
    dR = np.empty((3, 3, 3))
    s = np.empty(3)
    J = np.empty((3, 3))
    H = np.empty((3, 3, 3))
    Rs = np.empty(3)
    tmp = np.empty(3)
    col = np.empty(3)
    f = np.empty(3)
    M = np.empty((3, 3))
    omega = np.empty(3)
    _rotation(x[9:12], R, dR)
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for c in range(3):
                acc += R[i, c] * pv[P_IINV + c] * R[j, c]
            M[i, j] = acc
    for i in range(3):
        omega[i] = M[i, 0] * x[3] + M[i, 1] * x[4] + M[i, 2] * x[5]
    for i in range(3):
        xdot[i] = 0.0
        xdot[3 + i] = 0.0
        xdot[6 + i] = x[i] / mass
    xdot[2] += mass * pv[P_G]
    for leg in range(4):
        q0 = 12 + 3 * leg
        _leg(x[q0 : q0 + 3], pv, leg, s, J, H, False)
        for i in range(3):
            Rs[i] = R[i, 0] * s[0] + R[i, 1] * s[1] + R[i, 2] * s[2]
            f[i] = u[3 * leg + i]
            xdot[i] += f[i]
        _cross(Rs, f, tmp)
        for i in range(3):
            xdot[3 + i] += tmp[i]
        if deriv:
            # dh_ang/d euler_k = dRs_k x f ; dh_ang/dq_j = (R J)_j x f
            for k in range(3):
                for i in range(3):
                    col[i] = dR[k, i, 0] * s[0] + dR[k, i, 1] * s[1] + dR[k, i, 2] * s[2]
                _cross(col, f, tmp)
                for i in range(3):
                    A[3 + i, 9 + k] += tmp[i]
            for j in range(3):
                for i in range(3):
                    col[i] = R[i, 0] * J[0, j] + R[i, 1] * J[1, j] + R[i, 2] * J[2, j]
                _cross(col, f, tmp)
                for i in range(3):
                    A[3 + i, q0 + j] = tmp[i]
            for j in range(3):
                B[j, 3 * leg + j] = 1.0
                # Rs x e_j
                col[0] = 0.0
                col[1] = 0.0
                col[2] = 0.0
                col[j] = 1.0
                _cross(Rs, col, tmp)
                for i in range(3):
                    B[3 + i, 3 * leg + j] = tmp[i]
    e = x[9:12]
    cy, sy = np.cos(e[0]), np.sin(e[0])
    cp, sp = np.cos(e[1]), np.sin(e[1])
    tp = sp / cp
    a = cy * omega[0] + sy * omega[1]
    b = -sy * omega[0] + cy * omega[1]
    xdot[9] = omega[2] + tp * a
    xdot[10] = b
    xdot[11] = a / cp
    for j in range(12):
        xdot[12 + j] = u[12 + j]
    if not deriv:
        return
    for i in range(3):
        A[6 + i, i] = 1.0 / mass
    Einv = np.zeros((3, 3))
    Einv[0, 0] = tp * cy
    Einv[0, 1] = tp * sy
    Einv[0, 2] = 1.0
    Einv[1, 0] = -sy
    Einv[1, 1] = cy
    Einv[2, 0] = cy / cp
    Einv[2, 1] = sy / cp
    for i in range(3):
        for j in range(3):
            A[9 + i, 3 + j] = Einv[i, 0] * M[0, j] + Einv[i, 1] * M[1, j] + Einv[i, 2] * M[2, j]
    domega = np.empty((3, 3))
    for k in range(3):
        for i in range(3):
            acc = 0.0
            for j in range(3):
                dm_ij = 0.0
                dm_ji = 0.0
                for c in range(3):
                    dm_ij += dR[k, i, c] * pv[P_IINV + c] * R[j, c]
                    dm_ji += dR[k, j, c] * pv[P_IINV + c] * R[i, c]
                acc += (dm_ij + dm_ji) * x[3 + j]
            domega[i, k] = acc
    for i in range(3):
        for k in range(3):
            A[9 + i, 9 + k] = Einv[i, 0] * domega[0, k] + Einv[i, 1] * domega[1, k] + Einv[i, 2] * domega[2, k]
    A[9, 9] += tp * b
    A[10, 9] += -a
    A[11, 9] += b / cp
    A[9, 10] += a / cp**2
    A[11, 10] += a * sp / cp**2
    for j in range(12):
        B[12 + j, 12 + j] = 1.0


@njit(cache=True)
def dynamics_kernel(X, U, pv, deriv):
    n = X.shape[0]
    xdot = np.empty((n, 24))
    A = np.zeros((n, 24, 24)) if deriv else np.zeros((1, 24, 24))
    B = np.zeros((n, 24, 24)) if deriv else np.zeros((1, 24, 24))
    for t in range(n):
        if deriv:
            _dynamics(X[t], U[t], pv, xdot[t], A[t], B[t], True)
        else:
            _dynamics(X[t], U[t], pv, xdot[t], A[0], B[0], False)
    return xdot, A, B


@njit(cache=True)
def _amul(A, Mx, out, c):
    """out = c * A @ Mx using the row/column structure of the centroidal Jacobian."""
    m = Mx.shape[1]
    for j in range(m):
        for i in range(3):
            acc = 0.0
            for k in range(9, 24):
                acc += A[3 + i, k] * Mx[k, j]
            out[3 + i, j] = c * acc
            out[6 + i, j] = c * A[6 + i, i] * Mx[i, j]
            acc = 0.0
            for k in range(3, 6):
                acc += A[9 + i, k] * Mx[k, j]
            for k in range(9, 12):
                acc += A[9 + i, k] * Mx[k, j]
            out[9 + i, j] = c * acc
        for i in range(3):
            out[i, j] = 0.0
        for i in range(12, 24):
            out[i, j] = 0.0


@njit(cache=True)
def rk4_kernel(X, U, h, pv, deriv):
    """RK4 over every interval; returns x_next and (when ``deriv``) Phi_x, Phi_u."""
    n = X.shape[0]
    xn = np.empty((n, 24))
    Px = np.zeros((n, 24, 24)) if deriv else np.zeros((1, 24, 24))
    Pu = np.zeros((n, 24, 24)) if deriv else np.zeros((1, 24, 24))
    k1 = np.empty(24)
    k2 = np.empty(24)
    k3 = np.empty(24)
    k4 = np.empty(24)
    xs = np.empty(24)
    A = np.zeros((4, 24, 24))
    B = np.zeros((4, 24, 24))
    Dx = np.empty((24, 24))
    Du = np.empty((24, 24))
    Tx = np.empty((24, 24))
    Tu = np.empty((24, 24))
    Sx = np.empty((24, 24))
    Su = np.empty((24, 24))
    for t in range(n):
        x = X[t]
        u = U[t]
        ht = h[t]
        if deriv:
            A[:] = 0.0
            B[:] = 0.0
        _dynamics(x, u, pv, k1, A[0], B[0], deriv)
        for i in range(24):
            xs[i] = x[i] + 0.5 * ht * k1[i]
        _dynamics(xs, u, pv, k2, A[1], B[1], deriv)
        for i in range(24):
            xs[i] = x[i] + 0.5 * ht * k2[i]
        _dynamics(xs, u, pv, k3, A[2], B[2], deriv)
        for i in range(24):
            xs[i] = x[i] + ht * k3[i]
        _dynamics(xs, u, pv, k4, A[3], B[3], deriv)
        for i in range(24):
            xn[t, i] = x[i] + ht / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if not deriv:
            continue
        # stage 1: D1 = A1, B1 ; running sums S = D1 + 2 D2 + 2 D3 + D4
        Sx[:, :] = A[0]
        Su[:, :] = B[0]
        Dx[:, :] = A[0]
        Du[:, :] = B[0]
        for stage in range(1, 4):
            c = 0.5 * ht if stage < 3 else ht
            # T = I + c * D_prev  (x part);  c * D_prev (u part)
            for i in range(24):
                for j in range(24):
                    Tx[i, j] = c * Dx[i, j]
                    Tu[i, j] = c * Du[i, j]
                Tx[i, i] += 1.0
            _amul(A[stage], Tx, Dx, 1.0)
            _amul(A[stage], Tu, Du, 1.0)
            for i in range(24):
                for j in range(24):
                    Du[i, j] += B[stage, i, j]
            w = 2.0 if stage < 3 else 1.0
            for i in range(24):
                for j in range(24):
                    Sx[i, j] += w * Dx[i, j]
                    Su[i, j] += w * Du[i, j]
        for i in range(24):
            for j in range(24):
                Px[t, i, j] = ht / 6.0 * Sx[i, j]
                Pu[t, i, j] = ht / 6.0 * Su[i, j]
            Px[t, i, i] += 1.0
    return xn, Px, Pu


@njit(cache=True)
def equality_kernel(p, v, dp, dvx, dvu, U, p_ref, v_ref, normals, contact, kp, deriv):
    """Padded Baumgarte contact equalities; row count per knot in ``m``."""
    n = p.shape[0]
    C = np.zeros((n, 13, 24))
    D = np.zeros((n, 13, 24))
    e = np.zeros((n, 13))
    m = np.zeros(n, dtype=np.int64)
    for t in range(n):
        r = 0
        for leg in range(4):
            if contact[t, leg]:
                for i in range(3):
                    e[t, r] = v[t, leg, i] + kp * (p[t, leg, i] - p_ref[t, leg, i])
                    if deriv:
                        for j in range(24):
                            C[t, r, j] = dvx[t, leg, i, j] + kp * dp[t, leg, i, j]
                            D[t, r, j] = dvu[t, leg, i, j]
                    r += 1
            else:
                for i in range(3):
                    e[t, r] = U[t, 3 * leg + i]
                    if deriv:
                        D[t, r, 3 * leg + i] = 1.0
                    r += 1
                acc = 0.0
                for i in range(3):
                    nv = normals[leg, i]
                    acc += nv * (v[t, leg, i] - v_ref[t, leg, i] + kp * (p[t, leg, i] - p_ref[t, leg, i]))
                    if deriv:
                        for j in range(24):
                            C[t, r, j] += nv * (dvx[t, leg, i, j] + kp * dp[t, leg, i, j])
                            D[t, r, j] += nv * dvu[t, leg, i, j]
                e[t, r] = acc
                r += 1
        m[t] = r
    return C, D, e, m
