"""Compiled Riccati recursion with per-stage equality elimination."""

from __future__ import annotations

import numpy as np
from numba import njit

# status codes returned by the kernel
OK, RANK_DEFICIENT, NOT_PD = 0, 1, 2


@njit(cache=True)
def _cholesky_solve(H, rhs, reg):
    """Solve (H + lam I) X = rhs, raising lam until the factorization succeeds."""
    n = H.shape[0]
    scale = 1.0
    for i in range(n):
        scale = max(scale, abs(H[i, i]))
    lam = reg
    L = np.zeros((n, n))
    while lam <= 1e2 * scale:
        ok = True
        for j in range(n):
            s = H[j, j] + lam
            for p in range(j):
                s -= L[j, p] * L[j, p]
            if s <= 0.0:
                ok = False
                break
            L[j, j] = np.sqrt(s)
            for i in range(j + 1, n):
                t = H[i, j]
                for p in range(j):
                    t -= L[i, p] * L[j, p]
                L[i, j] = t / L[j, j]
        if ok:
            m = rhs.shape[1]
            Y = np.empty((n, m))
            for c in range(m):
                for i in range(n):
                    t = rhs[i, c]
                    for p in range(i):
                        t -= L[i, p] * Y[p, c]
                    Y[i, c] = t / L[i, i]
                for i in range(n - 1, -1, -1):
                    t = Y[i, c]
                    for p in range(i + 1, n):
                        t -= L[p, i] * Y[p, c]
                    Y[i, c] = t / L[i, i]
            return Y, True
        lam = max(10.0 * lam, 1e-8)
    return np.zeros_like(rhs), False


@njit(cache=True)
def riccati_kernel(A, B, b, Q, S, R, q, r, C, D, e, m, dx0, reg, tol):
    N, nx, nu = B.shape
    K = np.zeros((N, nu, nx))
    kff = np.zeros((N, nu))
    V = Q[N].copy()
    v = q[N].copy()
    for k in range(N - 1, -1, -1):
        Ak = A[k]
        Bk = B[k]
        VA = V @ Ak
        VB = V @ Bk
        vb = V @ b[k] + v
        Qxx = Q[k] + Ak.T @ VA
        Quu = R[k] + Bk.T @ VB
        Qux = S[k] + Bk.T @ VA
        qx = q[k] + Ak.T @ vb
        qu = r[k] + Bk.T @ vb
        mk = m[k]
        if mk > 0:
            Dk = D[k, :mk].copy()
            U_, sig, Vt = np.linalg.svd(Dk)
            if sig[mk - 1] <= tol * max(sig[0], 1.0):
                return K, kff, np.zeros((N + 1, nx)), np.zeros((N, nu)), RANK_DEFICIENT
            # D^+ = V1 diag(1/sig) U^T
            V1 = np.ascontiguousarray(Vt[:mk].T)
            Dplus = V1 @ np.ascontiguousarray(U_.T / sig.reshape(-1, 1))
            G = -Dplus @ C[k, :mk]
            g = -Dplus @ e[k, :mk]
            P = np.ascontiguousarray(Vt[mk:].T)
        else:
            G = np.zeros((nu, nx))
            g = np.zeros(nu)
            P = np.eye(nu)
        QuuP = Quu @ P
        Hww = P.T @ QuuP
        Hww = 0.5 * (Hww + Hww.T)
        rhs = np.empty((nu - mk, nx + 1))
        rhs[:, :nx] = P.T @ (Quu @ G + Qux)
        rhs[:, nx] = P.T @ (Quu @ g + qu)
        sol, ok = _cholesky_solve(Hww, rhs, reg)
        if not ok:
            return K, kff, np.zeros((N + 1, nx)), np.zeros((N, nu)), NOT_PD
        Kt = G - P @ np.ascontiguousarray(sol[:, :nx])
        kt = g - P @ np.ascontiguousarray(sol[:, nx])
        K[k] = Kt
        kff[k] = kt
        QuuK = Quu @ Kt
        V = Qxx + Kt.T @ QuuK + Kt.T @ Qux + Qux.T @ Kt
        V = 0.5 * (V + V.T)
        v = qx + Kt.T @ (Quu @ kt) + Kt.T @ qu + Qux.T @ kt
    dX = np.zeros((N + 1, nx))
    dU = np.zeros((N, nu))
    dX[0] = dx0
    for k in range(N):
        dU[k] = K[k] @ dX[k] + kff[k]
        dX[k + 1] = A[k] @ dX[k] + B[k] @ dU[k] + b[k]
    return K, kff, dX, dU, OK


def pack_equalities(C, D, e, nx, nu):
    N = len(D)
    m = np.array([0 if d is None else d.shape[0] for d in D], dtype=np.int64)
    M = max(int(m.max(initial=0)), 1)
    Cp = np.zeros((N, M, nx))
    Dp = np.zeros((N, M, nu))
    ep = np.zeros((N, M))
    for k in range(N):
        if m[k]:
            Cp[k, : m[k]] = C[k]
            Dp[k, : m[k]] = D[k]
            ep[k, : m[k]] = e[k]
    return Cp, Dp, ep, m
