"""Multiple-shooting SQP over equality-constrained LQ subproblems.

An NLP object supplies, for knot arrays ``X`` (N+1, nx) and ``U`` (N, nu):

* ``x_init``, ``times``, ``N``, ``nx``, ``nu``
* ``dynamics(X[:-1], U, derivatives)`` -> next states (and A, B)
* ``cost(X, U)`` -> float
* ``cost_expansion(X, U)`` -> (value, Q, S, R, q, r)
* ``equalities(X, U, derivatives)`` -> per-stage lists (e) or (C, D, e)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from probewalk.ocp._riccati import NOT_PD, RANK_DEFICIENT, pack_equalities, riccati_kernel

log = logging.getLogger(__name__)

MERIT_PENALTY = 1e3
BACKTRACK = 0.5
MAX_HALVINGS = 20
ARMIJO = 1e-4
LEVENBERG = 1e-6


class SingularKKTError(np.linalg.LinAlgError):
    pass


@dataclass
class LQProblem:
    A: np.ndarray  # (N, nx, nx)
    B: np.ndarray  # (N, nx, nu)
    b: np.ndarray  # (N, nx) defects
    Q: np.ndarray  # (N+1, nx, nx)
    S: np.ndarray  # (N, nu, nx)
    R: np.ndarray  # (N, nu, nu)
    q: np.ndarray  # (N+1, nx)
    r: np.ndarray  # (N, nu)
    C: list
    D: list
    e: list
    dx0: np.ndarray
    packed: tuple | None = None  # (C, D, e, m) padded form of the stage equalities

    @property
    def N(self) -> int:
        return self.A.shape[0]


@dataclass
class Trajectory:
    times: np.ndarray
    X: np.ndarray
    U: np.ndarray
    residuals: dict
    cost: float
    iterations: int = 0
    merit_history: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    converged: bool = False
    failed: bool = False
    status: str = ""

    def input_at(self, t: float) -> np.ndarray:
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.U) - 1))
        return self.U[k]

    def state_at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.times, self.X[:, j]) for j in range(self.X.shape[1])])


def riccati_solve(lq: LQProblem, reg: float = LEVENBERG):
    """Backward Riccati pass with stage-equality elimination, then forward rollout.

    Stage equalities C dx + D du + e = 0 are eliminated by writing
    du = P w + G dx + g with P spanning the null space of D.
    """
    nx, nu = lq.A.shape[1], lq.B.shape[2]
    if lq.packed is not None:
        C, D, e, m = lq.packed
    else:
        C, D, e, m = pack_equalities(lq.C, lq.D, lq.e, nx, nu)
    if np.any(m > nu):
        raise SingularKKTError("more stage equalities than inputs")
    *_, dX, dU, status = riccati_kernel(
        lq.A, lq.B, lq.b, lq.Q, lq.S, lq.R, lq.q, lq.r, C, D, e, m, lq.dx0, float(reg), 1e-9
    )
    if status == RANK_DEFICIENT:
        raise SingularKKTError("stage equality Jacobian is rank deficient")
    if status == NOT_PD:
        raise SingularKKTError("reduced Hessian not positive definite after regularization")
    return dX, dU


def dense_kkt_solve(lq: LQProblem):
    """Solve the same LQ subproblem by assembling the full KKT matrix."""
    N = lq.N
    nx = lq.A.shape[1]
    nu = lq.B.shape[2]
    nX, nz = (N + 1) * nx, (N + 1) * nx + N * nu
    ix = lambda k: slice(k * nx, (k + 1) * nx)  # noqa: E731
    iu = lambda k: slice(nX + k * nu, nX + (k + 1) * nu)  # noqa: E731
    H = np.zeros((nz, nz))
    g = np.zeros(nz)
    for k in range(N + 1):
        H[ix(k), ix(k)] = lq.Q[k]
        g[ix(k)] = lq.q[k]
    for k in range(N):
        H[iu(k), iu(k)] = lq.R[k]
        H[iu(k), ix(k)] = lq.S[k]
        H[ix(k), iu(k)] = lq.S[k].T
        g[iu(k)] = lq.r[k]
    rows, rhs = [], []
    row = np.zeros((nx, nz))
    row[:, ix(0)] = np.eye(nx)
    rows.append(row)
    rhs.append(lq.dx0)
    for k in range(N):
        row = np.zeros((nx, nz))
        row[:, ix(k + 1)] = np.eye(nx)
        row[:, ix(k)] = -lq.A[k]
        row[:, iu(k)] = -lq.B[k]
        rows.append(row)
        rhs.append(lq.b[k])
        if lq.D[k] is not None and lq.D[k].shape[0]:
            m = lq.D[k].shape[0]
            row = np.zeros((m, nz))
            row[:, ix(k)] = lq.C[k]
            row[:, iu(k)] = lq.D[k]
            rows.append(row)
            rhs.append(-lq.e[k])
    Aeq = np.vstack(rows)
    beq = np.concatenate(rhs)
    m = Aeq.shape[0]
    kkt = np.block([[H, Aeq.T], [Aeq, np.zeros((m, m))]])
    try:
        sol = np.linalg.solve(kkt, np.concatenate([-g, beq]))
    except np.linalg.LinAlgError as exc:
        raise SingularKKTError(str(exc)) from exc
    z = sol[:nz]
    return z[:nX].reshape(N + 1, nx), z[nX:].reshape(N, nu)


def _equality_values(nlp, X, U):
    if hasattr(nlp, "packed_equalities"):
        _, _, e, _ = nlp.packed_equalities(X, U, False)
        return [e]
    return [e for e in nlp.equalities(X, U, False) if e is not None and len(e)]


def _summarize(defects, init, eqs):
    eq_abs = [np.abs(e).sum() for e in eqs if e.size]
    total = np.abs(defects).sum() + np.abs(init).sum() + float(np.sum(eq_abs))
    eq_max = max([np.abs(e).max() for e in eqs if e.size] or [0.0])
    return total, {
        "max_defect": float(max(np.abs(defects).max(initial=0.0), np.abs(init).max())),
        "max_equality": float(eq_max),
        "defects": np.abs(defects).max(axis=1),
    }


def _violation(nlp, X, U):
    defects = nlp.dynamics(X[:-1], U, False) - X[1:]
    return _summarize(defects, X[0] - nlp.x_init, _equality_values(nlp, X, U))


def merit(nlp, X, U, penalty=MERIT_PENALTY):
    viol, _ = _violation(nlp, X, U)
    return nlp.cost(X, U) + penalty * viol


def _merit_parts(nlp, X, U, penalty):
    viol, info = _violation(nlp, X, U)
    cost = nlp.cost(X, U)
    return cost + penalty * viol, cost, viol, info


def linearize(nlp, X, U) -> tuple[LQProblem, float]:
    Xn, A, B = nlp.dynamics(X[:-1], U, True)
    value, Q, S, R, q, r = nlp.cost_expansion(X, U)
    if hasattr(nlp, "packed_equalities"):
        Cp, Dp, ep, m = nlp.packed_equalities(X, U, True)
        C = [Cp[k, : m[k]] for k in range(len(m))]
        D = [Dp[k, : m[k]] for k in range(len(m))]
        e = [ep[k, : m[k]] for k in range(len(m))]
        packed = (Cp, Dp, ep, m)
    else:
        C, D, e = nlp.equalities(X, U, True)
        packed = None
    lq = LQProblem(A, B, Xn - X[1:], Q, S, R, q, r, C, D, e, nlp.x_init - X[0], packed)
    return lq, value


def solve_sqp(nlp, X0=None, U0=None, max_iter: int = 20, tol: float = 1e-8, qp_solver=riccati_solve,
              penalty: float = MERIT_PENALTY) -> Trajectory:
    """Run SQP from a warm start; never raises on numerical failure."""
    if X0 is None or U0 is None:
        X0, U0 = nlp.initial_guess()
    X = np.array(X0, dtype=float)
    U = np.array(U0, dtype=float)
    if X.shape != (nlp.N + 1, nlp.nx) or U.shape != (nlp.N, nlp.nu):
        raise ValueError("warm start has wrong dimensions")
    phi, cost, viol, info = _merit_parts(nlp, X, U, penalty)
    history = [phi]
    alphas = []
    converged = failed = False
    status = "max iterations"
    it = 0
    for it in range(1, max_iter + 1):
        try:
            lq, _ = linearize(nlp, X, U)
            dX, dU = qp_solver(lq)
        except (SingularKKTError, np.linalg.LinAlgError, FloatingPointError) as exc:
            failed, status = True, f"solver failure: {exc}"
            log.debug(status)
            break
        step = max(np.abs(dX).max(), np.abs(dU).max())
        if not np.isfinite(step):
            failed, status = True, "solver failure: non-finite step"
            break
        if step < tol:
            converged, status = True, "converged"
            break
        slope = float(np.sum(lq.q * dX) + np.sum(lq.r * dU)) - penalty * viol
        alpha, accepted = 1.0, False
        for _ in range(MAX_HALVINGS + 1):
            Xt, Ut = X + alpha * dX, U + alpha * dU
            phi_t, cost_t, viol_t, info_t = _merit_parts(nlp, Xt, Ut, penalty)
            bound = phi + ARMIJO * alpha * min(slope, 0.0)
            if np.isfinite(phi_t) and (phi_t <= bound if slope < 0 else phi_t < phi):
                accepted = True
                break
            alpha *= BACKTRACK
        if not accepted:
            status = "line search stalled"
            break
        X, U, phi, cost, viol, info = Xt, Ut, phi_t, cost_t, viol_t, info_t
        history.append(phi)
        alphas.append(alpha)
        if alpha * step < tol:
            converged, status = True, "converged"
            break
    report = dict(info)
    report.update(nlp.report(X, U) if hasattr(nlp, "report") else {})
    return Trajectory(
        times=np.asarray(nlp.times, dtype=float).copy(),
        X=X,
        U=U,
        residuals=report,
        cost=float(cost),
        iterations=it,
        merit_history=history,
        step_sizes=alphas,
        converged=converged,
        failed=failed,
        status=status,
    )
