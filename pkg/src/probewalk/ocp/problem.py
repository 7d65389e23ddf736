"""Locomotion OCP: problem data, transcription and the batched knot evaluator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from probewalk._kernels import equality_kernel, feet_kernel, pack_params, rk4_kernel
from probewalk.model import FORCES, NU, NX, QD, QJ, RobotParams, centroidal_dynamics
from probewalk.ocp.barriers import TABLE_I, BarrierParams, barrier_derivatives
from probewalk.ocp.terms import ScheduleError, Weights

# smoothing of the tangential-force norm inside the friction cone (N)
CONE_SMOOTHING = 1.0


class AssemblyError(ValueError):
    pass


class Selector:
    """Sparse barrier Jacobian: row m is signs[m] times the unit vector cols[m]."""

    def __init__(self, cols, signs):
        self.cols = np.asarray(cols)
        self.signs = np.asarray(signs, dtype=float)


def _accumulate(g, H, J, c1, c2):
    if J is None:
        return
    if isinstance(J, Selector):
        np.add.at(g, (slice(None), J.cols), c1 * J.signs)
        np.add.at(H, (slice(None), J.cols, J.cols), c2)
        return
    g += np.einsum("nm,nmx->nx", c1, J)
    H += np.swapaxes(c2[..., None] * J, 1, 2) @ J


def knot_times(t_i: float, t_f: float, dt: float) -> np.ndarray:
    """Uniform knots of spacing dt; the last interval is shortened to land on t_f."""
    if not (dt > 0) or not (t_f > t_i):
        raise AssemblyError(f"invalid horizon [{t_i}, {t_f}] with dt={dt}")
    n = int(np.ceil((t_f - t_i) / dt - 1e-9))
    times = t_i + dt * np.arange(n + 1)
    times[-1] = t_f
    return times


@dataclass
class OcpProblem:
    params: RobotParams
    x_init: np.ndarray
    times: np.ndarray
    contact: np.ndarray  # (N+1, 4) bool
    x_ref: np.ndarray  # (N+1, 24)
    u_ref: np.ndarray  # (N+1, 24)
    p_ref: np.ndarray  # (N+1, 4, 3)
    v_ref: np.ndarray  # (N+1, 4, 3)
    weights: Weights = field(default_factory=Weights)
    normals: np.ndarray = field(default_factory=lambda: np.tile([0.0, 0.0, 1.0], (4, 1)))
    mu_c: float = 0.5
    barriers: dict = field(default_factory=lambda: dict(TABLE_I))
    # optional constraint blocks
    foot_placement: bool = False
    regions: list | None = None  # four HalfSpaces (or None per leg)
    placement_mask: np.ndarray | None = None  # (N+1, 4)
    support_polygon: bool = False
    A_s: np.ndarray | None = None
    b_s: np.ndarray | None = None
    alpha: float = 0.04
    support_mask: np.ndarray | None = None  # (N+1,)
    probing_force: bool = False
    probing_leg: int | None = None
    f_p: np.ndarray | None = None  # (N+1, 3)
    probing_mask: np.ndarray | None = None  # (N+1,)
    # position feedback in the contact equalities (1/s); 0 gives pure velocity rows
    contact_gain: float = 5.0
    # standard limit barriers
    friction: bool = True
    force_limits: bool = True
    joint_limits: bool = True

    @property
    def N(self) -> int:
        return len(self.times) - 1


def _check_shape(name, arr, shape):
    if arr is None or np.shape(arr) != shape:
        raise AssemblyError(f"{name} has shape {np.shape(arr)}, expected {shape}")


def transcribe(problem: OcpProblem) -> "RobotNLP":
    times = np.asarray(problem.times, dtype=float)
    if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
        raise AssemblyError("horizon needs at least one interval of positive length")
    n = len(times)
    _check_shape("contact", problem.contact, (n, 4))
    _check_shape("x_ref", problem.x_ref, (n, NX))
    _check_shape("u_ref", problem.u_ref, (n, NU))
    _check_shape("p_ref", problem.p_ref, (n, 4, 3))
    _check_shape("v_ref", problem.v_ref, (n, 4, 3))
    _check_shape("x_init", problem.x_init, (NX,))
    if problem.foot_placement:
        if problem.regions is None or len(problem.regions) != 4:
            raise AssemblyError("foot placement needs four regions")
        _check_shape("placement_mask", problem.placement_mask, (n, 4))
    if problem.support_polygon:
        _check_shape("A_s", problem.A_s, (3, 2))
        _check_shape("b_s", problem.b_s, (3,))
        _check_shape("support_mask", problem.support_mask, (n,))
    if problem.probing_force:
        _check_shape("f_p", problem.f_p, (n, 3))
        _check_shape("probing_mask", problem.probing_mask, (n,))
        if problem.probing_leg is None:
            raise AssemblyError("probing force needs a probing leg")
        mask = np.asarray(problem.probing_mask, bool)
        if np.any(mask & ~np.asarray(problem.contact, bool)[:, problem.probing_leg]):
            raise ScheduleError("probing force requested while the probing leg is in swing")
    return RobotNLP(problem)


class RobotNLP:
    """Multiple-shooting NLP; barriers live in the cost, mode equalities are hard."""

    def __init__(self, problem: OcpProblem):
        self.pb = problem
        self.times = np.asarray(problem.times, dtype=float)
        self.N = len(self.times) - 1
        self.nx, self.nu = NX, NU
        self.x_init = np.asarray(problem.x_init, dtype=float)
        self.dt = np.diff(self.times)
        # running cost integrates over each interval, normalized by the nominal spacing
        scale = self.dt / self.dt[0]
        self.w = np.append(scale, scale[-1])
        self.wu = np.append(scale, 0.0)
        self.contact = np.asarray(problem.contact, bool)
        self.normals = np.asarray(problem.normals, dtype=float)
        self.normals = self.normals / np.linalg.norm(self.normals, axis=1, keepdims=True)
        self._pv = pack_params(problem.params)
        self._p_ref = np.ascontiguousarray(np.asarray(problem.p_ref, dtype=float)[:-1])
        self._v_ref = np.ascontiguousarray(np.asarray(problem.v_ref, dtype=float)[:-1])
        self._kin_cache = None

    # ------------------------------------------------------------ dynamics
    def _f(self, x, u, derivatives):
        return centroidal_dynamics(self.pb.params, x, u, derivatives)

    def dynamics(self, X, U, derivatives=False):
        X = np.ascontiguousarray(X, dtype=float)
        U = np.ascontiguousarray(U, dtype=float)
        xn, Px, Pu = rk4_kernel(X, U, self.dt[: len(X)], self._pv, derivatives)
        return (xn, Px, Pu) if derivatives else xn

    def initial_guess(self):
        X = np.array(self.pb.x_ref, dtype=float)
        X[0] = self.x_init
        return X, np.array(self.pb.u_ref[:-1], dtype=float)

    def _kin(self, X, Ue, derivatives):
        """Foot kinematics on all knots, memoized on the last (X, Ue) pair."""
        c = self._kin_cache
        if c is not None and (c[2] or not derivatives) and np.array_equal(c[0], X) and np.array_equal(c[1], Ue):
            return c[3]
        p, v, dp, dvx, dvu = feet_kernel(
            np.ascontiguousarray(X, dtype=float), np.ascontiguousarray(Ue, dtype=float), self._pv, True, derivatives
        )
        kin = {"p": p, "v": v}
        if derivatives:
            kin.update(dp_dx=dp, dv_dx=dvx, dv_du=dvu)
        self._kin_cache = (X.copy(), Ue.copy(), derivatives, kin)
        return kin

    # ------------------------------------------------------------ equalities
    def equalities(self, X, U, derivatives=False):
        """Stance: v_i + k (p_i - p_ref) = 0.  Swing: f_i = 0 and n.(v_i - v_ref) + k n.(p_i - p_ref) = 0.

        With the foot on its reference (k = contact_gain) these are exactly
        v_i = 0 and n.v_i = n.v_ref; the position term removes integration drift.
        """
        C, D, e, m = self.packed_equalities(X, U, derivatives)
        es = [e[k, : m[k]] for k in range(self.N)]
        if not derivatives:
            return es
        return [C[k, : m[k]] for k in range(self.N)], [D[k, : m[k]] for k in range(self.N)], es

    def packed_equalities(self, X, U, derivatives=False):
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        kin = self._kin(X, np.vstack([U, U[-1:]]), derivatives)
        N = self.N
        if derivatives:
            dp, dvx, dvu = kin["dp_dx"][:N], kin["dv_dx"][:N], kin["dv_du"][:N]
        else:
            dp = dvx = dvu = np.zeros((1, 4, 3, NX))
        return equality_kernel(
            kin["p"][:N], kin["v"][:N], dp, dvx, dvu, np.ascontiguousarray(U),
            self._p_ref, self._v_ref, self.normals, self.contact[:N], float(self.pb.contact_gain), derivatives,
        )

    # ------------------------------------------------------------ cost
    def cost(self, X, U):
        return self._evaluate(X, U, second_order=False)[0]

    def cost_expansion(self, X, U):
        value, gx, gu, Hxx, Hux, Huu = self._evaluate(X, U, second_order=True)
        N = self.N
        return value, Hxx, Hux[:N], Huu[:N], gx, gu[:N]

    def gradient(self, X, U):
        _, gx, gu, *_ = self._evaluate(X, U, second_order=True)
        return gx, gu[: self.N]

    def _barrier_rows(self, X, Ue, kin, second_order):
        """Yield (name, h, Jx, Ju, weight, Huu_extra) for every active barrier block.

        Jx/Ju are (n, m, 24) or None; weight is (n, m).
        """
        pb = self.pb
        n = X.shape[0]
        F = Ue[:, FORCES].reshape(n, 4, 3)
        stance_w = self.contact * self.wu[:, None]  # (n, 4)
        legs_cols = [slice(3 * i, 3 * i + 3) for i in range(4)]
        if pb.friction:
            fn = np.einsum("nlc,lc->nl", F, self.normals)
            ft = F - fn[..., None] * self.normals
            s = np.sqrt(np.sum(ft * ft, axis=-1) + CONE_SMOOTHING**2)
            h = pb.mu_c * fn - s + CONE_SMOOTHING
            grad_f = pb.mu_c * self.normals - ft / s[..., None]  # (n,4,3)
            Ju = np.zeros((n, 4, NU))
            for i in range(4):
                Ju[:, i, legs_cols[i]] = grad_f[:, i]
            hess = None
            if second_order:
                P = np.eye(3) - np.einsum("li,lj->lij", self.normals, self.normals)
                hess = -(P / s[..., None, None] - np.einsum("nli,nlj->nlij", ft, ft) / s[..., None, None] ** 3)
            yield "friction_cone", h, None, Ju, stance_w, hess
        if pb.force_limits:
            fn = np.einsum("nlc,lc->nl", F, self.normals)
            fmax = 2.0 * pb.params.weight
            Ju = np.zeros((n, 8, NU))
            for i in range(4):
                Ju[:, i, legs_cols[i]] = self.normals[i]
                Ju[:, 4 + i, legs_cols[i]] = -self.normals[i]
            yield "contact_force", np.concatenate([fn, fmax - fn], axis=1), None, Ju, np.tile(stance_w, 2), None
        if pb.joint_limits:
            q = X[:, QJ]
            lo = np.tile(pb.params.joint_lower, 4)
            hi = np.tile(pb.params.joint_upper, 4)
            cols = np.tile(np.arange(QJ.start, QJ.stop), 2)
            signs = np.repeat([1.0, -1.0], 12)
            wq = np.broadcast_to(self.w[:, None], (n, 24))
            yield "joint_position", np.concatenate([q - lo, hi - q], axis=1), Selector(cols, signs), None, wq, None
            qd = Ue[:, QD]
            vmax = pb.params.joint_velocity_limit
            cols = np.tile(np.arange(QD.start, QD.stop), 2)
            wv = np.broadcast_to(self.wu[:, None], (n, 24))
            yield "joint_velocity", np.concatenate([qd + vmax, vmax - qd], axis=1), None, Selector(cols, signs), wv, None
        if pb.foot_placement:
            mask = np.asarray(pb.placement_mask, bool)
            for i, hs in enumerate(pb.regions):
                if hs is None or getattr(hs, "unbounded", False) or not mask[:, i].any():
                    continue
                h = kin["p"][:, i] @ hs.A.T + hs.b
                Jx = np.einsum("mc,ncx->nmx", hs.A, kin["dp_dx"][:, i]) if second_order else None
                wgt = (mask[:, i] * self.w)[:, None] * np.ones((1, 4))
                yield "foot_placement", h, Jx, None, wgt, None
        if pb.support_polygon:
            mask = np.asarray(pb.support_mask, bool)
            h = X[:, 6:8] @ np.asarray(pb.A_s).T + pb.b_s - pb.alpha
            Jx = np.zeros((n, 3, NX))
            Jx[:, :, 6:8] = pb.A_s
            yield "support_polygon", h, Jx, None, (mask * self.w)[:, None] * np.ones((1, 3)), None
        if pb.probing_force:
            mask = np.asarray(pb.probing_mask, bool)
            leg = pb.probing_leg
            r = F[:, leg] - pb.f_p
            Ju = np.zeros((n, 6, NU))
            Ju[:, :3, legs_cols[leg]] = np.eye(3)
            Ju[:, 3:, legs_cols[leg]] = -np.eye(3)
            wgt = (mask * self.wu)[:, None] * np.ones((1, 6))
            yield "probing_force", np.concatenate([r, -r], axis=1), None, Ju, wgt, None

    def _evaluate(self, X, U, second_order):
        pb, wts = self.pb, self.pb.weights
        X = np.asarray(X, dtype=float)
        Ue = np.vstack([U, U[-1:]])
        n = X.shape[0]
        w, wu = self.w, self.wu
        kin = self._kin(X, Ue, second_order)
        swing = ~self.contact
        dx = X - pb.x_ref
        du = Ue - pb.u_ref
        ep = kin["p"] - pb.p_ref
        ev = (kin["v"] - pb.v_ref) * swing[..., None]
        value = 0.5 * np.sum(w[:, None] * wts.Q * dx * dx) + 0.5 * np.sum(wu[:, None] * wts.R * du * du)
        value += 0.5 * wts.W_p * np.sum(w[:, None, None] * ep * ep)
        value += 0.5 * wts.W_v * np.sum(wu[:, None, None] * ev * ev)
        if second_order:
            gx = w[:, None] * wts.Q * dx
            gu = wu[:, None] * wts.R * du
            Hxx = np.zeros((n, NX, NX))
            Hux = np.zeros((n, NU, NX))
            Huu = np.zeros((n, NU, NU))
            idx = np.arange(NX)
            Hxx[:, idx, idx] = w[:, None] * wts.Q
            Huu[:, idx, idx] = wu[:, None] * wts.R
            dp = kin["dp_dx"].reshape(n, 12, NX)
            cp = wts.W_p * w
            gx += cp[:, None] * np.einsum("nm,nmx->nx", ep.reshape(n, 12), dp)
            Hxx += cp[:, None, None] * (np.swapaxes(dp, 1, 2) @ dp)
            cv = wts.W_v * wu
            mv = np.repeat(swing, 3, axis=1) * cv[:, None]  # (n, 12)
            dvx = kin["dv_dx"].reshape(n, 12, NX)
            dvu = kin["dv_du"].reshape(n, 12, NU)
            evf = ev.reshape(n, 12)
            gx += np.einsum("nm,nmx->nx", mv * evf, dvx)
            gu += np.einsum("nm,nmx->nx", mv * evf, dvu)
            wdvx = mv[..., None] * dvx
            wdvu = mv[..., None] * dvu
            Hxx += np.swapaxes(wdvx, 1, 2) @ dvx
            Hux += np.swapaxes(wdvu, 1, 2) @ dvx
            Huu += np.swapaxes(wdvu, 1, 2) @ dvu
        for name, h, Jx, Ju, wgt, hess in self._barrier_rows(X, Ue, kin, second_order):
            bp: BarrierParams = pb.barriers[name]
            B, d1, d2 = barrier_derivatives(h, bp.mu, bp.delta)
            value += float(np.sum(wgt * B))
            if not second_order:
                continue
            c1, c2 = wgt * d1, wgt * d2
            _accumulate(gx, Hxx, Jx, c1, c2)
            _accumulate(gu, Huu, Ju, c1, c2)
            if hess is not None:
                for i in range(4):
                    cols = slice(3 * i, 3 * i + 3)
                    Huu[:, cols, cols] += c1[:, i, None, None] * hess[:, i]
        if not second_order:
            return (float(value),)
        return float(value), gx, gu, Hxx, Hux, Huu

    # ------------------------------------------------------------ diagnostics
    def barrier_residuals(self, X, U):
        """Minimum residual per barrier block over the knots where it is active."""
        Ue = np.vstack([U, U[-1:]])
        kin = self._kin(np.asarray(X, dtype=float), Ue, False)
        out = {}
        for name, h, _, _, wgt, _ in self._barrier_rows(X, Ue, kin, False):
            active = wgt > 0
            if active.any():
                out[name] = min(out.get(name, np.inf), float(h[active].min()))
        return out

    def report(self, X, U):
        return {"barrier_min": self.barrier_residuals(X, U)}
