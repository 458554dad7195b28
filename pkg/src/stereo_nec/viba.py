"""Initialization gate on the average NEC residual, and joint visual-inertial BA."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .camera import Landmark, PinholeStereoRig, projection_jacobians
from .errors import GaugeError, InsufficientData, InvalidInput, NotConvergedWarning
from .inertial import (
    E_Z,
    GravityModel,
    KeyframeState,
    PriorSpec,
    gravity_jacobian,
    inertial_residual_jacobians,
    sqrt_information,
)
from .lm import LMConfig, LMResult, levenberg_marquardt
from .nec import Extrinsics, _normals, as_pairs
from .pose_refine import ObservationBlock, huber_cost, huber_weights
from .preintegration import ImuBias, correct_gamma
from .so3 import RigidTransform, Rotation, exp_matrix, hat_batch

logger = logging.getLogger(__name__)

GATE_THRESHOLD = 1e-4
GAUGE_TOL = 1e-12

__all__ = [
    "NecCheckReport",
    "compute_nec_check",
    "relative_translations",
    "joint_vi_ba",
    "VIBAResult",
]


@dataclass(frozen=True)
class NecCheckReport:
    e_bar: float
    per_pair: np.ndarray
    threshold: float
    passed: bool
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def relative_translations(camera_poses_wc, mode: str = "relative") -> list[np.ndarray]:
    """Translation direction per consecutive camera pair, in camera ``k`` coordinates.

    ``mode="relative"`` gives ``R_wck^T (c_{k+1} - c_k)``, the baseline the
    epipolar normals are orthogonal to. ``mode="literal"`` gives the
    world-origin position in camera ``k``, ``t^ck_w = -R_wck^T c_k``.
    """
    poses = list(camera_poses_wc)
    out = []
    for a, b in zip(poses[:-1], poses[1:]):
        if mode == "relative":
            out.append(a.R.T @ (b.t - a.t))
        elif mode == "literal":
            out.append(-a.R.T @ a.t)
        else:
            raise InvalidInput(f"unknown translation mode {mode!r}")
    return out


def compute_nec_check(
    covisible_pairs,
    preints,
    b_g_star,
    extr: Extrinsics,
    translations,
    threshold: float = GATE_THRESHOLD,
) -> NecCheckReport:
    """Average NEC residual ``e_bar`` over keyframe pairs and the pass/fail decision.

    For pair ``k`` the normals use left-camera bearings and the relative
    rotation ``R_cb gamma_hat R_bc`` with ``gamma_hat`` corrected to
    ``b_g_star``; ``e_k`` is the mean of ``|n_i . t_hat|`` with ``t_hat`` the
    normalized translation. A zero translation contributes ``e_k = 0``.
    """
    if not threshold > 0:
        raise InvalidInput("threshold must be positive")
    sets = [as_pairs(p) for p in covisible_pairs]
    preints = list(preints)
    translations = [np.asarray(t, dtype=float) for t in translations]
    if not (len(sets) == len(preints) == len(translations)) or not sets:
        raise InvalidInput("pair lists, preintegrations and translations must align and be non-empty")
    bg = np.asarray(b_g_star, dtype=float)
    R_bc = extr.left.R
    per = np.zeros(len(sets))
    counts = np.zeros(len(sets), dtype=int)
    for k, (p, pre, t) in enumerate(zip(sets, preints, translations)):
        if len(p) == 0:
            raise InsufficientData(f"keyframe pair {k} has no covisible bearing pairs")
        counts[k] = len(p)
        nt = np.linalg.norm(t)
        if nt == 0.0:
            continue
        G = R_bc.T @ correct_gamma(pre, bg - pre.bias.gyro).matrix @ R_bc
        N = _normals(p, G)
        per[k] = float(np.mean(np.abs(N @ (t / nt))))
    e_bar = float(np.mean(per))
    return NecCheckReport(e_bar, per, float(threshold), bool(e_bar < threshold), counts)


@dataclass
class VIBAResult:
    keyframes: list
    landmarks: dict
    gravity: GravityModel
    bias: ImuBias
    cost: float
    converged: bool
    lm: LMResult | None = None
    preints: list | None = None


@dataclass
class _State:
    R: np.ndarray  # (N, 3, 3) body orientations
    p: np.ndarray  # (N, 3)
    V: np.ndarray  # (N, 3)
    R_wg: np.ndarray
    bg: np.ndarray
    ba: np.ndarray
    X: np.ndarray  # (L, 3)


class _Layout:
    def __init__(self, N: int, L: int, inertial: bool):
        self.N, self.L, self.inertial = N, L, inertial
        self.pose = 0  # poses 1..N-1, 6 columns each (rotation, position)
        nxt = 6 * (N - 1)
        if inertial:
            self.vel = nxt
            self.grav = self.vel + 3 * N
            self.bg = self.grav + 2
            self.ba = self.bg + 3
            nxt = self.ba + 3
        self.ns = nxt
        self.lm = nxt
        self.dim = nxt + 3 * L

    def pose_col(self, k: int) -> int:
        return -1 if k == 0 else 6 * (k - 1)


def _schur_solver(ns: int):
    """Solve the damped normal equations with the landmark block eliminated."""

    def solve(H, g, J, r):
        H = H.tocsr()
        nl = H.shape[0] - ns
        Hss = H[:ns, :ns].toarray()
        if nl == 0:
            return _chol_solve(Hss, -g)
        Hsl = H[:ns, ns:]
        Hll = H[ns:, ns:].tocoo()
        nb = nl // 3
        B = np.zeros((nb, 3, 3))
        np.add.at(B, (Hll.row // 3, Hll.row % 3, Hll.col % 3), Hll.data)
        Binv = np.linalg.inv(B)
        Binv_sp = sp.bsr_matrix((Binv, np.arange(nb), np.arange(nb + 1)), shape=(nl, nl))
        HslB = Hsl @ Binv_sp
        S = Hss - (HslB @ Hsl.T).toarray()
        gs, gl = g[:ns], g[ns:]
        dxs = _chol_solve(0.5 * (S + S.T), -gs + HslB @ gl)
        dxl = Binv_sp @ (-gl - Hsl.T @ dxs)
        return np.concatenate([dxs, dxl])

    return solve


def _chol_solve(A, b):
    c = np.linalg.cholesky(A)
    return np.linalg.solve(c.T, np.linalg.solve(c, b))


def joint_vi_ba(
    keyframes,
    landmarks,
    preints,
    observations,
    gravity: GravityModel,
    bias: ImuBias,
    extr: Extrinsics,
    rig: PinholeStereoRig,
    prior: PriorSpec | None = None,
    huber_delta=None,
    lm_config: LMConfig | None = None,
    inertial_weight: float = 1.0,
    relinearize: bool = True,
    max_relinearizations: int = 3,
    full_output: bool = False,
):
    """Joint refinement of poses, velocities, landmarks, gravity direction and biases.

    The first keyframe pose is fixed and gravity has two degrees of freedom,
    which removes the gauge. Reprojection terms use the Huber kernel;
    landmarks are eliminated by Schur complement in each LM step. With
    ``inertial_weight=0`` the inertial and prior terms are dropped and the
    problem is plain visual BA over poses and landmarks.

    Returns:
        :class:`VIBAResult`.

    Raises:
        GaugeError: the reduced normal equations are rank deficient at the
            starting point.
    """
    keyframes = list(keyframes)
    preints = list(preints)
    N = len(keyframes)
    if N < 2:
        raise InsufficientData("joint BA needs at least 2 keyframes")
    inertial = inertial_weight > 0
    if inertial and len(preints) != N - 1:
        raise InvalidInput("need one preintegration per consecutive keyframe pair")
    prior = prior or PriorSpec()
    ids = sorted(landmarks)
    X0 = np.array([landmarks[i].X if isinstance(landmarks[i], Landmark) else landmarks[i] for i in ids], dtype=float)
    X0 = X0.reshape(-1, 3)
    block = ObservationBlock.build(observations, ids, huber_delta)
    L = len(ids)
    seen = np.bincount(block.landmark_index, minlength=L) if len(block) else np.zeros(L, dtype=int)
    n_st = np.bincount(block.landmark_index[block.stereo], minlength=L) if len(block) else np.zeros(L, dtype=int)
    keep = (n_st > 0) | (seen >= 2)
    if not np.all(keep):
        # a single monocular ray leaves the landmark depth free
        logger.info("joint_vi_ba: %d landmark(s) without a depth constraint held out", int(np.sum(~keep)))
        ids = [i for i, k in zip(ids, keep) if k]
        X0 = X0[keep]
        block = ObservationBlock.build(observations, ids, huber_delta)

    x = _State(
        R=np.array([k.pose_wb.R for k in keyframes]),
        p=np.array([k.pose_wb.t for k in keyframes]),
        V=np.array([k.velocity for k in keyframes], dtype=float),
        R_wg=gravity.R_wg.matrix.copy(),
        bg=bias.gyro.copy(),
        ba=bias.accel.copy(),
        X=X0,
    )
    lay = _Layout(N, len(ids), inertial)
    result = None
    for it in range(max_relinearizations + 1):
        problem = _Problem(lay, block, preints, extr, rig, prior, gravity.G, inertial_weight)
        if it == 0:
            problem.check_gauge(x)
        result = levenberg_marquardt(
            problem.evaluate, x, problem.retract, lm_config, cost_fn=problem.cost, solve=_schur_solver(lay.ns)
        )
        x = result.x
        if not (inertial and relinearize):
            break
        shift = np.linalg.norm(np.concatenate([x.bg - preints[0].bias.gyro, x.ba - preints[0].bias.accel]))
        if shift < 1e-9:
            break
        b_new = ImuBias(x.bg.copy(), x.ba.copy())
        preints = [p.reintegrate(b_new) for p in preints]

    if not result.converged:
        warnings.warn("joint_vi_ba: LM did not converge", NotConvergedWarning, stacklevel=2)
    kfs = [
        KeyframeState(k.timestamp, RigidTransform(Rotation.from_matrix(x.R[i]), x.p[i]), x.V[i].copy())
        for i, k in enumerate(keyframes)
    ]
    out_landmarks = dict(landmarks)
    out_landmarks.update({lid: Landmark(x.X[j].copy()) for j, lid in enumerate(ids)})
    return VIBAResult(
        keyframes=kfs,
        landmarks=out_landmarks,
        gravity=GravityModel(Rotation.from_matrix(x.R_wg), gravity.G),
        bias=ImuBias(x.bg.copy(), x.ba.copy()),
        cost=result.cost,
        converged=result.converged,
        lm=result if full_output else None,
        preints=preints if full_output else None,
    )


class _Problem:
    def __init__(self, lay: _Layout, block: ObservationBlock, preints, extr, rig, prior, G, inertial_weight):
        self.lay = lay
        self.block = block
        self.preints = preints
        self.rig = rig
        self.prior = prior
        self.G = G
        self.R_bc = extr.left.R
        self.t_bc = extr.left.t
        self.sw = np.sqrt(inertial_weight)
        self.Ws = [sqrt_information(p.cov) for p in preints] if lay.inertial else []
        self.Wp = prior.sqrt_information()
        self._visual_pattern()

    # -- visual terms -----------------------------------------------------

    def _visual_pattern(self):
        lay, b = self.lay, self.block
        n = len(b)
        rows3 = 3 * np.arange(n)[:, None] + np.arange(3)[None, :]  # (n, 3)
        pc = np.array([lay.pose_col(k) for k in range(lay.N)])[b.keyframe_index]
        has_pose = pc >= 0
        pose_cols = pc[:, None] + np.arange(6)[None, :]
        lm_cols = lay.lm + 3 * b.landmark_index[:, None] + np.arange(3)[None, :]
        self.v_has_pose = has_pose
        self.v_rows_pose = np.repeat(rows3[has_pose][:, :, None], 6, axis=2).ravel()
        self.v_cols_pose = np.repeat(pose_cols[has_pose][:, None, :], 3, axis=1).ravel()
        self.v_rows_lm = np.repeat(rows3[:, :, None], 3, axis=2).ravel()
        self.v_cols_lm = np.repeat(lm_cols[:, None, :], 3, axis=1).ravel()

    def _camera(self, x: _State):
        # T_cw from T_wb and T_bc
        R_wc = x.R @ self.R_bc
        R_cw = np.transpose(R_wc, (0, 2, 1))
        c = x.p + np.einsum("nij,j->ni", x.R, self.t_bc)
        t_cw = -np.einsum("nij,nj->ni", R_cw, c)
        return R_cw, t_cw

    def _visual(self, x: _State, jac: bool):
        b = self.block
        R_cw, t_cw = self._camera(x)
        e, Xc = b.whitened_errors(R_cw, t_cw, x.X, self.rig)
        sq = np.einsum("ni,ni->n", e, e)
        if not jac:
            return e, sq, None
        w = np.sqrt(huber_weights(sq, b.delta))
        Jp = projection_jacobians(Xc, self.rig)
        Jp[~b.stereo, 2, :] = 0.0
        A = -np.einsum("nij,njk->nik", b.whiten, Jp) * w[:, None, None]  # de/dXc
        kf = b.keyframe_index
        Rbc_T = self.R_bc.T
        RwbT = np.transpose(x.R, (0, 2, 1))[kf]
        y = np.einsum("nij,nj->ni", RwbT, x.X[b.landmark_index] - x.p[kf])
        dXc_dX = np.einsum("ij,njk->nik", Rbc_T, RwbT)
        dXc_dth = np.einsum("ij,njk->nik", Rbc_T, hat_batch(y))
        J_lm = np.einsum("nij,njk->nik", A, dXc_dX)
        J_th = np.einsum("nij,njk->nik", A, dXc_dth)
        J_pose = np.concatenate([J_th, -J_lm], axis=2)  # dXc/dp = -dXc/dX
        return e * w[:, None], sq, (J_pose[self.v_has_pose].ravel(), J_lm.ravel())

    # -- inertial terms ---------------------------------------------------

    def _inertial(self, x: _State, jac: bool):
        lay = self.lay
        g_w = x.R_wg @ (self.G * E_Z)
        dg = gravity_jacobian(x.R_wg, self.G)
        bias = ImuBias(x.bg, x.ba)
        r = np.zeros(9 * len(self.preints))
        rows, cols, vals = [], [], []
        for k, pre in enumerate(self.preints):
            rk, Jk = inertial_residual_jacobians(
                x.R[k], x.p[k], x.V[k], x.R[k + 1], x.p[k + 1], x.V[k + 1], g_w, dg, bias, pre, jacobians=jac
            )
            W = self.sw * self.Ws[k]
            r[9 * k : 9 * k + 9] = W @ rk
            if not jac:
                continue
            blocks = [
                (lay.vel + 3 * k, Jk["v0"]),
                (lay.vel + 3 * k + 3, Jk["v1"]),
                (lay.grav, Jk["g"]),
                (lay.bg, Jk["bg"]),
                (lay.ba, Jk["ba"]),
            ]
            for kk, tag in ((k, "0"), (k + 1, "1")):
                c = lay.pose_col(kk)
                if c >= 0:
                    blocks.append((c, Jk["R" + tag]))
                    blocks.append((c + 3, Jk["p" + tag]))
            for c0, Jb in blocks:
                Jw = W @ Jb
                m = Jw.shape[1]
                rr, cc = np.meshgrid(9 * k + np.arange(9), c0 + np.arange(m), indexing="ij")
                rows.append(rr.ravel())
                cols.append(cc.ravel())
                vals.append(Jw.ravel())
        if not jac:
            return r, None
        return r, (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))

    # -- LM callbacks -----------------------------------------------------

    def evaluate(self, x: _State):
        lay = self.lay
        ev, _, (jp, jl) = self._visual(x, True)
        nv = 3 * len(self.block)
        rows = [self.v_rows_pose, self.v_rows_lm]
        cols = [self.v_cols_pose, self.v_cols_lm]
        vals = [jp, jl]
        parts = [ev.ravel()]
        if lay.inertial:
            ri, (ir, ic, iv) = self._inertial(x, True)
            rows.append(ir + nv)
            cols.append(ic)
            vals.append(iv)
            parts.append(ri)
            off = nv + len(ri)
            Wp = self.sw * self.Wp
            parts.append(Wp @ self.prior.residual(ImuBias(x.bg, x.ba)))
            rr, cc = np.meshgrid(off + np.arange(6), lay.bg + np.arange(6), indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(Wp.ravel())
        r = np.concatenate(parts)
        J = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(r), lay.dim)
        )
        return r, J

    def cost(self, x: _State) -> float:
        _, sq, _ = self._visual(x, False)
        c = float(np.sum(huber_cost(sq, self.block.delta)))
        if self.lay.inertial:
            ri, _ = self._inertial(x, False)
            rp = self.sw * (self.Wp @ self.prior.residual(ImuBias(x.bg, x.ba)))
            c += float(ri @ ri + rp @ rp)
        return c

    def retract(self, x: _State, dx) -> _State:
        lay = self.lay
        R = x.R.copy()
        p = x.p.copy()
        for k in range(1, lay.N):
            c = lay.pose_col(k)
            R[k] = R[k] @ exp_matrix(dx[c : c + 3])
            p[k] = p[k] + dx[c + 3 : c + 6]
        X = x.X + dx[lay.lm :].reshape(-1, 3)
        if not lay.inertial:
            return _State(R, p, x.V, x.R_wg, x.bg, x.ba, X)
        return _State(
            R,
            p,
            x.V + dx[lay.vel : lay.vel + 3 * lay.N].reshape(-1, 3),
            x.R_wg @ exp_matrix(np.array([dx[lay.grav], dx[lay.grav + 1], 0.0])),
            x.bg + dx[lay.bg : lay.bg + 3],
            x.ba + dx[lay.ba : lay.ba + 3],
            X,
        )

    def check_gauge(self, x: _State):
        """Raise :class:`GaugeError` if the undamped reduced system is singular."""
        _, J = self.evaluate(x)
        H = (J.T @ J).tocsr()
        ns = self.lay.ns
        nl = H.shape[0] - ns
        if nl:
            Hll = H[ns:, ns:].tocoo()
            B = np.zeros((nl // 3, 3, 3))
            np.add.at(B, (Hll.row // 3, Hll.row % 3, Hll.col % 3), Hll.data)
            ev = np.linalg.eigvalsh(B)
            bad = np.nonzero(ev[:, 0] <= GAUGE_TOL * np.maximum(ev[:, -1], 1e-300))[0]
            if len(bad):
                raise GaugeError(f"{len(bad)} landmark(s) are not constrained in depth, e.g. block {int(bad[0])}")
            Binv = np.linalg.inv(B)
            Binv_sp = sp.bsr_matrix((Binv, np.arange(len(B)), np.arange(len(B) + 1)), shape=(nl, nl))
            Hsl = H[:ns, ns:]
            S = H[:ns, :ns].toarray() - (Hsl @ Binv_sp @ Hsl.T).toarray()
        else:
            S = H.toarray()
        if ns == 0:
            return
        d = np.sqrt(np.maximum(np.diag(S), 1e-300))
        Sn = S / np.outer(d, d)
        w, V = np.linalg.eigh(0.5 * (Sn + Sn.T))
        if w[0] <= 1e-10 * max(w[-1], 1e-300):
            col = int(np.argmax(np.abs(V[:, 0])))
            raise GaugeError(
                f"reduced normal equations are rank deficient (min/max eigenvalue {w[0]:.3g}/{w[-1]:.3g}); "
                f"null direction dominated by state column {col}"
            )

