"""Rotation update from gyro integration and translation-only bundle adjustment."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .camera import Landmark, PinholeStereoRig, project_points, projection_jacobians
from .errors import InsufficientData
from .lm import LMConfig, levenberg_marquardt
from .nec import Extrinsics
from .preintegration import correct_gamma
from .so3 import Rotation

logger = logging.getLogger(__name__)

HUBER_MONO = np.sqrt(5.991)
HUBER_STEREO = np.sqrt(7.815)

__all__ = [
    "propagate_rotations",
    "propagate_body_rotations",
    "retriangulate",
    "translation_only_ba",
    "ObservationBlock",
    "huber_cost",
    "HUBER_MONO",
    "HUBER_STEREO",
]


def propagate_body_rotations(R_wb0: Rotation, preints, b_g_star) -> list[Rotation]:
    """Chain bias-corrected gyro preintegrals from the first body orientation."""
    b = np.asarray(b_g_star, dtype=float)
    out = [R_wb0]
    R = R_wb0
    for pre in preints:
        R = R @ correct_gamma(pre, b - pre.bias.gyro)
        out.append(R)
    return out


def propagate_rotations(R_wb0: Rotation, preints, b_g_star, extr: Extrinsics) -> list[Rotation]:
    """Left-camera orientations ``R^w_ck = R^w_bk R^b_cL`` from gyro integration."""
    R_bc = extr.left.rotation
    return [R @ R_bc for R in propagate_body_rotations(R_wb0, preints, b_g_star)]


@dataclass
class ObservationBlock:
    """Observations stacked for vectorized residual evaluation.

    Mono rows carry a zero third component and a zero third whitening row.
    """

    landmark_index: np.ndarray
    keyframe_index: np.ndarray
    pixels: np.ndarray
    stereo: np.ndarray
    whiten: np.ndarray
    delta: np.ndarray

    @classmethod
    def build(cls, observations, landmark_ids, huber_delta=None) -> "ObservationBlock":
        row_of = {lid: i for i, lid in enumerate(landmark_ids)}
        obs = [o for o in observations if o.landmark_id in row_of]
        n = len(obs)
        px = np.zeros((n, 3))
        W = np.zeros((n, 3, 3))
        stereo = np.zeros(n, dtype=bool)
        delta = np.zeros(n)
        for i, o in enumerate(obs):
            d = len(o.pixel)
            px[i, :d] = o.pixel
            L = np.linalg.cholesky(np.linalg.inv(o.cov))
            W[i, :d, :d] = L.T
            stereo[i] = d == 3
            if huber_delta is None:
                delta[i] = HUBER_STEREO if d == 3 else HUBER_MONO
            else:
                delta[i] = huber_delta
        return cls(
            np.array([row_of[o.landmark_id] for o in obs], dtype=int),
            np.array([o.keyframe_id for o in obs], dtype=int),
            px,
            stereo,
            W,
            delta,
        )

    def __len__(self):
        return len(self.pixels)

    def whitened_errors(self, R_cw: np.ndarray, t_cw: np.ndarray, X: np.ndarray, rig: PinholeStereoRig):
        """Whitened errors (n, 3), camera points (n, 3) for poses indexed by keyframe."""
        Xc = np.einsum("nij,nj->ni", R_cw[self.keyframe_index], X[self.landmark_index]) + t_cw[self.keyframe_index]
        pred = project_points(Xc, rig)
        pred[~self.stereo, 2] = 0.0
        e = np.einsum("nij,nj->ni", self.whiten, self.pixels - pred)
        return e, Xc


def huber_cost(sq: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Huber kernel applied to squared whitened norms."""
    s = np.sqrt(sq)
    return np.where(s <= delta, sq, 2.0 * delta * s - delta * delta)


def huber_weights(sq: np.ndarray, delta: np.ndarray) -> np.ndarray:
    s = np.sqrt(sq)
    return np.where(s <= delta, 1.0, delta / np.maximum(s, 1e-300))


def retriangulate(observations, poses_cw, rig: PinholeStereoRig) -> dict[int, Landmark]:
    """Average of per-keyframe stereo triangulations of each landmark, in world frame."""
    acc: dict[int, list] = {}
    for o in observations:
        if o.kind != "stereo":
            continue
        uL, vL, uR = o.pixel
        d = uL - uR
        if d <= 0.25:
            continue
        z = rig.fx * rig.baseline / d
        Xc = np.array([(uL - rig.cx) * z / rig.fx, (vL - rig.cy) * z / rig.fy, z])
        T = poses_cw[o.keyframe_id]
        Xw = T.R.T @ (Xc - T.t)
        acc.setdefault(o.landmark_id, []).append(Xw)
    return {lid: Landmark(np.mean(v, axis=0)) for lid, v in sorted(acc.items())}


def translation_only_ba(
    rotations,
    translations_init,
    landmarks,
    observations,
    rig: PinholeStereoRig,
    huber_delta=None,
    lm_config: LMConfig | None = None,
    full_output: bool = False,
):
    """Optimize camera translations ``t_cw`` with rotations and landmarks held fixed.

    Args:
        rotations: camera-from-world rotations ``R^ck_w`` per keyframe.
        translations_init: initial ``t^ck_w`` per keyframe. The first one is
            held fixed (gauge).
        landmarks: mapping landmark id -> :class:`Landmark` (world frame).
        observations: :class:`Observation` list; ``keyframe_id`` indexes the
            pose lists.
        huber_delta: Huber threshold on the whitened error norm; default is
            the chi-square 95% value per observation dimension.

    Keyframes with fewer than 3 observations keep their initial translation
    and are reported in ``flags`` when ``full_output`` is set.
    """
    K = len(rotations)
    R_cw = np.array([r.matrix if isinstance(r, Rotation) else np.asarray(r) for r in rotations])
    t0 = np.array(translations_init, dtype=float).reshape(K, 3)
    ids = sorted(landmarks)
    X = np.array([landmarks[i].X if isinstance(landmarks[i], Landmark) else landmarks[i] for i in ids]).reshape(-1, 3)
    block = ObservationBlock.build(observations, ids, huber_delta)
    counts = np.bincount(block.keyframe_index, minlength=K) if len(block) else np.zeros(K, dtype=int)
    if not np.any(counts >= 3):
        raise InsufficientData("no keyframe has 3 or more observations")
    underconstrained = [k for k in range(K) if counts[k] < 3]
    for k in underconstrained:
        logger.warning("keyframe %d has %d observations; translation held fixed", k, counts[k])
    free = [k for k in range(1, K) if counts[k] >= 3]
    col = {k: 3 * i for i, k in enumerate(free)}
    n = len(block)

    def evaluate(t):
        e, Xc = block.whitened_errors(R_cw, t, X, rig)
        sq = np.einsum("ni,ni->n", e, e)
        w = np.sqrt(huber_weights(sq, block.delta))
        r = (e * w[:, None]).ravel()
        Jp = projection_jacobians(Xc, rig)
        Jp[~block.stereo, 2, :] = 0.0
        # de/dt = -W dpi/dXc
        Jt = -np.einsum("nij,njk->nik", block.whiten, Jp) * w[:, None, None]
        J = np.zeros((n, 3, 3 * len(free)))
        for k, c in col.items():
            m = block.keyframe_index == k
            J[m, :, c : c + 3] = Jt[m]
        return r, J.reshape(3 * n, -1)

    def cost(t):
        e, _ = block.whitened_errors(R_cw, t, X, rig)
        return float(np.sum(huber_cost(np.einsum("ni,ni->n", e, e), block.delta)))

    def retract(t, dx):
        t = t.copy()
        for k, c in col.items():
            t[k] += dx[c : c + 3]
        return t

    if not free:
        res_t = t0
        result = None
    else:
        result = levenberg_marquardt(evaluate, t0, retract, lm_config, cost_fn=cost)
        res_t = result.x
    out = [res_t[k].copy() for k in range(K)]
    if full_output:
        return out, {"result": result, "underconstrained": underconstrained}
    return out
