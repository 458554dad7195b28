"""Small scene builders used by several test modules."""

from __future__ import annotations

import os

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation as SciRot

from stereo_nec.dataio import write_euroc_groundtruth, write_euroc_imu
from stereo_nec.dataio.euroc import GT_REL_PATH, IMU_REL_PATH, GroundTruthRecord
from stereo_nec.nec import BearingPairs, StereoPairSet
from stereo_nec.preintegration import ImuSample, preintegrate, split_by_keyframes
from stereo_nec.so3 import exp_matrix


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def two_view_pairs(rng, R_rel, t_rel, n=50, depth=(2.0, 8.0), fov=(0.8, 0.52)):
    """Bearings of random points seen from camera k (identity) and camera k+1 (R_rel, t_rel in k).

    ``fov`` holds the half-extent tangents; the default matches the default rig.
    """
    d = rng.uniform(*depth, n)
    X = np.column_stack([rng.uniform(-fov[0], fov[0], n) * d, rng.uniform(-fov[1], fov[1], n) * d, d])
    Xp = (X - t_rel) @ R_rel  # R_rel^T (X - t)
    return BearingPairs(unit(X), unit(Xp))


def perturb_bearings(F, sigma, rng):
    """Rotate each bearing by a random tangent-plane angle of std ``sigma``."""
    if sigma == 0:
        return F.copy()
    w = rng.normal(0.0, sigma, F.shape)
    w -= np.sum(w * F, axis=1, keepdims=True) * F
    out = np.array([exp_matrix(wi) @ fi for wi, fi in zip(w, F)])
    return unit(out)


def noisy_stereo_sets(sets, sigma, rng):
    out = []
    for s in sets:
        L = BearingPairs(perturb_bearings(s.left.f, sigma, rng), perturb_bearings(s.left.f_prime, sigma, rng))
        R = BearingPairs(perturb_bearings(s.right.f, sigma, rng), perturb_bearings(s.right.f_prime, sigma, rng))
        out.append(StereoPairSet(L, R, s.k))
    return out


def window_preints(window, bias=None):
    blocks = split_by_keyframes(window.imu, window.timestamps)
    return [preintegrate(b, bias, window.noise) for b in blocks]


def export_euroc(seq, root, t0_ns=1403636579758555392):
    """Write a synthetic sequence in the EuRoC directory layout."""
    (root / os.path.dirname(IMU_REL_PATH)).mkdir(parents=True)
    (root / os.path.dirname(GT_REL_PATH)).mkdir(parents=True)
    ns = t0_ns + np.round(seq.imu.t * 1e9).astype(np.int64)
    write_euroc_imu(root / IMU_REL_PATH,
                    [ImuSample(0.0, w, a, timestamp_ns=int(n)) for n, w, a in zip(ns, seq.imu.gyro, seq.imu.accel)])
    recs = [GroundTruthRecord(int(t0_ns + round(t * 1e9)), s.pose_wb.t, s.pose_wb.rotation, s.velocity,
                              b.gyro, b.accel)
            for t, s, b in zip(seq.timestamps, seq.gt_states, seq.gt_bias)]
    write_euroc_groundtruth(root / GT_REL_PATH, recs)


def brute_ate(est, gt):
    """Minimize the aligned position RMSE over a rotation vector; translation is eliminated in closed form."""
    P = np.array([T.t for T in est])
    Q = np.array([T.t for T in gt])

    def cost(w):
        R = SciRot.from_rotvec(w).as_matrix()
        t = Q.mean(0) - R @ P.mean(0)
        e = P @ R.T + t - Q
        return np.mean(np.sum(e * e, axis=1))

    starts = [np.zeros(3)] + [np.pi * v for v in np.eye(3)] + [SciRot.random(random_state=i).as_rotvec() for i in range(6)]
    best = min((minimize(cost, s, method="BFGS", options={"gtol": 1e-12}) for s in starts), key=lambda r: r.fun)
    return float(np.sqrt(best.fun))


def brute_rre(est, gt):
    ang = []
    for k in range(len(est) - 1):
        E = est[k].R.T @ est[k + 1].R
        G = gt[k].R.T @ gt[k + 1].R
        c = np.clip((np.trace(E.T @ G) - 1.0) / 2.0, -1.0, 1.0)
        ang.append(np.arccos(c))
    return float(np.rad2deg(np.sqrt(np.mean(np.square(ang)))))
