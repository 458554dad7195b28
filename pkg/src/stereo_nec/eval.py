"""Trajectory metrics and angular-rate regime buckets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .so3 import RigidTransform, Rotation, geodesic_angle

BUCKET_EDGES = (5.0, 15.0, 30.0)  # deg/s
BUCKETS = ("below-range", "low", "medium", "high")

__all__ = ["TrajectoryPair", "align_rigid", "ate_rmse", "rre_rmse", "angular_velocity_bucket", "BUCKETS"]


def _rotation_matrix(x) -> np.ndarray:
    if isinstance(x, RigidTransform):
        return x.R
    if isinstance(x, Rotation):
        return x.matrix
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class TrajectoryPair:
    """Estimated and ground-truth poses associated by index.

    Entries may be :class:`RigidTransform` objects or 4x4 matrices; only
    positions are used by :func:`ate_rmse` and only rotations by
    :func:`rre_rmse`.
    """

    estimated: list
    ground_truth: list

    def __post_init__(self):
        if len(self.estimated) != len(self.ground_truth):
            raise InvalidInput(f"trajectory lengths differ: {len(self.estimated)} vs {len(self.ground_truth)}")
        if len(self.estimated) < 2:
            raise InvalidInput("trajectories need at least 2 poses")

    @staticmethod
    def _positions(poses) -> np.ndarray:
        out = []
        for P in poses:
            if isinstance(P, RigidTransform):
                out.append(P.t)
            else:
                P = np.asarray(P, dtype=float)
                out.append(P[:3, 3] if P.shape == (4, 4) else P.reshape(3))
        return np.array(out)

    @staticmethod
    def _rotations(poses) -> np.ndarray:
        out = []
        for P in poses:
            M = _rotation_matrix(P)
            out.append(M[:3, :3])
        return np.array(out)

    def positions(self):
        return self._positions(self.estimated), self._positions(self.ground_truth)

    def rotations(self):
        return self._rotations(self.estimated), self._rotations(self.ground_truth)


def align_rigid(src: np.ndarray, dst: np.ndarray):
    """Rotation ``R`` and translation ``t`` minimizing ``sum |R src_i + t - dst_i|^2`` (no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    C = (dst - md).T @ (src - ms)
    U, _, Vt = np.linalg.svd(C)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    R = U @ D @ Vt
    return R, md - R @ ms


def ate_rmse(pair: TrajectoryPair) -> float:
    """Position RMSE in meters after rigid (scale-free) alignment of the estimate."""
    est, gt = pair.positions()
    R, t = align_rigid(est, gt)
    err = est @ R.T + t - gt
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", err, err))))


def rre_rmse(pair: TrajectoryPair) -> float:
    """RMSE in degrees of the geodesic angle between consecutive relative rotations."""
    Re, Rg = pair.rotations()
    ang = [
        geodesic_angle(Re[k].T @ Re[k + 1], Rg[k].T @ Rg[k + 1])
        for k in range(len(Re) - 1)
    ]
    return float(np.rad2deg(np.sqrt(np.mean(np.square(ang)))))


def angular_velocity_bucket(mean_rate: float) -> str:
    """Regime of a mean angular rate in deg/s: low [5, 15), medium [15, 30), high >= 30."""
    r = float(mean_rate)
    if not r >= 0:
        raise InvalidInput("mean angular rate must be non-negative")
    if r < BUCKET_EDGES[0]:
        return "below-range"
    if r < BUCKET_EDGES[1]:
        return "low"
    if r < BUCKET_EDGES[2]:
        return "medium"
    return "high"
