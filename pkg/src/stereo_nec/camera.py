"""Rectified pinhole stereo rig: projection, Jacobians and triangulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateDepth, InvalidInput
from .so3 import RigidTransform

MIN_DEPTH = 1e-6
MIN_DISPARITY = 0.25
PYRAMID_SCALE = 1.2
PIXEL_SIGMA = 1.0


@dataclass(frozen=True)
class PinholeStereoRig:
    fx: float = 458.654
    fy: float = 457.296
    cx: float = 367.215
    cy: float = 248.375
    baseline: float = 0.110078
    width: int = 752
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0 and self.baseline >= 0):
            raise InvalidInput("fx, fy must be positive and baseline non-negative")

    def in_image(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (uv[..., 0] >= 0) & (uv[..., 0] < self.width) & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)

    def bearing(self, uv) -> np.ndarray:
        """Unit bearing vectors of pixel coordinates ``uv`` (..., 2)."""
        uv = np.asarray(uv, dtype=float)
        x = (uv[..., 0] - self.cx) / self.fx
        y = (uv[..., 1] - self.cy) / self.fy
        f = np.stack([x, y, np.ones_like(x)], axis=-1)
        return f / np.linalg.norm(f, axis=-1, keepdims=True)


@dataclass(frozen=True)
class Landmark:
    X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float).reshape(3)
        if not np.all(np.isfinite(X)):
            raise InvalidInput("landmark coordinates must be finite")
        object.__setattr__(self, "X", X)


@dataclass(frozen=True)
class Observation:
    """Pixel measurement of one landmark in one keyframe.

    ``pixel`` is ``(u_L, v_L)`` for ``kind == "mono"`` and ``(u_L, v_L, u_R)``
    for ``kind == "stereo"``. ``level`` is the pyramid level the keypoint was
    detected at; it sets the covariance when ``cov`` is omitted.
    """

    landmark_id: int
    keyframe_id: int
    kind: str
    pixel: np.ndarray
    level: int = 0
    cov: np.ndarray | None = None

    def __post_init__(self):
        dim = {"mono": 2, "stereo": 3}.get(self.kind)
        if dim is None:
            raise InvalidInput(f"unknown observation kind {self.kind!r}")
        px = np.asarray(self.pixel, dtype=float).reshape(dim)
        object.__setattr__(self, "pixel", px)
        if self.cov is None:
            s = PIXEL_SIGMA * PYRAMID_SCALE**self.level
            object.__setattr__(self, "cov", (s * s) * np.eye(dim))
        else:
            cov = np.asarray(self.cov, dtype=float).reshape(dim, dim)
            if np.any(np.linalg.eigvalsh(0.5 * (cov + cov.T)) <= 0):
                raise InvalidInput("observation covariance must be positive definite")
            object.__setattr__(self, "cov", cov)

    @property
    def sigma(self) -> float:
        """Isotropic pixel standard deviation implied by ``cov``."""
        return float(np.sqrt(np.trace(self.cov) / len(self.pixel)))


def _camera_point(X, pose_cw: RigidTransform) -> np.ndarray:
    Xc = pose_cw.apply(X.X if isinstance(X, Landmark) else X)
    if Xc[2] <= MIN_DEPTH:
        raise BehindCamera(f"point at depth {Xc[2]:.3g} m is behind the camera")
    return Xc


def project_point_mono(Xc, rig: PinholeStereoRig) -> np.ndarray:
    return np.array([rig.fx * Xc[0] / Xc[2] + rig.cx, rig.fy * Xc[1] / Xc[2] + rig.cy])


def project_mono(X, pose_cw: RigidTransform, rig: PinholeStereoRig) -> np.ndarray:
    """Pixel ``(u, v)`` of world point ``X`` in the left camera."""
    return project_point_mono(_camera_point(X, pose_cw), rig)


def project_stereo(X, pose_cw: RigidTransform, rig: PinholeStereoRig) -> np.ndarray:
    """``(u_L, v_L, u_R)`` with ``u_R = u_L - fx * b / z``."""
    Xc = _camera_point(X, pose_cw)
    uv = project_point_mono(Xc, rig)
    return np.array([uv[0], uv[1], uv[0] - rig.fx * rig.baseline / Xc[2]])


def projection_jacobian(Xc: np.ndarray, rig: PinholeStereoRig, stereo: bool) -> np.ndarray:
    """Derivative of the (mono or stereo) projection with respect to the camera-frame point."""
    x, y, z = Xc
    iz = 1.0 / z
    iz2 = iz * iz
    rows = [
        [rig.fx * iz, 0.0, -rig.fx * x * iz2],
        [0.0, rig.fy * iz, -rig.fy * y * iz2],
    ]
    if stereo:
        rows.append([rig.fx * iz, 0.0, -rig.fx * (x - rig.baseline) * iz2])
    return np.array(rows)


def project_points(Xc: np.ndarray, rig: PinholeStereoRig) -> np.ndarray:
    """Vectorized stereo projection of camera-frame points (n, 3) -> (n, 3)."""
    iz = 1.0 / Xc[:, 2]
    u = rig.fx * Xc[:, 0] * iz + rig.cx
    v = rig.fy * Xc[:, 1] * iz + rig.cy
    return np.stack([u, v, u - rig.fx * rig.baseline * iz], axis=1)


def projection_jacobians(Xc: np.ndarray, rig: PinholeStereoRig) -> np.ndarray:
    """Vectorized stereo projection Jacobians (n, 3, 3); drop the last row for mono."""
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    iz = 1.0 / z
    iz2 = iz * iz
    J = np.zeros((len(Xc), 3, 3))
    J[:, 0, 0] = rig.fx * iz
    J[:, 0, 2] = -rig.fx * x * iz2
    J[:, 1, 1] = rig.fy * iz
    J[:, 1, 2] = -rig.fy * y * iz2
    J[:, 2, 0] = rig.fx * iz
    J[:, 2, 2] = -rig.fx * (x - rig.baseline) * iz2
    return J


def triangulate(obs: Observation, pose_cw: RigidTransform, rig: PinholeStereoRig) -> Landmark:
    """World point from a rectified stereo observation (inverse of :func:`project_stereo`)."""
    if obs.kind != "stereo":
        raise InvalidInput("triangulation needs a stereo observation")
    uL, vL, uR = obs.pixel
    d = uL - uR
    if d <= MIN_DISPARITY:
        raise DegenerateDepth(f"disparity {d:.3g} px too small")
    z = rig.fx * rig.baseline / d
    Xc = np.array([(uL - rig.cx) * z / rig.fx, (vL - rig.cy) * z / rig.fy, z])
    return Landmark(pose_cw.inverse().apply(Xc))
