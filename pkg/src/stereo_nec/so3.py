"""Rotations and rigid transforms.

Rotations are stored as unit quaternions ``(w, x, y, z)`` with ``w >= 0``.
The solvers work on 3x3 matrices in their inner loops, so the module also
exposes matrix-level helpers (:func:`exp_matrix`, :func:`log_matrix`, the
right Jacobians) next to the immutable :class:`Rotation` and
:class:`RigidTransform` value types.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-8

__all__ = [
    "Rotation",
    "RigidTransform",
    "hat",
    "hat_batch",
    "exp_matrix_batch",
    "right_jacobian_batch",
    "so3_exp",
    "so3_log",
    "geodesic_angle",
    "exp_matrix",
    "log_matrix",
    "right_jacobian",
    "right_jacobian_inv",
    "quat_to_matrix",
    "matrix_to_quat",
]


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix such that ``hat(w) @ v == cross(w, v)``."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _canonical(q: np.ndarray) -> np.ndarray:
    q = q / np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Shepperd's method; returns the canonical (w >= 0) unit quaternion."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    diag = (tr, R[0, 0], R[1, 1], R[2, 2])
    i = int(np.argmax(diag))
    if i == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif i == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif i == 2:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return _canonical(q)


def _exp_quat(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta2 = float(w @ w)
    theta = np.sqrt(theta2)
    if theta < SMALL_ANGLE:
        # 4th-order Taylor of cos(t/2) and sin(t/2)/t
        c = 1.0 - theta2 / 8.0 + theta2 * theta2 / 384.0
        s = 0.5 - theta2 / 48.0 + theta2 * theta2 / 3840.0
    else:
        c = np.cos(0.5 * theta)
        s = np.sin(0.5 * theta) / theta
    return np.concatenate(([c], s * w))


def _log_quat(q) -> np.ndarray:
    w = q[0]
    v = q[1:]
    s = np.sqrt(float(v @ v))
    if s < SMALL_ANGLE:
        # 2*atan2(s, w)/s expanded for small s (w ~ 1)
        return (2.0 / w) * (1.0 - s * s / (3.0 * w * w)) * v
    return (2.0 * np.arctan2(s, w) / s) * v


def exp_matrix(w) -> np.ndarray:
    """Rodrigues formula, 3-vector -> rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta2 = float(w @ w)
    W = hat(w)
    if theta2 < SMALL_ANGLE * SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    theta = np.sqrt(theta2)
    return np.eye(3) + (np.sin(theta) / theta) * W + ((1.0 - np.cos(theta)) / theta2) * (W @ W)


def hat_batch(w) -> np.ndarray:
    """Skew matrices of the rows of ``w`` (n, 3) -> (n, 3, 3)."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def exp_matrix_batch(w) -> np.ndarray:
    """Row-wise :func:`exp_matrix` for ``w`` of shape (n, 3)."""
    w = np.asarray(w, dtype=float)
    W = hat_batch(w)
    W2 = W @ W
    t2 = np.einsum("ni,ni->n", w, w)
    small = t2 < SMALL_ANGLE * SMALL_ANGLE
    t = np.sqrt(np.where(small, 1.0, t2))
    a = np.where(small, 1.0, np.sin(t) / t)
    b = np.where(small, 0.5, (1.0 - np.cos(t)) / np.where(small, 1.0, t2))
    return np.eye(3) + a[:, None, None] * W + b[:, None, None] * W2


def right_jacobian_batch(w) -> np.ndarray:
    """Row-wise :func:`right_jacobian` for ``w`` of shape (n, 3)."""
    w = np.asarray(w, dtype=float)
    W = hat_batch(w)
    W2 = W @ W
    t2 = np.einsum("ni,ni->n", w, w)
    small = t2 < 1e-10
    t2s = np.where(small, 1.0, t2)
    t = np.sqrt(t2s)
    a = np.where(small, 0.5, (1.0 - np.cos(t)) / t2s)
    b = np.where(small, 1.0 / 6.0, (t - np.sin(t)) / (t2s * t))
    return np.eye(3) - a[:, None, None] * W + b[:, None, None] * W2


def log_matrix(R) -> np.ndarray:
    return _log_quat(matrix_to_quat(R))


def right_jacobian(w) -> np.ndarray:
    """Right Jacobian of SO(3): Exp(w + d) ~= Exp(w) Exp(Jr(w) d)."""
    w = np.asarray(w, dtype=float)
    theta2 = float(w @ w)
    W = hat(w)
    if theta2 < 1e-10:
        return np.eye(3) - 0.5 * W + (W @ W) / 6.0
    theta = np.sqrt(theta2)
    return (
        np.eye(3)
        - ((1.0 - np.cos(theta)) / theta2) * W
        + ((theta - np.sin(theta)) / (theta2 * theta)) * (W @ W)
    )


def right_jacobian_inv(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta2 = float(w @ w)
    W = hat(w)
    if theta2 < 1e-10:
        return np.eye(3) + 0.5 * W + (W @ W) / 12.0
    theta = np.sqrt(theta2)
    coef = 1.0 / theta2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * W + coef * (W @ W)


class Rotation:
    """Immutable 3D rotation backed by a canonical unit quaternion."""

    __slots__ = ("_q", "_R")

    def __init__(self, quat=(1.0, 0.0, 0.0, 0.0)):
        q = np.asarray(quat, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must be finite and non-zero")
        q = _canonical(q)
        q.setflags(write=False)
        self._q = q
        self._R = None

    @classmethod
    def identity(cls) -> "Rotation":
        return cls()

    @classmethod
    def from_matrix(cls, R) -> "Rotation":
        return cls(matrix_to_quat(R))

    @classmethod
    def from_rotvec(cls, w) -> "Rotation":
        return cls(_exp_quat(w))

    @property
    def quat(self) -> np.ndarray:
        return self._q

    @property
    def matrix(self) -> np.ndarray:
        if self._R is None:
            R = quat_to_matrix(self._q)
            R.setflags(write=False)
            self._R = R
        return self._R

    def as_rotvec(self) -> np.ndarray:
        return _log_quat(self._q)

    def inverse(self) -> "Rotation":
        w, x, y, z = self._q
        return Rotation((w, -x, -y, -z))

    def apply(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.matrix.T

    def __matmul__(self, other):
        if isinstance(other, Rotation):
            w1, x1, y1, z1 = self._q
            w2, x2, y2, z2 = other._q
            return Rotation(
                (
                    w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                    w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                    w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                    w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
                )
            )
        return self.apply(other)

    def __repr__(self):
        return "Rotation(quat=[{:.9g}, {:.9g}, {:.9g}, {:.9g}])".format(*self._q)


def so3_exp(w) -> Rotation:
    """Rotation by angle ``|w|`` about axis ``w / |w|``."""
    return Rotation.from_rotvec(w)


def so3_log(R) -> np.ndarray:
    """Rotation vector of ``R`` (a :class:`Rotation` or a 3x3 matrix), norm in [0, pi]."""
    if isinstance(R, Rotation):
        return _log_quat(R.quat)
    return log_matrix(R)


def geodesic_angle(R1, R2) -> float:
    """Angle in radians of the relative rotation ``R1^T R2``."""
    q1 = R1.quat if isinstance(R1, Rotation) else matrix_to_quat(R1)
    q2 = R2.quat if isinstance(R2, Rotation) else matrix_to_quat(R2)
    # |<q1, q2>| = cos(angle / 2); atan2 form keeps precision near 0 and pi
    d = abs(float(q1 @ q2))
    s = np.linalg.norm(np.outer(q1, q2) - np.outer(q2, q1)) / np.sqrt(2.0)
    return float(2.0 * np.arctan2(s, d))


class RigidTransform:
    """Rigid transform ``x -> R x + t``."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation: Rotation | None = None, translation=(0.0, 0.0, 0.0)):
        if rotation is None:
            rotation = Rotation()
        elif not isinstance(rotation, Rotation):
            rotation = Rotation.from_matrix(rotation)
        t = np.array(translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", t)

    def __setattr__(self, name, value):
        raise AttributeError("RigidTransform is immutable")

    def __reduce__(self):
        return (RigidTransform, (self.rotation, np.array(self.translation)))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "RigidTransform":
        T = np.asarray(T, dtype=float)
        return cls(Rotation.from_matrix(T[:3, :3]), T[:3, 3])

    @property
    def R(self) -> np.ndarray:
        return self.rotation.matrix

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "RigidTransform":
        Rinv = self.rotation.inverse()
        return RigidTransform(Rinv, -(Rinv.matrix @ self.translation))

    def apply(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.R.T + self.translation

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return RigidTransform(self.rotation @ other.rotation, self.R @ other.translation + self.translation)
        return self.apply(other)

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation!r}, translation={self.translation.tolist()!r})"
