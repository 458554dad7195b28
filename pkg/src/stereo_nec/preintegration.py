"""IMU preintegration between keyframes.

Measurements are integrated with the midpoint rule. The bias Jacobians are
the exact derivatives of that discrete scheme, so they agree with finite
differences of :func:`preintegrate` to rounding error. The covariance is the
9x9 block over ``(alpha, beta, gamma)`` errors, in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientData, InvalidInput, OutOfRange
from .so3 import Rotation, exp_matrix, exp_matrix_batch, hat_batch, log_matrix, right_jacobian_batch

__all__ = [
    "ImuSample",
    "ImuSamples",
    "ImuBias",
    "ImuNoiseSpec",
    "Preintegration",
    "preintegrate",
    "correct_gamma",
    "split_by_keyframes",
    "as_imu_samples",
]


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    angular_velocity: np.ndarray
    acceleration: np.ndarray
    timestamp_ns: int | None = None


@dataclass(frozen=True)
class ImuSamples:
    """Column-oriented IMU stream: ``t`` (n,), ``gyro`` (n, 3), ``accel`` (n, 3)."""

    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def __len__(self):
        return len(self.t)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return ImuSamples(self.t[idx], self.gyro[idx], self.accel[idx])
        return ImuSample(float(self.t[idx]), self.gyro[idx].copy(), self.accel[idx].copy())

    def to_list(self) -> list[ImuSample]:
        return [self[i] for i in range(len(self))]


def as_imu_samples(samples) -> ImuSamples:
    if isinstance(samples, ImuSamples):
        return samples
    samples = list(samples)
    if not samples:
        return ImuSamples(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
    t = np.array([s.timestamp for s in samples], dtype=float)
    g = np.array([s.angular_velocity for s in samples], dtype=float).reshape(-1, 3)
    a = np.array([s.acceleration for s in samples], dtype=float).reshape(-1, 3)
    return ImuSamples(t, g, a)


@dataclass(frozen=True)
class ImuBias:
    gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "gyro", np.array(self.gyro, dtype=float).reshape(3))
        object.__setattr__(self, "accel", np.array(self.accel, dtype=float).reshape(3))

    def check(self, max_gyro=1.0, max_accel=10.0):
        """Raise :class:`InvalidInput` unless the bias is finite and within sanity bounds."""
        if not (np.all(np.isfinite(self.gyro)) and np.all(np.isfinite(self.accel))):
            raise InvalidInput("bias must be finite")
        if np.linalg.norm(self.gyro) >= max_gyro or np.linalg.norm(self.accel) >= max_accel:
            raise InvalidInput("bias outside sanity bounds")
        return self

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.gyro, self.accel])


@dataclass(frozen=True)
class ImuNoiseSpec:
    """Continuous-time noise densities. Defaults are the EuRoC ADIS16448 values."""

    gyro_noise: float = 1.6968e-4  # rad/s/sqrt(Hz)
    accel_noise: float = 2.0e-3  # m/s^2/sqrt(Hz)
    gyro_walk: float = 1.9393e-5
    accel_walk: float = 3.0e-3

    def __post_init__(self):
        for name in ("gyro_noise", "accel_noise", "gyro_walk", "accel_walk"):
            if not getattr(self, name) > 0.0:
                raise InvalidInput(f"{name} must be strictly positive")


@dataclass(frozen=True, eq=False)
class Preintegration:
    dt: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: Rotation
    J_gamma_bg: np.ndarray
    J_alpha_bg: np.ndarray
    J_alpha_ba: np.ndarray
    J_beta_bg: np.ndarray
    J_beta_ba: np.ndarray
    cov: np.ndarray
    bias: ImuBias
    noise: ImuNoiseSpec
    samples: ImuSamples
    t_start: float
    t_end: float

    @property
    def gamma_matrix(self) -> np.ndarray:
        return self.gamma.matrix

    def corrected(self, bias: ImuBias):
        """First-order bias update of ``(alpha, beta, gamma)`` to ``bias``.

        Returns ``(alpha_hat, beta_hat, gamma_hat_matrix)``.
        """
        dbg = bias.gyro - self.bias.gyro
        dba = bias.accel - self.bias.accel
        a = self.alpha + self.J_alpha_bg @ dbg + self.J_alpha_ba @ dba
        b = self.beta + self.J_beta_bg @ dbg + self.J_beta_ba @ dba
        g = self.gamma.matrix @ exp_matrix(self.J_gamma_bg @ dbg)
        return a, b, g

    def reintegrate(self, bias: ImuBias) -> "Preintegration":
        return preintegrate(self.samples, bias, self.noise)


def preintegrate(samples, bias: ImuBias | None = None, noise: ImuNoiseSpec | None = None) -> Preintegration:
    """Integrate ``samples`` into alpha, beta, gamma with Jacobians and covariance.

    Args:
        samples: list of :class:`ImuSample` or an :class:`ImuSamples` block,
            timestamps strictly increasing.
        bias: linearization bias subtracted from the measurements.
        noise: white-noise densities used for the covariance.
    """
    s = as_imu_samples(samples)
    if bias is None:
        bias = ImuBias()
    if noise is None:
        noise = ImuNoiseSpec()
    n = len(s)
    if n < 2:
        raise InsufficientData("preintegration needs at least 2 samples")
    dts = np.diff(s.t)
    if np.any(~(dts > 0.0)):
        raise InvalidInput("IMU timestamps must be strictly increasing")

    gyro = s.gyro - bias.gyro
    acc = s.accel - bias.accel
    wmid = 0.5 * (gyro[:-1] + gyro[1:])

    R = np.eye(3)
    alpha = np.zeros(3)
    beta = np.zeros(3)
    JR = np.zeros((3, 3))
    Ja_bg = np.zeros((3, 3))
    Ja_ba = np.zeros((3, 3))
    Jb_bg = np.zeros((3, 3))
    Jb_ba = np.zeros((3, 3))
    cov = np.zeros((9, 9))
    A = np.eye(9)
    B = np.zeros((9, 9))
    I3 = np.eye(3)
    qg = noise.gyro_noise**2
    qa = noise.accel_noise**2

    phis = wmid * dts[:, None]
    dRs = exp_matrix_batch(phis)
    Jrs = right_jacobian_batch(phis)
    hats = hat_batch(acc)
    for i in range(n - 1):
        dt = dts[i]
        dR = dRs[i]
        Jr = Jrs[i]
        R1 = R @ dR
        Ra0 = R @ hats[i]
        R1a1 = R1 @ hats[i + 1]
        acc_w = 0.5 * (R @ acc[i] + R1 @ acc[i + 1])

        JR1 = dR.T @ JR - Jr * dt
        dacc_bg = -0.5 * (Ra0 @ JR + R1a1 @ JR1)
        dacc_ba = -0.5 * (R + R1)

        # error-state transition over (dalpha, dbeta, dtheta); noise (n_g, n_a0, n_a1)
        dacc_dth = -0.5 * (Ra0 + R1a1 @ dR.T)
        dacc_ng = 0.5 * R1a1 @ Jr * dt
        A[0:3, 3:6] = I3 * dt
        A[0:3, 6:9] = 0.5 * dt * dt * dacc_dth
        A[3:6, 6:9] = dt * dacc_dth
        A[6:9, 6:9] = dR.T
        B[0:3, 0:3] = 0.5 * dt * dt * dacc_ng
        B[0:3, 3:6] = 0.25 * dt * dt * R
        B[0:3, 6:9] = 0.25 * dt * dt * R1
        B[3:6, 0:3] = dt * dacc_ng
        B[3:6, 3:6] = 0.5 * dt * R
        B[3:6, 6:9] = 0.5 * dt * R1
        B[6:9, 0:3] = -Jr * dt
        Qd = np.empty(9)
        Qd[0:3] = qg / dt
        # every sample is shared by two intervals; doubling keeps the per-interval variance at qa*dt
        Qd[3:9] = 2.0 * qa / dt
        cov = A @ cov @ A.T + (B * Qd) @ B.T

        Ja_bg = Ja_bg + Jb_bg * dt + 0.5 * dt * dt * dacc_bg
        Ja_ba = Ja_ba + Jb_ba * dt + 0.5 * dt * dt * dacc_ba
        Jb_bg = Jb_bg + dt * dacc_bg
        Jb_ba = Jb_ba + dt * dacc_ba
        alpha = alpha + beta * dt + 0.5 * dt * dt * acc_w
        beta = beta + dt * acc_w
        JR = JR1
        R = R1

    cov = 0.5 * (cov + cov.T)
    return Preintegration(
        dt=float(s.t[-1] - s.t[0]),
        alpha=alpha,
        beta=beta,
        gamma=Rotation.from_matrix(R),
        J_gamma_bg=JR,
        J_alpha_bg=Ja_bg,
        J_alpha_ba=Ja_ba,
        J_beta_bg=Jb_bg,
        J_beta_ba=Jb_ba,
        cov=cov,
        bias=bias,
        noise=noise,
        samples=s,
        t_start=float(s.t[0]),
        t_end=float(s.t[-1]),
    )


def correct_gamma(pre: Preintegration, delta_bg) -> Rotation:
    """``gamma * Exp(J_gamma_bg @ delta_bg)``, the first-order bias-corrected rotation.

    ``delta_bg`` is the deviation from the bias the preintegration was
    linearized at (``pre.bias.gyro``).
    """
    dR = exp_matrix(pre.J_gamma_bg @ np.asarray(delta_bg, dtype=float))
    return Rotation.from_matrix(pre.gamma.matrix @ dR)


def _interp(s: ImuSamples, t: float):
    j = int(np.searchsorted(s.t, t, side="right"))
    j = min(max(j, 1), len(s.t) - 1)
    t0, t1 = s.t[j - 1], s.t[j]
    w = (t - t0) / (t1 - t0)
    return (1.0 - w) * s.gyro[j - 1] + w * s.gyro[j], (1.0 - w) * s.accel[j - 1] + w * s.accel[j]


def split_by_keyframes(samples, keyframe_timestamps: Sequence[float], tol: float = 1e-9) -> list[ImuSamples]:
    """Cut an IMU stream into one block per consecutive keyframe interval.

    Each block starts exactly at ``t_k`` and ends exactly at ``t_{k+1}``;
    keyframe instants that fall between samples get a linearly
    interpolated sample.
    """
    s = as_imu_samples(samples)
    kf = np.asarray(keyframe_timestamps, dtype=float)
    if len(kf) < 2:
        raise InsufficientData("need at least 2 keyframes")
    if np.any(np.diff(kf) <= 0.0):
        raise InvalidInput("keyframe timestamps must be strictly increasing")
    if len(s) < 2 or kf[0] < s.t[0] - tol or kf[-1] > s.t[-1] + tol:
        raise OutOfRange("keyframe timestamps outside the IMU sample range")

    out = []
    for ta, tb in zip(kf[:-1], kf[1:]):
        inner = (s.t > ta + tol) & (s.t < tb - tol)
        g0, a0 = _edge(s, ta, tol)
        g1, a1 = _edge(s, tb, tol)
        out.append(
            ImuSamples(
                np.concatenate(([ta], s.t[inner], [tb])),
                np.vstack([g0, s.gyro[inner], g1]),
                np.vstack([a0, s.accel[inner], a1]),
            )
        )
    return out


def _edge(s: ImuSamples, t: float, tol: float):
    j = int(np.argmin(np.abs(s.t - t)))
    if abs(s.t[j] - t) <= tol:
        return s.gyro[j].copy(), s.accel[j].copy()
    return _interp(s, t)


def relative_rotation_error(pre: Preintegration, R0, R1) -> np.ndarray:
    """``Log(gamma^T R0^T R1)`` for diagnostics."""
    return log_matrix(pre.gamma.matrix.T @ np.asarray(R0).T @ np.asarray(R1))
