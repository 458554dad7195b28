"""Synthetic stereo-inertial sequences with exact ground truth.

Angular rate and specific force are analytic functions of time. The
ground-truth states are obtained by integrating the clean measurements with
the same midpoint rule used by :func:`stereo_nec.preintegration.preintegrate`,
so the inertial residual vanishes at ground truth up to rounding.
Measurements then get the injected bias and white noise added.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..camera import PinholeStereoRig
from ..errors import DegenerateScene, InvalidInput
from ..inertial import GRAVITY, GravityModel
from ..preintegration import ImuBias, ImuNoiseSpec, ImuSamples
from ..so3 import exp_matrix
from .scene import Sequence, VisualOptions, build_sequence, default_extrinsics, keyframe_state

TRAJECTORIES = ("stationary", "constant-velocity", "circular", "sinusoidal-rotation")


@dataclass(frozen=True)
class SyntheticSpec:
    trajectory: str = "sinusoidal-rotation"
    duration: float = 5.0
    imu_rate: float = 200.0
    keyframe_spacing: float = 0.5
    landmarks_per_keyframe: int = 60
    depth_range: tuple = (2.0, 8.0)
    max_features: int = 150
    bias: ImuBias = field(default_factory=ImuBias)
    noise: ImuNoiseSpec = field(default_factory=ImuNoiseSpec)
    imu_noise_scale: float = 0.0
    bearing_noise: float = 0.0
    pixel_noise: float = 0.0
    pose_noise_rot_deg: float = 0.0
    pose_noise_trans: float = 0.0
    # extra gyro offset whose sign alternates every keyframe interval
    gyro_corruption: float = 0.0
    rotation_amplitude: float = 0.3
    translation_amplitude: float = 0.4
    circle_radius: float = 1.0
    circle_rate: float = 0.3
    phase: float = 0.0
    gravity: float = GRAVITY
    seed: int = 0

    def __post_init__(self):
        if self.trajectory not in TRAJECTORIES:
            raise InvalidInput(f"unknown trajectory kind {self.trajectory!r}; expected one of {TRAJECTORIES}")
        if not self.imu_rate > 0 or not self.duration > 0 or not self.keyframe_spacing > 0:
            raise InvalidInput("rate, duration and keyframe spacing must be positive")


def _motion(spec: SyntheticSpec, t: np.ndarray):
    """Euler angles (roll, pitch, yaw), their rates, and world position/velocity/acceleration."""
    n = len(t)
    ang = np.zeros((n, 3))
    dang = np.zeros((n, 3))
    p = np.zeros((n, 3))
    v = np.zeros((n, 3))
    a = np.zeros((n, 3))
    kind = spec.trajectory
    ph = spec.phase
    if kind == "stationary":
        ang[:] = [0.05, -0.03, 0.3]
    elif kind == "constant-velocity":
        ang[:] = [0.02, 0.01, 0.2]
        vel = np.array([0.4, 0.1, 0.05])
        p = vel * t[:, None]
        v[:] = vel
    elif kind == "circular":
        r, w = spec.circle_radius, spec.circle_rate
        c, s = np.cos(w * t + ph), np.sin(w * t + ph)
        p = np.stack([r * c, r * s, np.zeros(n)], axis=1)
        v = np.stack([-r * w * s, r * w * c, np.zeros(n)], axis=1)
        a = np.stack([-r * w * w * c, -r * w * w * s, np.zeros(n)], axis=1)
        ang[:, 2] = w * t + ph + np.pi / 2
        dang[:, 2] = w
    else:
        A = spec.rotation_amplitude
        amps = np.array([A, 0.8 * A, 1.5 * A])
        freqs = 2 * np.pi * np.array([0.23, 0.31, 0.17])
        phases = np.array([0.3, 1.1, 2.0]) + ph
        ang = amps * np.sin(freqs * t[:, None] + phases)
        dang = amps * freqs * np.cos(freqs * t[:, None] + phases)
        B = spec.translation_amplitude
        pam = np.array([B, 0.8 * B, 0.4 * B])
        pf = 2 * np.pi * np.array([0.19, 0.27, 0.33])
        pph = np.array([0.7, 0.2, 1.4]) + ph
        arg = pf * t[:, None] + pph
        p = pam * np.sin(arg)
        v = pam * pf * np.cos(arg)
        a = -pam * pf * pf * np.sin(arg)
    return ang, dang, p, v, a


def _euler_matrix(roll, pitch, yaw) -> np.ndarray:
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1.0]])
    Ry = np.array([[cp, 0, sp], [0, 1.0, 0], [-sp, 0, cp]])
    Rx = np.array([[1.0, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx


def _body_rate(ang, dang) -> np.ndarray:
    r, p = ang[:, 0], ang[:, 1]
    dr, dp, dy = dang[:, 0], dang[:, 1], dang[:, 2]
    return np.stack(
        [
            dr - dy * np.sin(p),
            dp * np.cos(r) + dy * np.cos(p) * np.sin(r),
            -dp * np.sin(r) + dy * np.cos(p) * np.cos(r),
        ],
        axis=1,
    )


def integrate_states(t, gyro, accel, R0, p0, v0, g_w):
    """Midpoint-rule strapdown integration of clean body-frame measurements."""
    n = len(t)
    Rs = np.empty((n, 3, 3))
    ps = np.empty((n, 3))
    vs = np.empty((n, 3))
    R, p, v = np.asarray(R0, float), np.asarray(p0, float), np.asarray(v0, float)
    Rs[0], ps[0], vs[0] = R, p, v
    for i in range(n - 1):
        dt = t[i + 1] - t[i]
        R1 = R @ exp_matrix(0.5 * (gyro[i] + gyro[i + 1]) * dt)
        acc = 0.5 * (R @ accel[i] + R1 @ accel[i + 1]) + g_w
        p = p + v * dt + 0.5 * acc * dt * dt
        v = v + acc * dt
        R = R1
        Rs[i + 1], ps[i + 1], vs[i + 1] = R, p, v
    return Rs, ps, vs


def generate_trajectory(spec: SyntheticSpec):
    """IMU time grid, clean measurements and ground-truth states."""
    n = int(round(spec.duration * spec.imu_rate)) + 1
    t = np.arange(n) / spec.imu_rate
    ang, dang, p, v, a = _motion(spec, t)
    g_w = np.array([0.0, 0.0, -spec.gravity])
    R_an = np.array([_euler_matrix(*row) for row in ang])
    gyro = _body_rate(ang, dang)
    accel = np.einsum("nji,nj->ni", R_an, a - g_w)
    Rs, ps, vs = integrate_states(t, gyro, accel, R_an[0], p[0], v[0], g_w)
    return t, gyro, accel, Rs, ps, vs, g_w


def generate_synthetic(spec: SyntheticSpec) -> Sequence:
    """Generate a stereo-inertial sequence with keyframes every ``keyframe_spacing`` seconds."""
    ss = np.random.SeedSequence(spec.seed)
    rng_imu, rng_vis = (np.random.default_rng(s) for s in ss.spawn(2))
    t, gyro, accel, Rs, ps, vs, g_w = generate_trajectory(spec)
    dt = 1.0 / spec.imu_rate

    step = int(round(spec.keyframe_spacing * spec.imu_rate))
    kf_idx = np.arange(0, len(t), step)

    gm = gyro + spec.bias.gyro
    am = accel + spec.bias.accel
    if spec.imu_noise_scale > 0:
        gm = gm + rng_imu.normal(0.0, spec.imu_noise_scale * spec.noise.gyro_noise / np.sqrt(dt), gyro.shape)
        am = am + rng_imu.normal(0.0, spec.imu_noise_scale * spec.noise.accel_noise / np.sqrt(dt), accel.shape)
    if spec.gyro_corruption:
        axis = np.array([1.0, -1.0, 1.0]) / np.sqrt(3.0)
        interval = np.minimum(np.arange(len(t)) // step, len(kf_idx) - 1)
        sign = np.where(interval % 2 == 0, 1.0, -1.0)
        gm = gm + spec.gyro_corruption * sign[:, None] * axis
    imu = ImuSamples(t, gm, am)

    states = [keyframe_state(t[i], Rs[i], ps[i], vs[i]) for i in kf_idx]
    opts = VisualOptions(
        pixel_noise=spec.pixel_noise,
        bearing_noise=spec.bearing_noise,
        pose_noise_rot_deg=spec.pose_noise_rot_deg,
        pose_noise_trans=spec.pose_noise_trans,
        landmarks_per_keyframe=spec.landmarks_per_keyframe,
        depth_range=spec.depth_range,
        max_features=spec.max_features,
    )
    rig = PinholeStereoRig()
    seq = build_sequence(
        imu,
        t[kf_idx],
        states,
        [spec.bias] * len(kf_idx),
        rig,
        default_extrinsics(rig.baseline),
        spec.noise,
        GravityModel.from_vector(g_w),
        opts,
        rng_vis,
        name=f"synthetic-{spec.trajectory}",
    )
    if not seq.observations:
        raise DegenerateScene("no landmark is visible from any keyframe")
    seq.meta.update({"spec": spec, "gt_rotations": Rs, "gt_positions": ps, "gt_velocities": vs})
    return seq
