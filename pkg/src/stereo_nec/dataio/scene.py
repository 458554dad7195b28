"""Sequences of keyframes with stereo observations, and windows cut from them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..camera import Landmark, Observation, PinholeStereoRig
from ..inertial import GravityModel, KeyframeState
from ..nec import BearingPairs, Extrinsics, StereoPairSet
from ..preintegration import ImuBias, ImuNoiseSpec, ImuSamples
from ..so3 import RigidTransform, Rotation, exp_matrix

MIN_DEPTH = 0.1


@dataclass(frozen=True)
class VisualOptions:
    """How observations are synthesized from ground-truth geometry."""

    pixel_noise: float = 0.0
    bearing_noise: float = 0.0
    pose_noise_rot_deg: float = 0.0
    pose_noise_trans: float = 0.0
    landmarks_per_keyframe: int = 60
    depth_range: tuple = (2.0, 8.0)
    max_features: int = 150


@dataclass
class WindowTruth:
    states: list
    bias: ImuBias
    gravity: GravityModel


@dataclass
class Window:
    """Everything one initialization run consumes.

    ``observations`` use window-local keyframe ids ``0..N-1``;
    ``step0_poses`` are body poses ``T_wb`` from the external pose source.
    """

    timestamps: np.ndarray
    step0_poses: list
    observations: list
    stereo_pairs: list
    covisible_pairs: list
    imu: ImuSamples
    rig: PinholeStereoRig
    extrinsics: Extrinsics
    noise: ImuNoiseSpec
    truth: WindowTruth | None = None
    index: int = 0

    def __len__(self):
        return len(self.timestamps)

    def mean_angular_rate_deg(self) -> float:
        """Mean gyro magnitude over the window, deg/s."""
        m = (self.imu.t >= self.timestamps[0]) & (self.imu.t <= self.timestamps[-1])
        return float(np.rad2deg(np.mean(np.linalg.norm(self.imu.gyro[m], axis=1))))


@dataclass
class Sequence:
    """Keyframe-level data over a whole recording."""

    imu: ImuSamples
    timestamps: np.ndarray
    gt_states: list
    gt_bias: list
    step0_poses: list
    landmarks: dict
    observations: list
    stereo_pairs: list
    covisible_pairs: list
    rig: PinholeStereoRig
    extrinsics: Extrinsics
    noise: ImuNoiseSpec
    gravity: GravityModel
    name: str = "sequence"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.timestamps)

    def window(self, start: int, n: int) -> Window:
        """Window of keyframes ``start .. start+n-1`` with local ids."""
        if start < 0 or start + n > len(self.timestamps):
            raise IndexError(f"window [{start}, {start + n}) outside {len(self.timestamps)} keyframes")
        ts = self.timestamps[start : start + n]
        obs = [
            Observation(o.landmark_id, o.keyframe_id - start, o.kind, o.pixel, o.level, o.cov)
            for o in self.observations
            if start <= o.keyframe_id < start + n
        ]
        m = (self.imu.t >= ts[0] - 1e-9) & (self.imu.t <= ts[-1] + 1e-9)
        idx = np.nonzero(m)[0]
        lo, hi = max(idx[0] - 1, 0), min(idx[-1] + 2, len(self.imu.t))
        bias = self.gt_bias[start]
        truth = WindowTruth(list(self.gt_states[start : start + n]), bias, self.gravity)
        return Window(
            timestamps=ts.copy(),
            step0_poses=list(self.step0_poses[start : start + n]),
            observations=obs,
            stereo_pairs=[StereoPairSet(s.left, s.right, s.k - start) for s in self.stereo_pairs[start : start + n - 1]],
            covisible_pairs=list(self.covisible_pairs[start : start + n - 1]),
            imu=self.imu[lo:hi],
            rig=self.rig,
            extrinsics=self.extrinsics,
            noise=self.noise,
            truth=truth,
            index=start,
        )

    def window_starts(self, n: int, launch_period: float) -> list[int]:
        """Keyframe indices at which windows of ``n`` keyframes are launched every ``launch_period`` s."""
        out = []
        t0 = self.timestamps[0]
        t_last = self.timestamps[-1]
        m = 0
        while True:
            t_launch = t0 + m * launch_period
            if t_launch > t_last + 1e-9:
                break
            i = int(np.searchsorted(self.timestamps, t_launch - 1e-9))
            if i + n <= len(self.timestamps) and (not out or i != out[-1]):
                out.append(i)
            m += 1
        return out


def default_extrinsics(baseline: float = 0.110078) -> Extrinsics:
    """Forward-looking stereo pair: camera z along body x, camera x along -body y."""
    R_nominal = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    R_bc = R_nominal @ exp_matrix([0.01, -0.015, 0.02])
    left = RigidTransform(Rotation.from_matrix(R_bc), [0.05, 0.02, -0.01])
    right = left @ RigidTransform(Rotation(), [baseline, 0.0, 0.0])
    return Extrinsics(left, right)


def _perturb_pose(T: RigidTransform, rng, rot_deg: float, trans: float) -> RigidTransform:
    if rot_deg <= 0 and trans <= 0:
        return T
    dth = rng.normal(0.0, np.deg2rad(rot_deg) / np.sqrt(3.0), 3) if rot_deg > 0 else np.zeros(3)
    dp = rng.normal(0.0, trans / np.sqrt(3.0), 3) if trans > 0 else np.zeros(3)
    return RigidTransform(Rotation.from_matrix(T.R @ exp_matrix(dth)), T.t + dp)


def _tangent_noise(F: np.ndarray, sigma: float, rng) -> np.ndarray:
    if sigma <= 0 or len(F) == 0:
        return F
    d = rng.normal(0.0, sigma, F.shape)
    d -= np.einsum("ij,ij->i", d, F)[:, None] * F
    out = np.empty_like(F)
    for i in range(len(F)):
        out[i] = exp_matrix(d[i]) @ F[i]
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def seed_landmarks(poses_wc, rig: PinholeStereoRig, per_keyframe: int, depth_range, rng) -> np.ndarray:
    """World points spread through the left-camera frustum of each pose."""
    pts = []
    for T in poses_wc:
        u = rng.uniform(0.05 * rig.width, 0.95 * rig.width, per_keyframe)
        v = rng.uniform(0.05 * rig.height, 0.95 * rig.height, per_keyframe)
        z = rng.uniform(depth_range[0], depth_range[1], per_keyframe)
        Xc = np.stack([(u - rig.cx) / rig.fx * z, (v - rig.cy) / rig.fy * z, z], axis=1)
        pts.append(T.apply(Xc))
    return np.vstack(pts) if pts else np.zeros((0, 3))


def build_sequence(
    imu: ImuSamples,
    timestamps,
    gt_states,
    gt_bias,
    rig: PinholeStereoRig,
    extr: Extrinsics,
    noise: ImuNoiseSpec,
    gravity: GravityModel,
    options: VisualOptions,
    rng,
    name: str = "sequence",
    landmarks: np.ndarray | None = None,
) -> Sequence:
    """Synthesize landmarks, stereo observations and temporal bearing pairs for keyframes.

    ``gt_states`` are :class:`KeyframeState` body poses at ``timestamps``.
    """
    T_bl = extr.left
    poses_wc = [s.pose_wb @ T_bl for s in gt_states]
    if landmarks is None:
        landmarks = seed_landmarks(poses_wc, rig, options.landmarks_per_keyframe, options.depth_range, rng)
    L = len(landmarks)

    # per keyframe: landmark -> (uL, vL, uR or nan)
    proj = []
    for T in poses_wc:
        Tcw = T.inverse()
        Xc = landmarks @ Tcw.R.T + Tcw.t
        z = Xc[:, 2]
        ok = z > MIN_DEPTH
        zs = np.where(ok, z, 1.0)
        u = rig.fx * Xc[:, 0] / zs + rig.cx
        v = rig.fy * Xc[:, 1] / zs + rig.cy
        uR = u - rig.fx * rig.baseline / zs
        vis = ok & rig.in_image(np.stack([u, v], axis=1))
        stereo = vis & (uR >= 0) & (uR < rig.width) & (u - uR > 0.25)
        proj.append((np.stack([u, v, uR], axis=1), vis, stereo))

    # cap features per keyframe, preferring landmarks already tracked
    if options.max_features:
        prev = np.zeros(L, dtype=bool)
        for k, (px, vis, stereo) in enumerate(proj):
            idx = np.nonzero(vis)[0]
            if len(idx) > options.max_features:
                order = np.lexsort((rng.random(len(idx)), ~prev[idx]))
                keep = idx[order[: options.max_features]]
                mask = np.zeros(L, dtype=bool)
                mask[keep] = True
                vis = vis & mask
                stereo = stereo & mask
                proj[k] = (px, vis, stereo)
            prev = vis

    used = np.zeros(L, dtype=bool)
    for _, vis, _ in proj:
        used |= vis
    ids = np.nonzero(used)[0]

    observations = []
    noisy = []
    for k, (px, vis, stereo) in enumerate(proj):
        pxn = px.copy()
        if options.pixel_noise > 0:
            pxn += rng.normal(0.0, options.pixel_noise, px.shape)
        noisy.append(pxn)
        for i in np.nonzero(vis)[0]:
            if stereo[i]:
                observations.append(Observation(int(i), k, "stereo", pxn[i]))
            else:
                observations.append(Observation(int(i), k, "mono", pxn[i, :2]))

    stereo_pairs = []
    covisible = []
    for k in range(len(proj) - 1):
        pxa, visa, sta = noisy[k], proj[k][1], proj[k][2]
        pxb, visb, stb = noisy[k + 1], proj[k + 1][1], proj[k + 1][2]
        il = np.nonzero(visa & visb)[0]
        ir = np.nonzero(sta & stb)[0]
        fl = _tangent_noise(rig.bearing(pxa[il, :2]), options.bearing_noise, rng)
        fpl = _tangent_noise(rig.bearing(pxb[il, :2]), options.bearing_noise, rng)
        fr = _tangent_noise(rig.bearing(pxa[ir][:, [2, 1]]), options.bearing_noise, rng)
        fpr = _tangent_noise(rig.bearing(pxb[ir][:, [2, 1]]), options.bearing_noise, rng)
        left = BearingPairs(fl, fpl, il)
        stereo_pairs.append(StereoPairSet(left, BearingPairs(fr, fpr, ir), k))
        covisible.append(left.subset(np.isin(il, ir)))

    step0 = [_perturb_pose(s.pose_wb, rng, options.pose_noise_rot_deg, options.pose_noise_trans) for s in gt_states]
    return Sequence(
        imu=imu,
        timestamps=np.asarray(timestamps, dtype=float),
        gt_states=list(gt_states),
        gt_bias=list(gt_bias),
        step0_poses=step0,
        landmarks={int(i): Landmark(landmarks[i]) for i in ids},
        observations=observations,
        stereo_pairs=stereo_pairs,
        covisible_pairs=covisible,
        rig=rig,
        extrinsics=extr,
        noise=noise,
        gravity=gravity,
        name=name,
    )


def keyframe_state(t, R, p, v) -> KeyframeState:
    return KeyframeState(float(t), RigidTransform(Rotation.from_matrix(R), p), v)
