"""EuRoC ASL CSV ingestion and a key-value calibration format.

Timestamps stay as integer nanoseconds until a seconds value is needed. The
conversion splits whole and fractional seconds before touching floating
point, so epoch-scale stamps lose nothing beyond the final rounding.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ..camera import PinholeStereoRig
from ..errors import InvalidInput, ParseError
from ..inertial import GravityModel, KeyframeState
from ..nec import Extrinsics
from ..preintegration import ImuBias, ImuNoiseSpec, ImuSample, ImuSamples
from ..so3 import RigidTransform, Rotation

log = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000
QUAT_NORM_TOL = 1e-3
IMU_REL_PATH = os.path.join("mav0", "imu0", "data.csv")
GT_REL_PATH = os.path.join("mav0", "state_groundtruth_estimate0", "data.csv")


def ns_to_seconds(ns: int) -> float:
    """Exact-as-possible conversion of integer nanoseconds to seconds."""
    ns = int(ns)
    whole, frac = divmod(ns, NS_PER_S)
    return whole + frac / NS_PER_S


@dataclass(frozen=True)
class GroundTruthRecord:
    timestamp_ns: int
    position: np.ndarray
    orientation: Rotation
    velocity: np.ndarray
    gyro_bias: np.ndarray
    accel_bias: np.ndarray

    @property
    def timestamp(self) -> float:
        return ns_to_seconds(self.timestamp_ns)

    @property
    def pose(self) -> RigidTransform:
        return RigidTransform(self.orientation, self.position)

    @property
    def bias(self) -> ImuBias:
        return ImuBias(self.gyro_bias, self.accel_bias)


@dataclass
class Calibration:
    """Rectified stereo intrinsics, body-to-camera extrinsics and IMU noise densities."""

    rig: PinholeStereoRig = field(default_factory=PinholeStereoRig)
    extrinsics: Extrinsics | None = None
    noise: ImuNoiseSpec = field(default_factory=ImuNoiseSpec)


@dataclass
class EurocSequence:
    imu: list
    groundtruth: list
    calibration: Calibration
    path: str = ""

    @property
    def imu_block(self) -> ImuSamples:
        return imu_block(self.imu)


def _rows(path):
    """Yield ``(line_number, fields)`` for the data rows of a '#'-headed CSV."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            yield lineno, [x.strip() for x in s.split(",")]


def _parse_numbers(fields, lineno, ncols, path):
    if len(fields) != ncols:
        raise ParseError(f"{path}:{lineno}: expected {ncols} fields, got {len(fields)}", line=lineno)
    try:
        ns = int(fields[0])
        vals = np.array([float(x.replace("−", "-")) for x in fields[1:]])
    except ValueError as exc:
        raise ParseError(f"{path}:{lineno}: {exc}", line=lineno) from None
    if not np.all(np.isfinite(vals)):
        raise ParseError(f"{path}:{lineno}: non-finite value", line=lineno)
    return ns, vals


def load_euroc_imu(path) -> list[ImuSample]:
    """Parse ``timestamp_ns, w_x, w_y, w_z, a_x, a_y, a_z`` rows.

    Raises:
        ParseError: a row has the wrong field count or a non-numeric value.
        InvalidInput: timestamps are not strictly increasing.
    """
    out = []
    prev = None
    for lineno, fields in _rows(path):
        ns, v = _parse_numbers(fields, lineno, 7, path)
        if prev is not None and ns <= prev:
            raise InvalidInput(f"{path}:{lineno}: IMU timestamps not strictly increasing")
        prev = ns
        out.append(ImuSample(ns_to_seconds(ns), v[0:3], v[3:6], timestamp_ns=ns))
    return out


def load_euroc_groundtruth(path) -> list[GroundTruthRecord]:
    """Parse ``timestamp_ns, p(3), q(w,x,y,z), v(3), b_w(3), b_a(3)`` rows.

    Quaternions within ``1e-3`` of unit norm are renormalized; others raise
    :class:`InvalidInput`.
    """
    out = []
    prev = None
    for lineno, fields in _rows(path):
        ns, v = _parse_numbers(fields, lineno, 17, path)
        if prev is not None and ns <= prev:
            raise InvalidInput(f"{path}:{lineno}: ground-truth timestamps not strictly increasing")
        prev = ns
        q = v[3:7]
        nq = np.linalg.norm(q)
        if abs(nq - 1.0) >= QUAT_NORM_TOL:
            raise InvalidInput(f"{path}:{lineno}: quaternion norm {nq:.6g} is not close to 1")
        out.append(
            GroundTruthRecord(
                timestamp_ns=ns,
                position=v[0:3].copy(),
                orientation=Rotation(q / nq),
                velocity=v[7:10].copy(),
                gyro_bias=v[10:13].copy(),
                accel_bias=v[13:16].copy(),
            )
        )
    return out


def write_euroc_imu(path, samples) -> None:
    """Write samples in the EuRoC IMU CSV layout; floats use ``repr`` for full precision."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
                 "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n")
        for s in samples:
            ns = s.timestamp_ns if s.timestamp_ns is not None else int(round(s.timestamp * NS_PER_S))
            vals = list(s.angular_velocity) + list(s.acceleration)
            fh.write(",".join([str(int(ns))] + [repr(float(x)) for x in vals]) + "\n")


def write_euroc_groundtruth(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#timestamp,p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m],q_RS_w [],q_RS_x [],q_RS_y [],q_RS_z [],"
                 "v_RS_R_x [m s^-1],v_RS_R_y [m s^-1],v_RS_R_z [m s^-1],"
                 "b_w_RS_S_x [rad s^-1],b_w_RS_S_y [rad s^-1],b_w_RS_S_z [rad s^-1],"
                 "b_a_RS_S_x [m s^-2],b_a_RS_S_y [m s^-2],b_a_RS_S_z [m s^-2]\n")
        for r in records:
            vals = np.concatenate([r.position, r.orientation.quat, r.velocity, r.gyro_bias, r.accel_bias])
            fh.write(",".join([str(int(r.timestamp_ns))] + [repr(float(x)) for x in vals]) + "\n")


def imu_block(samples) -> ImuSamples:
    """Column block with times relative to the first sample (integer-ns subtraction)."""
    if not samples:
        return ImuSamples(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
    t0 = samples[0].timestamp_ns
    if t0 is None:
        t = np.array([s.timestamp for s in samples])
    else:
        t = np.array([ns_to_seconds(s.timestamp_ns - t0) for s in samples])
    return ImuSamples(
        t,
        np.array([s.angular_velocity for s in samples], dtype=float),
        np.array([s.acceleration for s in samples], dtype=float),
    )


# calibration config -------------------------------------------------------

_SCALAR_KEYS = ("fx", "fy", "cx", "cy", "baseline", "width", "height",
                "gyro_noise", "accel_noise", "gyro_walk", "accel_walk")
_VECTOR_KEYS = {"T_b_cL_q": 4, "T_b_cL_t": 3, "T_b_cR_q": 4, "T_b_cR_t": 3}


def load_calibration(path) -> Calibration:
    """Read a ``key: value [value ...]`` calibration file.

    Recognised keys are ``fx fy cx cy baseline width height``, the IMU noise
    densities ``gyro_noise accel_noise gyro_walk accel_walk`` and the
    body-to-camera extrinsics ``T_b_cL_q`` (w x y z), ``T_b_cL_t`` and
    optionally ``T_b_cR_q``/``T_b_cR_t``. Without a right-camera entry the
    right camera is the left one shifted by ``baseline`` along its x axis.
    Missing keys fall back to the EuRoC defaults.
    """
    vals = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if ":" in s:
                key, rest = s.split(":", 1)
            elif "=" in s:
                key, rest = s.split("=", 1)
            else:
                raise ParseError(f"{path}:{lineno}: expected 'key: value'", line=lineno)
            key = key.strip()
            try:
                nums = [float(x) for x in rest.replace(",", " ").split()]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value for {key}", line=lineno) from None
            if key in _SCALAR_KEYS:
                if len(nums) != 1:
                    raise ParseError(f"{path}:{lineno}: {key} takes one value", line=lineno)
                vals[key] = nums[0]
            elif key in _VECTOR_KEYS:
                if len(nums) != _VECTOR_KEYS[key]:
                    raise ParseError(f"{path}:{lineno}: {key} takes {_VECTOR_KEYS[key]} values", line=lineno)
                vals[key] = np.array(nums)
            else:
                log.warning("%s:%d: ignoring unknown calibration key %r", path, lineno, key)

    d = PinholeStereoRig()
    rig = PinholeStereoRig(
        fx=vals.get("fx", d.fx),
        fy=vals.get("fy", d.fy),
        cx=vals.get("cx", d.cx),
        cy=vals.get("cy", d.cy),
        baseline=vals.get("baseline", d.baseline),
        width=int(vals.get("width", d.width)),
        height=int(vals.get("height", d.height)),
    )
    dn = ImuNoiseSpec()
    noise = ImuNoiseSpec(
        vals.get("gyro_noise", dn.gyro_noise),
        vals.get("accel_noise", dn.accel_noise),
        vals.get("gyro_walk", dn.gyro_walk),
        vals.get("accel_walk", dn.accel_walk),
    )
    if "T_b_cL_q" in vals:
        left = RigidTransform(_unit_quat(vals["T_b_cL_q"], path), vals.get("T_b_cL_t", np.zeros(3)))
    else:
        left = euroc_default_extrinsics(rig.baseline).left
    if "T_b_cR_q" in vals:
        right = RigidTransform(_unit_quat(vals["T_b_cR_q"], path), vals.get("T_b_cR_t", np.zeros(3)))
    else:
        right = left @ RigidTransform(Rotation(), [rig.baseline, 0.0, 0.0])
    return Calibration(rig, Extrinsics(left, right), noise)


def _unit_quat(q, path) -> Rotation:
    n = np.linalg.norm(q)
    if abs(n - 1.0) >= QUAT_NORM_TOL:
        raise InvalidInput(f"{path}: extrinsic quaternion norm {n:.6g} is not close to 1")
    return Rotation(q / n)


def write_calibration(path, calib: Calibration) -> None:
    r, e, n = calib.rig, calib.extrinsics, calib.noise
    lines = [f"{k}: {getattr(r, k)!r}" for k in ("fx", "fy", "cx", "cy", "baseline", "width", "height")]
    lines += [f"{k}: {getattr(n, k)!r}" for k in ("gyro_noise", "accel_noise", "gyro_walk", "accel_walk")]
    if e is not None:
        lines.append("T_b_cL_q: " + " ".join(repr(float(x)) for x in e.left.rotation.quat))
        lines.append("T_b_cL_t: " + " ".join(repr(float(x)) for x in e.left.t))
        if e.right is not None:
            lines.append("T_b_cR_q: " + " ".join(repr(float(x)) for x in e.right.rotation.quat))
            lines.append("T_b_cR_t: " + " ".join(repr(float(x)) for x in e.right.t))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def euroc_default_extrinsics(baseline: float = 0.110078) -> Extrinsics:
    """cam0 extrinsics of the EuRoC sensor rig with an ideal rectified right camera."""
    T = np.array(
        [
            [0.0148655429818, -0.999880929698, 0.00414029679422, -0.0216401454975],
            [0.999557249008, 0.0149672133247, 0.025715529948, -0.064676986768],
            [-0.0257744366974, 0.00375618835797, 0.999660727178, 0.00981073058949],
        ]
    )
    U, _, Vt = np.linalg.svd(T[:, :3])
    left = RigidTransform(Rotation.from_matrix(U @ Vt), T[:, 3])
    return Extrinsics(left, left @ RigidTransform(Rotation(), [baseline, 0.0, 0.0]))


def load_euroc(directory, calibration_path=None) -> EurocSequence:
    """Load ``mav0/imu0/data.csv`` and the ground-truth CSV under ``directory``.

    Raises:
        FileNotFoundError: a required file is missing; the message names its path.
    """
    imu_path = os.path.join(directory, IMU_REL_PATH)
    gt_path = os.path.join(directory, GT_REL_PATH)
    for p in (imu_path, gt_path) + ((calibration_path,) if calibration_path else ()):
        if not os.path.isfile(p):
            raise FileNotFoundError(f"missing file: {p}")
    if calibration_path:
        calib = load_calibration(calibration_path)
    else:
        rig = PinholeStereoRig()
        calib = Calibration(rig, euroc_default_extrinsics(rig.baseline), ImuNoiseSpec())
    imu = load_euroc_imu(imu_path)
    gt = load_euroc_groundtruth(gt_path)
    log.info("loaded %d IMU samples and %d ground-truth records from %s", len(imu), len(gt), directory)
    return EurocSequence(imu, gt, calib, str(directory))


def build_euroc_sequence(euroc: EurocSequence, spacing: float = 0.5, options=None, seed: int = 0,
                         gravity_magnitude: float = 9.81):
    """Keyframe sequence from ground-truth poses with synthesized stereo observations.

    Keyframes are the ground-truth records closest to a ``spacing`` grid that
    also lie inside the IMU time range. Times are relative to the first IMU
    sample.
    """
    from .scene import VisualOptions, build_sequence

    if options is None:
        options = VisualOptions(pixel_noise=1.0)
    if not euroc.imu or len(euroc.groundtruth) < 2:
        raise InvalidInput("EuRoC sequence has no IMU or ground-truth data")
    t0_ns = euroc.imu[0].timestamp_ns
    imu = imu_block(euroc.imu)
    gt_ns = np.array([r.timestamp_ns for r in euroc.groundtruth], dtype=np.int64)
    gt_t = np.array([ns_to_seconds(int(n) - t0_ns) for n in gt_ns])
    lo, hi = imu.t[0], imu.t[-1]
    inside = np.nonzero((gt_t >= lo) & (gt_t <= hi))[0]
    if len(inside) < 2:
        raise InvalidInput("ground truth does not overlap the IMU stream")
    grid = np.arange(gt_t[inside[0]], gt_t[inside[-1]] + 1e-9, spacing)
    idx = []
    for tg in grid:
        j = inside[np.argmin(np.abs(gt_t[inside] - tg))]
        if not idx or j != idx[-1]:
            idx.append(int(j))
    recs = [euroc.groundtruth[j] for j in idx]
    states = [KeyframeState(float(gt_t[j]), r.pose, r.velocity) for j, r in zip(idx, recs)]
    rng = np.random.default_rng(seed)
    calib = euroc.calibration
    seq = build_sequence(
        imu,
        gt_t[idx],
        states,
        [r.bias for r in recs],
        calib.rig,
        calib.extrinsics,
        calib.noise,
        GravityModel.from_vector([0.0, 0.0, -gravity_magnitude]),
        options,
        rng,
        name=os.path.basename(os.path.normpath(euroc.path)) or "euroc",
    )
    seq.meta["t0_ns"] = int(t0_ns)
    return seq
