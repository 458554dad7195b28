"""Five-step stereo visual-inertial initialization over a keyframe window.

Step 0 (keyframe poses) comes from outside: ground truth, perturbed ground
truth or a dataset's ground-truth file. The pipeline then runs

1. gyro bias from the stereo NEC,
2. inertial-only MAP for velocities, gravity direction and both biases,
3. rotation update from bias-corrected gyro integration, re-triangulation
   and translation-only BA,
4. the average-NEC-residual gate, then joint visual-inertial BA.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, StageError, StereoNecError
from .inertial import GRAVITY, GravityModel, KeyframeState, PriorSpec, solve_inertial_map
from .lm import LMConfig
from .nec import bias_covariance, estimate_gyro_bias_stereo
from .pose_refine import propagate_rotations, retriangulate, translation_only_ba
from .preintegration import ImuBias, ImuNoiseSpec, preintegrate, split_by_keyframes
from .so3 import RigidTransform
from .viba import GATE_THRESHOLD, NecCheckReport, compute_nec_check, joint_vi_ba, relative_translations

logger = logging.getLogger(__name__)

STAGES = ("preintegration", "step1_bias", "step2_map", "step3_pose", "gate", "step4_viba")


@dataclass(frozen=True)
class InitConfig:
    window_size: int = 10
    keyframe_spacing: float = 0.5
    ebar_threshold: float = GATE_THRESHOLD
    launch_period: float = 2.5
    noise: ImuNoiseSpec | None = None
    prior: PriorSpec | None = None
    lm_bias: LMConfig | None = None
    lm_map: LMConfig | None = None
    lm_pose: LMConfig | None = None
    lm_viba: LMConfig | None = None
    enable_viba: bool = True
    translation_mode: str = "relative"
    gravity_magnitude: float = GRAVITY
    # center the Step-2 gyro prior on the Step-1 estimate, with its covariance
    step1_prior: bool = True
    # expected per-axis orientation error of the Step-0 poses, rad
    pose_rotation_sigma: float = 0.0

    def __post_init__(self):
        if self.window_size < 3:
            raise InvalidInput("window size must be at least 3 keyframes")
        if not self.ebar_threshold > 0:
            raise InvalidInput("e_bar threshold must be positive")
        if not self.keyframe_spacing > 0 or not self.launch_period > 0:
            raise InvalidInput("keyframe spacing and launch period must be positive")
        if self.translation_mode not in ("relative", "literal"):
            raise InvalidInput("translation_mode must be 'relative' or 'literal'")


@dataclass
class InitResult:
    """Outcome of one initialization run.

    ``poses`` are body poses ``T_wb`` of the last completed pose stage.
    ``stages`` keeps per-stage intermediate states keyed by stage name.
    """

    poses: list = field(default_factory=list)
    velocities: list = field(default_factory=list)
    landmarks: dict = field(default_factory=dict)
    gravity: GravityModel | None = None
    bias: ImuBias | None = None
    nec_report: NecCheckReport | None = None
    success: bool = False
    timings: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    window_index: int = 0
    error: str | None = None


class _Timer:
    def __init__(self, timings: dict, name: str):
        self.timings, self.name = timings, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.timings[self.name] = 1e3 * (time.perf_counter() - self.t0)
        return False


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StereoNecError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc


def run_initialization(window, cfg: InitConfig | None = None) -> InitResult:
    """Run Steps 1 to 4 on ``window`` (a :class:`stereo_nec.dataio.Window`).

    Raises:
        StageError: a stage failed; ``stage`` names it and ``cause`` holds
            the original error.
    """
    cfg = cfg or InitConfig()
    res = InitResult(window_index=getattr(window, "index", 0))
    T = res.timings
    extr, rig = window.extrinsics, window.rig
    noise = cfg.noise or window.noise
    ts = np.asarray(window.timestamps, dtype=float)
    step0 = list(window.step0_poses)
    res.stages["step0"] = {"poses": step0}

    with _Timer(T, "preintegration"):
        blocks = _stage("preintegration", split_by_keyframes, window.imu, ts)
        preints = [_stage("preintegration", preintegrate, b, None, noise) for b in blocks]

    # Step 1
    with _Timer(T, "step1_bias"):
        b_g1, lm1 = _stage(
            "step1_bias", estimate_gyro_bias_stereo, window.stereo_pairs, preints, extr, np.zeros(3), cfg.lm_bias, True
        )
        prior = cfg.prior or PriorSpec()
        if cfg.step1_prior:
            cov = prior.cov.copy()
            cov[:3, :3] = bias_covariance(lm1)
            cov[:3, 3:] = cov[3:, :3] = 0.0
            prior = PriorSpec(ImuBias(b_g1, prior.mean.accel), cov)
    res.stages["step1_bias"] = {"b_g": b_g1.copy(), "prior": prior}

    # Step 2
    kf0 = [KeyframeState(t, T_wb) for t, T_wb in zip(ts, step0)]
    with _Timer(T, "step2_map"):
        state, info = _stage(
            "step2_map",
            solve_inertial_map,
            kf0,
            preints,
            b_g_init=b_g1,
            prior=prior,
            lm_config=cfg.lm_map,
            gravity_magnitude=cfg.gravity_magnitude,
            pose_rotation_sigma=cfg.pose_rotation_sigma,
            full_output=True,
        )
    preints = info["preints"]
    res.stages["step2_map"] = {"state": state}
    res.gravity, res.bias, res.velocities = state.gravity, state.bias, [v.copy() for v in state.velocities]
    res.poses = step0

    # Step 3: new rotations, camera centers kept from Step 0
    with _Timer(T, "step3_pose"):
        T_bc = extr.left
        R_wc = propagate_rotations(step0[0].rotation, preints, state.bias.gyro, extr)
        centers = [(T_wb @ T_bc).t for T_wb in step0]
        cams_wc = [RigidTransform(R, c) for R, c in zip(R_wc, centers)]
        cams_cw = [c.inverse() for c in cams_wc]
        landmarks = _stage("step3_pose", retriangulate, window.observations, cams_cw, rig)
        t_cw = _stage(
            "step3_pose",
            translation_only_ba,
            [c.rotation for c in cams_cw],
            [c.t for c in cams_cw],
            landmarks,
            window.observations,
            rig,
            None,
            cfg.lm_pose,
        )
        cams_cw = [RigidTransform(c.rotation, t) for c, t in zip(cams_cw, t_cw)]
        cams_wc = [c.inverse() for c in cams_cw]
        poses3 = [c @ T_bc.inverse() for c in cams_wc]
    res.stages["step3_pose"] = {"poses": poses3, "camera_poses": cams_wc, "landmarks": landmarks}
    res.poses, res.landmarks = poses3, landmarks

    # gate
    with _Timer(T, "gate"):
        trans = relative_translations(cams_wc, cfg.translation_mode)
        report = _stage(
            "gate", compute_nec_check, window.covisible_pairs, preints, state.bias.gyro, extr, trans, cfg.ebar_threshold
        )
    res.nec_report = report
    res.success = report.passed
    if not report.passed:
        logger.info("window %d: gate failed (e_bar = %.3g)", res.window_index, report.e_bar)
        return res

    # Step 4
    if cfg.enable_viba:
        kfs = [KeyframeState(t, P, v) for t, P, v in zip(ts, poses3, state.velocities)]
        with _Timer(T, "step4_viba"):
            out = _stage(
                "step4_viba",
                joint_vi_ba,
                kfs,
                landmarks,
                preints,
                window.observations,
                state.gravity,
                state.bias,
                extr,
                rig,
                prior=prior,
                lm_config=cfg.lm_viba,
            )
        res.stages["step4_viba"] = {"result": out}
        res.poses = [k.pose_wb for k in out.keyframes]
        res.velocities = [k.velocity.copy() for k in out.keyframes]
        res.landmarks, res.gravity, res.bias = out.landmarks, out.gravity, out.bias
    return res


def _run_segment(args):
    sequence, start, cfg = args
    window = sequence.window(start, cfg.window_size)
    try:
        return window, run_initialization(window, cfg)
    except StageError as exc:
        logger.warning("window %d failed: %s", start, exc)
        return window, InitResult(window_index=start, error=str(exc), stages={"failed_stage": exc.stage})


def sweep_initializations(sequence, cfg: InitConfig | None = None, launch_period: float | None = None,
                          jobs: int = 1, return_windows: bool = False):
    """Launch one initialization every ``launch_period`` seconds over ``sequence``.

    Failed segments appear as results with ``success = False`` and
    ``error`` set. Output order follows the window start regardless of
    ``jobs``.
    """
    cfg = cfg or InitConfig()
    period = cfg.launch_period if launch_period is None else launch_period
    if not period > 0:
        raise InvalidInput("launch period must be positive")
    starts = sequence.window_starts(cfg.window_size, period)
    tasks = [(sequence, s, cfg) for s in starts]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_run_segment, tasks))
    else:
        out = [_run_segment(t) for t in tasks]
    if return_windows:
        return out
    return [r for _, r in out]
