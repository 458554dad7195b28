"""Stereo visual-inertial initialization driven by the normal epipolar constraint.

The package estimates the gyroscope bias from stereo bearing correspondences,
refines velocities, gravity and biases with an inertial-only MAP problem,
updates keyframe rotations and translations, checks an NEC-residual gate and
finishes with joint visual-inertial bundle adjustment.
"""

from .errors import (
    BehindCamera,
    DegenerateDepth,
    DegenerateScene,
    GaugeError,
    InsufficientData,
    InvalidInput,
    NotConvergedWarning,
    OutOfRange,
    ParseError,
    StageError,
    StereoNecError,
)
from .so3 import RigidTransform, Rotation, geodesic_angle, so3_exp, so3_log
from .preintegration import ImuBias, ImuNoiseSpec, ImuSample, Preintegration, preintegrate, split_by_keyframes
from .lm import LMConfig, LMResult, levenberg_marquardt
from .nec import (
    BearingPair,
    BearingPairs,
    Extrinsics,
    StereoPairSet,
    build_M,
    estimate_gyro_bias_mono,
    estimate_gyro_bias_stereo,
    estimate_rotation_mnec,
    lambda_min_sym3,
)
from .inertial import GravityModel, InertialMapState, KeyframeState, PriorSpec, inertial_residual, solve_inertial_map
from .camera import Landmark, Observation, PinholeStereoRig, project_mono, project_stereo, triangulate
from .pose_refine import propagate_rotations, retriangulate, translation_only_ba
from .viba import NecCheckReport, VIBAResult, compute_nec_check, joint_vi_ba
from .pipeline import InitConfig, InitResult, run_initialization, sweep_initializations
from .eval import TrajectoryPair, angular_velocity_bucket, ate_rmse, rre_rmse

__version__ = "0.1.0"

__all__ = [
    "BehindCamera",
    "DegenerateDepth",
    "DegenerateScene",
    "GaugeError",
    "InsufficientData",
    "InvalidInput",
    "NotConvergedWarning",
    "OutOfRange",
    "ParseError",
    "StageError",
    "StereoNecError",
    "RigidTransform",
    "Rotation",
    "geodesic_angle",
    "so3_exp",
    "so3_log",
    "ImuBias",
    "ImuNoiseSpec",
    "ImuSample",
    "Preintegration",
    "preintegrate",
    "split_by_keyframes",
    "LMConfig",
    "LMResult",
    "levenberg_marquardt",
    "BearingPair",
    "BearingPairs",
    "Extrinsics",
    "StereoPairSet",
    "build_M",
    "estimate_gyro_bias_mono",
    "estimate_gyro_bias_stereo",
    "estimate_rotation_mnec",
    "lambda_min_sym3",
    "GravityModel",
    "InertialMapState",
    "KeyframeState",
    "PriorSpec",
    "inertial_residual",
    "solve_inertial_map",
    "Landmark",
    "Observation",
    "PinholeStereoRig",
    "project_mono",
    "project_stereo",
    "triangulate",
    "propagate_rotations",
    "retriangulate",
    "translation_only_ba",
    "NecCheckReport",
    "VIBAResult",
    "compute_nec_check",
    "joint_vi_ba",
    "InitConfig",
    "InitResult",
    "run_initialization",
    "sweep_initializations",
    "TrajectoryPair",
    "angular_velocity_bucket",
    "ate_rmse",
    "rre_rmse",
]
