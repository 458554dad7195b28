"""Data sources: EuRoC CSV ingestion and the synthetic sequence generator."""

from .euroc import (
    Calibration,
    EurocSequence,
    GroundTruthRecord,
    build_euroc_sequence,
    euroc_default_extrinsics,
    load_calibration,
    load_euroc,
    load_euroc_groundtruth,
    load_euroc_imu,
    ns_to_seconds,
    write_calibration,
    write_euroc_groundtruth,
    write_euroc_imu,
)
from .scene import Sequence, VisualOptions, Window, WindowTruth, build_sequence, default_extrinsics
from .synthetic import TRAJECTORIES, SyntheticSpec, generate_synthetic, generate_trajectory

__all__ = [
    "Calibration",
    "EurocSequence",
    "GroundTruthRecord",
    "Sequence",
    "SyntheticSpec",
    "TRAJECTORIES",
    "VisualOptions",
    "Window",
    "WindowTruth",
    "build_euroc_sequence",
    "build_sequence",
    "default_extrinsics",
    "euroc_default_extrinsics",
    "generate_synthetic",
    "generate_trajectory",
    "load_calibration",
    "load_euroc",
    "load_euroc_groundtruth",
    "load_euroc_imu",
    "ns_to_seconds",
    "write_calibration",
    "write_euroc_groundtruth",
    "write_euroc_imu",
]
