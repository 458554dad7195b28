"""Run the initialization on one window and print each stage's outcome.

Usage:
    python demos/window_walkthrough.py --pose-noise 0.5 --pixel-noise 0.5
"""

from __future__ import annotations

import argparse
import logging

import numpy as np

from stereo_nec import ImuBias, InitConfig, TrajectoryPair, ate_rmse, rre_rmse, run_initialization
from stereo_nec.dataio import TRAJECTORIES, SyntheticSpec, generate_synthetic

log = logging.getLogger("walkthrough")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--traj", choices=TRAJECTORIES, default="sinusoidal-rotation")
    ap.add_argument("--bias-gyro", type=float, nargs=3, default=(0.02, -0.01, 0.03))
    ap.add_argument("--bias-accel", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    ap.add_argument("--pose-noise", type=float, default=0.5, help="Step-0 rotation noise, degrees")
    ap.add_argument("--pixel-noise", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    spec = SyntheticSpec(
        trajectory=args.traj,
        duration=4.5,
        bias=ImuBias(args.bias_gyro, args.bias_accel),
        pose_noise_rot_deg=args.pose_noise,
        pixel_noise=args.pixel_noise,
        seed=args.seed,
    )
    w = generate_synthetic(spec).window(0, 10)
    cfg = InitConfig(pose_rotation_sigma=float(np.deg2rad(args.pose_noise) / np.sqrt(3.0)))
    res = run_initialization(w, cfg)

    gt = [s.pose_wb for s in w.truth.states]
    log.info("window: %s, mean rate %.1f deg/s", args.traj, w.mean_angular_rate_deg())
    log.info("step 1  b_g = %s", np.round(res.stages["step1_bias"]["b_g"], 5))
    st = res.stages["step2_map"]["state"]
    log.info("step 2  b_g = %s  b_a = %s", np.round(st.bias.gyro, 5), np.round(st.bias.accel, 4))
    log.info("        gravity direction %s (truth %s)", np.round(st.gravity.direction, 4),
             np.round(w.truth.gravity.direction, 4))
    for name, poses in (("step 0", res.stages["step0"]["poses"]), ("step 3", res.stages["step3_pose"]["poses"])):
        pair = TrajectoryPair(poses, gt)
        log.info("%s  ATE %.4f m  RRE %.4f deg", name, ate_rmse(pair), rre_rmse(pair))
    log.info("gate    e_bar = %.2e  (%s)", res.nec_report.e_bar, "pass" if res.success else "fail")
    if "step4_viba" in res.stages:
        pair = TrajectoryPair(res.poses, gt)
        log.info("step 4  ATE %.4f m  RRE %.4f deg  b_g = %s", ate_rmse(pair), rre_rmse(pair),
                 np.round(res.bias.gyro, 5))
    log.info("timings (ms): %s", {k: round(v, 1) for k, v in res.timings.items()})


if __name__ == "__main__":
    main()
