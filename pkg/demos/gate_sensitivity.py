"""Average NEC residual as a function of the gyro bias error handed to the gate.

Usage:
    python demos/gate_sensitivity.py
"""

from __future__ import annotations

import argparse
import logging

import numpy as np

from stereo_nec import ImuBias, compute_nec_check, preintegrate, split_by_keyframes
from stereo_nec.dataio import SyntheticSpec, generate_synthetic
from stereo_nec.viba import relative_translations

log = logging.getLogger("gate_sensitivity")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--threshold", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    bg = np.array([0.02, -0.01, 0.03])
    w = generate_synthetic(SyntheticSpec(duration=4.5, bias=ImuBias(bg), seed=args.seed)).window(0, 10)
    preints = [preintegrate(b, w.truth.bias, w.noise) for b in split_by_keyframes(w.imu, w.timestamps)]
    trans = relative_translations([s.pose_wb @ w.extrinsics.left for s in w.truth.states])
    u = np.array([1.0, -1.0, 1.0]) / np.sqrt(3.0)
    log.info("%12s  %10s  %s", "bias error", "e_bar", "gate")
    for err in (0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 5e-2):
        rep = compute_nec_check(w.covisible_pairs, preints, bg + err * u, w.extrinsics, trans, args.threshold)
        log.info("%12.1e  %10.2e  %s", err, rep.e_bar, "pass" if rep.passed else "fail")


if __name__ == "__main__":
    main()
