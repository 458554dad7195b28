"""Command-line entry points: ``synth``, ``euroc`` and ``report``.

Reports are JSON-lines files: one ``header`` record, one ``segment`` record
per initialization window and a final ``aggregate`` record. A table with
ATE/RRE with and without VI-BA is printed to standard output.

Exit codes: 0 success, 1 I/O or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from .dataio import SyntheticSpec, VisualOptions, build_euroc_sequence, generate_synthetic, load_euroc
from .dataio.synthetic import TRAJECTORIES
from .errors import StereoNecError
from .eval import BUCKETS, TrajectoryPair, angular_velocity_bucket, ate_rmse, rre_rmse
from .pipeline import InitConfig, sweep_initializations
from .preintegration import ImuBias

log = logging.getLogger("stereo_nec")

SCHEMA = "stereo-nec-report/1"
METRICS = ("ate_wo_viba", "rre_wo_viba", "ate_w_viba", "rre_w_viba")
SEGMENT_KEYS = ("index", "start_keyframe", "t_start", "success", "e_bar", "bucket") + METRICS

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- argument parsing ------------------------------------------------------------


def _positive(kind):
    def conv(s):
        try:
            v = kind(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {s!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {s!r}")
        return v

    return conv


def _non_negative(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid float value: {s!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {s!r}")
    return v


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--window", type=int, default=10, help="keyframes per initialization window (default 10)")
    p.add_argument("--period", type=_positive(float), default=2.5, help="launch period in seconds (default 2.5)")
    p.add_argument("--spacing", type=_positive(float), default=0.5, help="keyframe spacing in seconds (default 0.5)")
    p.add_argument("--ebar-threshold", type=_positive(float), default=1e-4, help="gate threshold (default 1e-4)")
    p.add_argument("--no-viba", action="store_true", help="skip joint visual-inertial BA")
    p.add_argument("--pose-noise", type=_non_negative, default=0.0,
                   help="Step-0 pose rotation noise, degrees (RMS angle)")
    p.add_argument("--pose-noise-trans", type=_non_negative, default=0.0,
                   help="Step-0 pose translation noise, meters (RMS)")
    p.add_argument("--pixel-noise", type=_non_negative, default=None, help="pixel noise sigma")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=_positive(int), default=1, help="worker processes")
    p.add_argument("--out", default=None, help="report file (JSON lines)")
    p.add_argument("--timings", action="store_true", help="include wall times in the report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stereo-nec", description="Stereo visual-inertial initialization runs.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="sweep over a synthetic sequence")
    ps.add_argument("--traj", choices=TRAJECTORIES, default="sinusoidal-rotation")
    ps.add_argument("--duration", type=_positive(float), default=30.0)
    ps.add_argument("--imu-rate", type=_positive(float), default=200.0)
    ps.add_argument("--bias-gyro", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("X", "Y", "Z"))
    ps.add_argument("--bias-accel", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("X", "Y", "Z"))
    ps.add_argument("--imu-noise-scale", type=_non_negative, default=0.0,
                    help="IMU white noise as a multiple of the nominal density")
    ps.add_argument("--bearing-noise", type=_non_negative, default=0.0, help="bearing noise sigma, rad")
    ps.add_argument("--gyro-corruption", type=_non_negative, default=0.0,
                    help="alternating-sign gyro offset, rad/s")
    _add_run_flags(ps)

    pe = sub.add_parser("euroc", help="sweep over a EuRoC sequence with synthesized observations")
    pe.add_argument("dataset", help="sequence directory containing mav0/")
    pe.add_argument("--calib", default=None, help="calibration config file (key: value)")
    pe.add_argument("--max-duration", type=_positive(float), default=None, help="only use the first seconds")
    _add_run_flags(pe)

    pr = sub.add_parser("report", help="merge report files into one table")
    pr.add_argument("files", nargs="*")
    pr.add_argument("--out", default=None, help="write the merged report here")
    return parser


def _config(args) -> InitConfig:
    if args.window < 3:
        raise UsageError("--window must be at least 3")
    return InitConfig(
        window_size=args.window,
        keyframe_spacing=args.spacing,
        ebar_threshold=args.ebar_threshold,
        launch_period=args.period,
        enable_viba=not args.no_viba,
        pose_rotation_sigma=float(np.deg2rad(args.pose_noise) / np.sqrt(3.0)),
    )


# -- reports -------------------------------------------------------------------


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _segment_record(i, window, res, with_viba: bool, timings: bool) -> dict:
    truth = window.truth
    gt = [s.pose_wb for s in truth.states]
    rate = window.mean_angular_rate_deg()
    rec = {
        "type": "segment",
        "index": i,
        "start_keyframe": int(window.index),
        "t_start": float(window.timestamps[0]),
        "success": bool(res.success),
        "error": res.error,
        "e_bar": _num(res.nec_report.e_bar) if res.nec_report else None,
        "mean_rate_deg_s": rate,
        "bucket": angular_velocity_bucket(rate),
        "ate_wo_viba": None,
        "rre_wo_viba": None,
        "ate_w_viba": None,
        "rre_w_viba": None,
        "bias_gyro": None,
        "bias_accel": None,
        "bias_gyro_error": None,
        "gravity_error_deg": None,
    }
    step3 = res.stages.get("step3_pose")
    if step3 is not None:
        pair = TrajectoryPair(step3["poses"], gt)
        rec["ate_wo_viba"] = ate_rmse(pair)
        rec["rre_wo_viba"] = rre_rmse(pair)
    if with_viba and "step4_viba" in res.stages:
        pair = TrajectoryPair(res.poses, gt)
        rec["ate_w_viba"] = ate_rmse(pair)
        rec["rre_w_viba"] = rre_rmse(pair)
    if res.bias is not None:
        rec["bias_gyro"] = [float(x) for x in res.bias.gyro]
        rec["bias_accel"] = [float(x) for x in res.bias.accel]
        rec["bias_gyro_error"] = float(np.linalg.norm(res.bias.gyro - truth.bias.gyro))
    if res.gravity is not None:
        c = float(np.clip(res.gravity.direction @ truth.gravity.direction, -1.0, 1.0))
        s = float(np.linalg.norm(np.cross(res.gravity.direction, truth.gravity.direction)))
        rec["gravity_error_deg"] = float(np.rad2deg(np.arctan2(s, c)))
    if timings:
        rec["timings_ms"] = {k: float(v) for k, v in res.timings.items()}
    return rec


def _mean(rows, key):
    vals = [r[key] for r in rows if r.get(key) is not None]
    return (float(np.mean(vals)) if vals else None), len(vals)


def aggregate(segments) -> dict:
    """Means of the per-segment metrics, overall and per angular-rate bucket."""
    out = {"type": "aggregate", "segments": len(segments), "successes": sum(1 for r in segments if r["success"])}
    means, counts = {}, {}
    for k in METRICS + ("bias_gyro_error", "gravity_error_deg", "e_bar"):
        means[k], counts[k] = _mean(segments, k)
    out["mean"] = means
    out["count"] = counts
    buckets = {}
    for b in BUCKETS:
        rows = [r for r in segments if r.get("bucket") == b]
        if not rows:
            continue
        entry = {"segments": len(rows), "successes": sum(1 for r in rows if r["success"])}
        for k in METRICS:
            entry[k] = _mean(rows, k)[0]
        buckets[b] = entry
    out["buckets"] = buckets
    return out


def write_report(path, header, segments, agg):
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(s, sort_keys=True) for s in segments]
    lines.append(json.dumps(agg, sort_keys=True))
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def read_report(path):
    """Parse a report file; raises ``ValueError`` on schema mismatch."""
    header, segments = None, []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: not JSON ({exc.msg})") from None
            kind = rec.get("type") if isinstance(rec, dict) else None
            if kind == "header":
                header = rec
            elif kind == "segment":
                missing = [k for k in SEGMENT_KEYS if k not in rec]
                if missing:
                    raise ValueError(f"{path}:{lineno}: segment record lacks {', '.join(missing)}")
                segments.append(rec)
            elif kind != "aggregate":
                raise ValueError(f"{path}:{lineno}: unknown record type {kind!r}")
    if header is None or header.get("schema") != SCHEMA:
        raise ValueError(f"{path}: missing header or schema is not {SCHEMA}")
    return header, segments


def _fmt(x, digits=4):
    return "-" if x is None else f"{x:.{digits}f}"


def format_table(rows, with_viba: bool) -> str:
    """``rows`` are ``(label, aggregate)``; columns mirror ATE/RRE without and with VI-BA."""
    cols = ["ATE W/O [m]", "RRE W/O [deg]"] + (["ATE W/ [m]", "RRE W/ [deg]"] if with_viba else [])
    keys = ["ate_wo_viba", "rre_wo_viba"] + (["ate_w_viba", "rre_w_viba"] if with_viba else [])
    width = max([len(r[0]) for r in rows] + [8])
    head = f"{'sequence':<{width}}  {'ok/n':>7}  " + "  ".join(f"{c:>14}" for c in cols)
    lines = [head, "-" * len(head)]
    for label, agg in rows:
        ok = f"{agg['successes']}/{agg['segments']}"
        vals = "  ".join(f"{_fmt(agg['mean'][k]):>14}" for k in keys)
        lines.append(f"{label:<{width}}  {ok:>7}  {vals}")
    return "\n".join(lines)


def format_buckets(agg, with_viba: bool) -> str:
    keys = ["ate_wo_viba", "rre_wo_viba"] + (["ate_w_viba", "rre_w_viba"] if with_viba else [])
    head = f"{'rate bucket':<12}  {'ok/n':>7}  " + "  ".join(f"{k:>12}" for k in keys)
    lines = [head, "-" * len(head)]
    for b in BUCKETS:
        e = agg["buckets"].get(b)
        if e is None:
            continue
        vals = "  ".join(f"{_fmt(e[k]):>12}" for k in keys)
        lines.append(f"{b:<12}  {e['successes']:>3}/{e['segments']:<3}  {vals}")
    return "\n".join(lines)


# -- commands ------------------------------------------------------------------


def _run_sweep(seq, args, header):
    cfg = _config(args)
    out = sweep_initializations(seq, cfg, jobs=args.jobs, return_windows=True)
    with_viba = not args.no_viba
    segments = [_segment_record(i, w, r, with_viba, args.timings) for i, (w, r) in enumerate(out)]
    agg = aggregate(segments)
    log.info("%d of %d segments passed the gate", agg["successes"], agg["segments"])
    header.update(
        {
            "type": "header",
            "schema": SCHEMA,
            "viba": with_viba,
            "columns": ["ate_wo_viba", "rre_wo_viba"] + (["ate_w_viba", "rre_w_viba"] if with_viba else []),
            "config": {
                "window": args.window,
                "period": args.period,
                "spacing": args.spacing,
                "ebar_threshold": args.ebar_threshold,
                "pose_noise_deg": args.pose_noise,
                "pose_noise_trans": args.pose_noise_trans,
                "seed": args.seed,
            },
        }
    )
    if args.out:
        write_report(args.out, header, segments, agg)
    print(format_table([(header.get("name", "sequence"), agg)], with_viba))
    return header, segments, agg


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        trajectory=args.traj,
        duration=args.duration,
        imu_rate=args.imu_rate,
        keyframe_spacing=args.spacing,
        bias=ImuBias(args.bias_gyro, args.bias_accel),
        imu_noise_scale=args.imu_noise_scale,
        bearing_noise=args.bearing_noise,
        pixel_noise=args.pixel_noise or 0.0,
        pose_noise_rot_deg=args.pose_noise,
        pose_noise_trans=args.pose_noise_trans,
        gyro_corruption=args.gyro_corruption,
        seed=args.seed,
    )
    seq = generate_synthetic(spec)
    if len(seq) < args.window:
        raise UsageError(f"sequence has {len(seq)} keyframes, fewer than --window {args.window}")
    header = {
        "command": "synth",
        "name": f"synth-{args.traj}",
        "source": {"trajectory": args.traj, "duration": args.duration, "imu_rate": args.imu_rate,
                   "bias_gyro": list(args.bias_gyro), "bias_accel": list(args.bias_accel),
                   "imu_noise_scale": args.imu_noise_scale, "bearing_noise": args.bearing_noise,
                   "pixel_noise": args.pixel_noise or 0.0, "gyro_corruption": args.gyro_corruption},
    }
    _run_sweep(seq, args, header)
    return EXIT_OK


def cmd_euroc(args) -> int:
    data = load_euroc(args.dataset, args.calib)
    if args.max_duration is not None and data.imu:
        t0 = data.imu[0].timestamp_ns
        limit = t0 + int(round(args.max_duration * 1e9))
        data.imu = [s for s in data.imu if s.timestamp_ns <= limit]
        data.groundtruth = [r for r in data.groundtruth if r.timestamp_ns <= limit]
    opts = VisualOptions(
        pixel_noise=1.0 if args.pixel_noise is None else args.pixel_noise,
        pose_noise_rot_deg=args.pose_noise,
        pose_noise_trans=args.pose_noise_trans,
    )
    seq = build_euroc_sequence(data, spacing=args.spacing, options=opts, seed=args.seed)
    if len(seq) < args.window:
        raise UsageError(f"sequence has {len(seq)} keyframes, fewer than --window {args.window}")
    header = {"command": "euroc", "name": seq.name, "source": {"dataset": str(args.dataset), "calib": args.calib}}
    _, _, agg = _run_sweep(seq, args, header)
    print()
    print(format_buckets(agg, not args.no_viba))
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.files:
        raise UsageError("report needs at least one report file")
    rows, all_segments, with_viba = [], [], True
    for path in args.files:
        header, segs = read_report(path)
        with_viba = with_viba and bool(header.get("viba", True))
        rows.append((header.get("name", path), aggregate(segs)))
        all_segments.extend(segs)
    merged = aggregate(all_segments)
    rows.append(("average", merged))
    print(format_table(rows, with_viba))
    print()
    print(format_buckets(merged, with_viba))
    if args.out:
        header = {"type": "header", "schema": SCHEMA, "command": "report", "name": "merged", "viba": with_viba,
                  "sources": list(args.files)}
        segs = [dict(s, index=i) for i, s in enumerate(all_segments)]
        write_report(args.out, header, segs, merged)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "euroc": cmd_euroc, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"stereo-nec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, StereoNecError) as exc:
        print(f"stereo-nec: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
