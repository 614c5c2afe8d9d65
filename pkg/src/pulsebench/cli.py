"""Command-line surface for the toolkit.

Commands: stmap, estimate, train, synth {video|map}, eval, study.

Exit codes: 0 ok, 2 missing input, 3 model/data mismatch, 64 usage error.
Every command accepts --seed; the PULSEBENCH_SEED environment variable is
used as a fallback. Config files may be TOML or JSON.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import classic, formats, nnet, stmap, synth
from .metrics import HrReport
from .signal_core import BandConfig

EXIT_OK = 0
EXIT_MISSING_INPUT = 2
EXIT_MISMATCH = 3
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    return int(os.environ.get("PULSEBENCH_SEED", "0"))


def load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def _parse_grid(text: str) -> tuple[int, int]:
    rows, cols = text.lower().split("x")
    return int(rows), int(cols)


def _atomic_csv(path: str, header: list[str], rows: list):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _load_sequence(args) -> stmap.FrameSequence:
    if not os.path.exists(args.frames):
        raise FileNotFoundError(args.frames)
    if os.path.isdir(args.frames):
        return formats.read_frames_dir(args.frames, args.fps)
    return formats.read_fseq(args.frames)


def _load_track(path: str) -> stmap.LandmarkTrack:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return formats.read_landmarks_csv(path)


# -- stmap --------------------------------------------------------------------

def cmd_stmap(args) -> int:
    seq = _load_sequence(args)
    track = stmap.smooth_landmarks(_load_track(args.landmarks),
                                   args.smooth_window)
    full = stmap.build_stmap(seq, track, _parse_grid(args.grid),
                             color=args.color)
    clips = stmap.sliding_clips(len(seq), args.window, args.stride)
    os.makedirs(args.out, exist_ok=True)
    index_rows = []
    for i, (start, end) in enumerate(clips):
        clip_map = stmap.SpatialTemporalMap(
            stmap.normalize_map(full.values[:, start:end, :],
                                full.mask[start:end]),
            seq.frame_rate_hz, full.mask[start:end])
        name = f"clip_{i:04d}.stmp"
        formats.write_stmp(clip_map, os.path.join(args.out, name))
        index_rows.append([i, start, end, name])
    _atomic_csv(os.path.join(args.out, "index.csv"),
                ["clip_index", "start_frame", "end_frame", "file"], index_rows)
    print(f"wrote {len(clips)} clips to {args.out}")
    return EXIT_OK


# -- estimate -----------------------------------------------------------------

def cmd_estimate(args) -> int:
    band = BandConfig(args.band_lo, args.band_hi)
    rows = []
    if args.method in classic.ESTIMATORS:
        seq = _load_sequence(args)
        track = stmap.smooth_landmarks(_load_track(args.landmarks),
                                       args.smooth_window)
        trace = classic.extract_rgb_trace(seq, track)
        estimator = classic.ESTIMATORS[args.method]
        clips = stmap.sliding_clips(len(seq), min(args.window, len(seq)),
                                    args.stride)
        sub_traces = [classic.RgbTrace(trace.r[s:e], trace.g[s:e],
                                       trace.b[s:e], trace.sample_rate_hz)
                      for s, e in clips]
        for i, ((s, _), sub) in enumerate(zip(clips, sub_traces)):
            est = estimator(sub, band, clip_index=i, window_start_frame=s)
            rows.append(["clip", i, s, f"{est.bpm:.4f}"])
    elif args.method == "cnn":
        if not args.checkpoint or not os.path.exists(args.checkpoint):
            raise FileNotFoundError(args.checkpoint or "<checkpoint>")
        if not os.path.isdir(args.maps):
            raise FileNotFoundError(args.maps)
        model = nnet.load_checkpoint(args.checkpoint)
        names = sorted(n for n in os.listdir(args.maps) if n.endswith(".stmp"))
        if not names:
            raise FileNotFoundError(f"{args.maps}: no .stmp files")
        maps = [formats.read_stmp(os.path.join(args.maps, n)) for n in names]
        fs = maps[0].frame_rate_hz
        clip_hrs, _ = nnet.predict_video(maps, model, fs)
        for i, hr in enumerate(clip_hrs):
            rows.append(["clip", i, "", f"{hr:.4f}"])
    else:
        raise UsageError(f"unknown method {args.method!r}")
    video_hr = float(np.mean([float(r[3]) for r in rows]))
    rows.append(["video", "", "", f"{video_hr:.4f}"])
    _atomic_csv(args.out, ["scope", "clip_index", "start_frame", "hr_bpm"], rows)
    print(f"video HR {video_hr:.2f} bpm ({len(rows) - 1} clips) -> {args.out}")
    return EXIT_OK


# -- synth --------------------------------------------------------------------

def _synth_cfg_from_args(args, seed: int) -> synth.SynthConfig:
    return synth.SynthConfig(
        hr_bpm=args.hr, duration_sec=args.duration, fps=args.fps,
        base_intensity=args.intensity, motion_amp_px=args.motion,
        illum_drift=(0.2, args.drift), noise_sigma=args.noise,
        seed=seed, gray=args.gray)


def cmd_synth(args) -> int:
    seed = _resolve_seed(args.seed)
    os.makedirs(args.out, exist_ok=True)
    if args.what == "video":
        cfg = _synth_cfg_from_args(args, seed)
        seq, track, bvp = synth.gen_video(cfg)
        formats.write_fseq(seq, os.path.join(args.out, "video.fseq"))
        formats.write_landmarks_csv(track, os.path.join(args.out, "landmarks.csv"))
        formats.write_ptrc(bvp, os.path.join(args.out, "truth.ptrc"))
        _atomic_csv(os.path.join(args.out, "truth.csv"),
                    ["video_id", "hr_bpm"], [["video", cfg.hr_bpm]])
        print(f"wrote synthetic video ({cfg.n_frames} frames) to {args.out}")
    else:  # map
        rng = np.random.default_rng(np.random.SeedSequence([seed, 42]))
        labels = []
        for i in range(args.count):
            hr = float(rng.uniform(47.0, 146.0))
            cfg = synth.SynthConfig(hr_bpm=hr, duration_sec=args.duration,
                                    fps=args.fps, noise_sigma=args.noise,
                                    seed=seed * 100003 + i, gray=args.gray)
            m, _ = synth.gen_synth_map(cfg, _parse_grid(args.grid))
            name = f"map_{i:05d}.stmp"
            formats.write_stmp(m, os.path.join(args.out, name))
            labels.append([name, f"{hr:.6f}", args.fps])
        _atomic_csv(os.path.join(args.out, "labels.csv"),
                    ["file", "hr_bpm", "fps"], labels)
        print(f"wrote {args.count} synthetic maps to {args.out}")
    return EXIT_OK


# -- train --------------------------------------------------------------------

def _provider_from_spec(spec: dict, seed: int):
    if "maps_dir" in spec:
        labels_path = spec.get("labels_csv",
                               os.path.join(spec["maps_dir"], "labels.csv"))
        if not os.path.exists(labels_path):
            raise FileNotFoundError(labels_path)
        data = []
        with open(labels_path, newline="") as fh:
            for row in csv.DictReader(fh):
                m = formats.read_stmp(os.path.join(spec["maps_dir"], row["file"]))
                data.append((m, float(row["hr_bpm"]), float(row["fps"])))
        return data
    return synth.gen_synth_dataset(
        count=int(spec.get("count", 32)),
        seed=int(spec.get("seed", seed)),
        grid=tuple(spec.get("grid", (5, 5))),
        duration_sec=float(spec.get("duration_sec", 10.0)),
        fps=float(spec.get("fps", 30.0)),
        noise_sigma=float(spec.get("noise_sigma", 0.0)),
        gray=bool(spec.get("gray", False)))


def cmd_train(args) -> int:
    config = load_config(args.config)
    seed = _resolve_seed(args.seed if args.seed is not None
                         else config.get("seed"))
    cfg = nnet.RegressorConfig(
        lr=float(config.get("lr", 0.001)),
        batch=int(config.get("batch", 8)),
        seed=seed,
        fs_ref=float(config.get("fs_ref", 30.0)),
        aug_p_mask=float(config.get("aug_p_mask", 0.5)),
        aug_len_range=tuple(config.get("aug_len_range", (10, 30))))
    providers = {name: _provider_from_spec(spec, seed)
                 for name, spec in config["datasets"].items()}
    plan = nnet.TrainStagePlan([
        nnet.StageSpec(dataset=s["dataset"], epochs=int(s["epochs"]),
                       freeze=tuple(s.get("freeze", ())))
        for s in config["stages"]])
    model, history = nnet.train(plan, providers, cfg)
    nnet.save_checkpoint(model, args.out,
                         {"stages": [s["dataset"] for s in config["stages"]]})
    _atomic_csv(args.out + ".history.csv",
                ["stage", "dataset", "epoch", "train_mae_bpm"],
                [[h["stage"], h["dataset"], h["epoch"],
                  f"{h['train_mae_bpm']:.6f}"] for h in history])
    print(f"trained {len(history)} epochs; final train MAE "
          f"{history[-1]['train_mae_bpm']:.3f} bpm -> {args.out}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def _read_hr_csv(path: str) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["video_id"]] = float(row["hr_bpm"])
    return out


def cmd_eval(args) -> int:
    pred = _read_hr_csv(args.pred)
    truth = _read_hr_csv(args.truth)
    ids = sorted(set(pred) & set(truth))
    if len(ids) < 2:
        raise nnet.ModelConfigError("need at least 2 joint video ids")
    report = HrReport()
    for vid in ids:
        report.add(vid, pred[vid], truth[vid])
    summary = report.summary()
    tmp = args.out + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(summary.as_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, args.out)
    if args.out_rows:
        _atomic_csv(args.out_rows, ["video_id", "hr_pred", "hr_true"],
                    report.rows)
    print(f"mae {summary.mae:.3f}  rmse {summary.rmse:.3f}  r {summary.r:.3f}")
    return EXIT_OK


# -- study --------------------------------------------------------------------

def _parse_op(text: str) -> synth.DegradeOp:
    if text == "identity":
        return synth.DegradeOp("identity")
    kind, _, value = text.partition(":")
    if kind == "resize":
        return synth.DegradeOp("resize", scale=float(value))
    if kind == "quantize":
        return synth.DegradeOp("quantize", quality=int(value))
    if kind == "frame_drop":
        return synth.DegradeOp("frame_drop", p=float(value))
    raise UsageError(f"unknown degradation op {text!r}")


def cmd_study(args) -> int:
    seed = _resolve_seed(args.seed)
    suite = synth.default_suite(n_videos=args.videos, seed=seed,
                                duration_sec=args.duration)
    ops = [_parse_op(t) for t in args.ops.split(",") if t]
    rows = synth.compression_study(suite, ops, method=args.method)
    _atomic_csv(args.out, ["op", "hr_rmse_bpm"],
                [[label, f"{rmse:.4f}"] for label, rmse in rows])
    for label, rmse in rows:
        print(f"{label:>16s}  RMSE {rmse:7.3f} bpm")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="pulsebench",
                     description="Remote heart-rate estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_video(p):
        p.add_argument("--frames", required=True,
                       help="frame directory or .fseq file")
        p.add_argument("--landmarks", required=True)
        p.add_argument("--fps", type=float, default=30.0)
        p.add_argument("--smooth-window", type=int, default=5)
        p.add_argument("--window", type=int, default=300)
        p.add_argument("--stride", type=int, default=150)

    p = sub.add_parser("stmap", help="build spatial-temporal map clips")
    add_common_video(p)
    p.add_argument("--grid", default="5x5")
    p.add_argument("--color", choices=["yuv", "raw"], default="yuv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stmap)

    p = sub.add_parser("estimate", help="estimate HR from a video or maps")
    p.add_argument("--method", required=True,
                   choices=["green", "chrom", "pos", "cnn"])
    p.add_argument("--frames")
    p.add_argument("--landmarks")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--smooth-window", type=int, default=5)
    p.add_argument("--window", type=int, default=300)
    p.add_argument("--stride", type=int, default=150)
    p.add_argument("--maps", help="directory of .stmp files (cnn)")
    p.add_argument("--checkpoint", help="model checkpoint (cnn)")
    p.add_argument("--band-lo", type=float, default=42.0)
    p.add_argument("--band-hi", type=float, default=240.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("synth", help="generate synthetic data")
    p.add_argument("what", choices=["video", "map"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--hr", type=float, default=72.0)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--motion", type=float, default=0.0)
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--intensity", type=float, default=150.0)
    p.add_argument("--grid", default="5x5")
    p.add_argument("--gray", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the HR regressor")
    p.add_argument("--config", required=True, help="TOML or JSON config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="six-metric evaluation of predictions")
    p.add_argument("--pred", required=True, help="CSV with video_id,hr_bpm")
    p.add_argument("--truth", required=True, help="CSV with video_id,hr_bpm")
    p.add_argument("--out", required=True, help="summary JSON path")
    p.add_argument("--out-rows", help="optional joined rows CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("study", help="compression/degradation impact study")
    p.add_argument("--ops", default="resize:0.6667,quantize:5,quantize:90")
    p.add_argument("--method", default="chrom",
                   choices=sorted(classic.ESTIMATORS))
    p.add_argument("--videos", type=int, default=6)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_study)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (nnet.ModelConfigError, formats.FormatError) as exc:
        print(f"model/data mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
