"""Command-line interface: synth | train | render | eval | gradcheck.

Exit codes: 0 success, 1 validation error (bad arguments, malformed files,
inconsistent shapes), 2 numerical failure (non-finite losses, gradient
check failures).

Heavy imports happen inside the command handlers so `--threads` can cap the
BLAS pools through environment variables before NumPy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def _set_threads(n: int | None):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def _parse_overrides(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        key, _, val = pair.partition("=")
        out[key.strip()] = _parse_value(val.strip())
    return out


def _parse_timestamps(text, default):
    if not text:
        return list(default)
    return [int(v) for v in text.replace(",", " ").split()]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    from .config import write_manifest, resolve_config
    from .data import synthesize_dataset, write_dataset
    from .scene import PRESETS, build_preset

    if args.preset not in PRESETS:
        print(f"error: unknown preset {args.preset!r}; available: "
              f"{', '.join(sorted(PRESETS))}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: {out} exists and is not empty (pass --force)", file=sys.stderr)
        return EXIT_VALIDATION
    scene = build_preset(args.preset)
    ds = synthesize_dataset(scene, seed=args.seed, preset_name=args.preset)
    write_dataset(ds, out, force=True)
    write_manifest(out / "manifest.json", resolve_config(args.profile), args.seed,
                   command="synth", extras={"preset": args.preset, "out": str(out)})
    print(f"wrote {ds.n_frames} frames ({ds.shape[0]}x{ds.shape[1]}) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import resolve_config, write_manifest, update_manifest
    from .data import read_dataset
    from .training import Trainer

    file_values = None
    if args.config:
        with open(args.config) as f:
            file_values = json.load(f)
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = resolve_config(args.profile, file_values, overrides)
    dataset = read_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    write_manifest(manifest_path, config, config.seed, command="train",
                   extras={"dataset": str(args.dataset), "out": str(out)})
    trainer = Trainer(config, dataset)
    t0 = time.time()
    info = trainer.run(out, resume=args.resume, progress=args.progress)
    info["timings"]["total_seconds"] = round(time.time() - t0, 3)
    update_manifest(manifest_path, info["timings"])
    print(f"final checkpoint: {info['checkpoint']}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .config import resolve_config, write_manifest
    from .data import read_dataset, write_depth_raw
    from .fields import load_checkpoint
    from .inference import infer_frame, infer_frame_base_rays
    from .pngio import write_png
    import numpy as np

    model, meta = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    h, w = dataset.shape
    timestamps = _parse_timestamps(args.timestamps,
                                   dataset.meta.get("eval_timestamps", []))
    n_samples = int(meta.get("train_state", {}).get("config", {})
                    .get("n_samples", 32))
    out = Path(args.out)
    for sub in ("rgb", "mask", "p_dy", "kappa"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for t in timestamps:
        if not 0 <= t < dataset.n_frames:
            print(f"error: timestamp {t} outside trained range "
                  f"[0, {dataset.n_frames})", file=sys.stderr)
            return EXIT_VALIDATION
        if args.pose_source == "train":
            res = infer_frame_base_rays(model, dataset.poses_corrupt[t], t, h, w,
                                        dataset.near, dataset.far, n_samples)
        elif args.pose_source == "eval":
            res = infer_frame(model, dataset.poses_true[t], t, h, w,
                              dataset.near, dataset.far, n_samples)
        else:  # file
            poses = _load_pose_file(args.pose_file, dataset.meta)
            res = infer_frame(model, poses[t], t, h, w,
                              dataset.near, dataset.far, n_samples)
        write_png(out / "rgb" / f"{t:04d}.png",
                  np.clip(np.round(res["rgb"] * 255), 0, 255).astype(np.uint8))
        write_png(out / "mask" / f"{t:04d}.png",
                  (res["mask"] * 255).astype(np.uint8))
        write_depth_raw(out / "p_dy" / f"{t:04d}.raw", res["p_dy"])
        write_depth_raw(out / "kappa" / f"{t:04d}.raw", res["kappa"])
    with open(out / "render_meta.json", "w") as f:
        json.dump({"timestamps": timestamps, "pose_source": args.pose_source,
                   "checkpoint": str(args.checkpoint)}, f, indent=2)
    write_manifest(out / "manifest.json", resolve_config(args.profile),
                   args.seed or 0, command="render",
                   extras={"checkpoint": str(args.checkpoint),
                           "dataset": str(args.dataset)})
    print(f"rendered {len(timestamps)} frames to {out}")
    return EXIT_OK


def _load_pose_file(path, meta):
    import numpy as np
    from .cameras import CameraPose

    if not path:
        raise ValueError("--pose-file is required with --pose-source file")
    poses = []
    with open(path) as f:
        for t, line in enumerate(f):
            vals = [float(v) for v in line.split()]
            if len(vals) != 12:
                raise ValueError(f"{path}:{t + 1}: expected 12 values per line")
            poses.append(CameraPose.from_matrix34(
                np.array(vals).reshape(3, 4), meta["fx"], meta["fy"],
                meta["cx"], meta["cy"], t_index=t))
    return poses


def cmd_eval(args) -> int:
    import numpy as np
    from .data import read_dataset, read_depth_raw
    from .metrics import MetricReport, mask_iou, psnr, ssim
    from .pngio import read_png

    dataset = read_dataset(args.dataset)
    render_dir = Path(args.render_dir)
    meta_path = render_dir / "render_meta.json"
    if not meta_path.exists():
        print(f"error: {render_dir} has no render_meta.json", file=sys.stderr)
        return EXIT_VALIDATION
    timestamps = json.loads(meta_path.read_text())["timestamps"]

    report = MetricReport()
    gains = []
    for t in timestamps:
        rgb_path = render_dir / "rgb" / f"{t:04d}.png"
        if not rgb_path.exists():
            print(f"error: missing rendered frame {rgb_path}", file=sys.stderr)
            return EXIT_VALIDATION
        pred = read_png(rgb_path) / 255.0
        sharp = dataset.sharp[t]
        if pred.shape != sharp.shape:
            print(f"error: {rgb_path} shape {pred.shape} vs dataset {sharp.shape}",
                  file=sys.stderr)
            return EXIT_VALIDATION
        row = {
            "psnr": psnr(pred, sharp),
            "ssim": ssim(pred, sharp),
            "baseline_psnr": psnr(dataset.blur[t], sharp),
            "baseline_ssim": ssim(dataset.blur[t], sharp),
        }
        row["psnr_gain"] = row["psnr"] - row["baseline_psnr"]
        gains.append(row["psnr_gain"])
        mask_path = render_dir / "mask" / f"{t:04d}.png"
        if mask_path.exists():
            pred_mask = read_png(mask_path) > 127
            row["mask_iou"] = mask_iou(pred_mask, dataset.mask_true[t])
        pdy_path = render_dir / "p_dy" / f"{t:04d}.raw"
        if pdy_path.exists():
            p_dy = read_depth_raw(pdy_path)
            static_px = ~dataset.mask_true[t]
            if static_px.any():
                row["static_p_st"] = float((1.0 - p_dy)[static_px].mean())
        report.add(t, **row)

    out = Path(args.out) if args.out else render_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_text())
    print(report.to_text())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(seed=args.seed or 0, sabotage=args.sabotage)
    width = max(len(r.name) for r in results)
    failed = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_rel_err={r.max_rel_err:.3e}  "
              f"tol={r.tol:.0e}  {status}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moblurf",
        description="Motion-deblurring dynamic radiance fields: dataset "
                    "synthesis, two-stage training, rendering, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="cap worker/BLAS threads")
        p.add_argument("--profile", choices=("paper", "desk"), default="desk")
        p.add_argument("--force", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic blurry dataset")
    p.add_argument("--preset", default="moving-quad-64")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(seed=0, func=cmd_synth)

    p = sub.add_parser("train", help="run BRI + MDD training")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config file (profile defaults "
                                    "overridden by file, then --set)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config value")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--progress", action="store_true",
                   help="echo log lines to stdout")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render sharp frames from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pose-source", choices=("train", "eval", "file"),
                   default="eval")
    p.add_argument("--pose-file")
    p.add_argument("--timestamps", help="comma-separated frame indices")
    common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="image-quality report for rendered frames")
    p.add_argument("--render-dir", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="report directory (default: render dir)")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--sabotage", help=argparse.SUPPRESS)  # test hook
    common(p)
    p.set_defaults(seed=0, func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    try:
        return args.func(args)
    except Exception as exc:
        from .data import DatasetError
        from .fields import CheckpointError
        from .optim import OptimError
        from .training import FreezeViolation, NumericalError
        if isinstance(exc, (NumericalError, OptimError, FreezeViolation)):
            detail = getattr(exc, "breakdown", None)
            print(f"numerical failure: {exc}"
                  + (f" breakdown={detail}" if detail else ""), file=sys.stderr)
            return EXIT_NUMERICAL
        if isinstance(exc, (ValueError, KeyError, IndexError, OSError,
                            DatasetError, CheckpointError,
                            json.JSONDecodeError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        raise


if __name__ == "__main__":
    sys.exit(main())
