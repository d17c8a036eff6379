"""Command-line entry point.

Subcommands: synth (write a synthetic dataset), train, eval (metric
tables incl. the bicubic baseline), infer (reconstruct a clip and
write a comparison grid), gradcheck (finite-difference verification).

Exit codes: 0 success, 1 usage/config error, 2 numeric failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as D
from .checkpoint import load_checkpoint
from .config import RunConfig, load_config, synth_params_from
from .errors import (CheckpointError, ConfigError, FormatError, NumericError,
                     ShapeError, UsageError)
from .metrics import psnr, ssim
from .model import SRModel
from .optim import resume_training, train_loop
from .tensor import no_grad
from .vision import bicubic_resize


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facesr",
                                     description="8x face hallucination workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic clip dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--count", type=int, required=True, help="number of clips")

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.add_argument("--data", default=None, help="dataset directory (overrides config)")
    p.add_argument("--out", default=None, help="run directory (overrides config)")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", default=None, help="metrics CSV path")

    p = sub.add_parser("infer", help="reconstruct one clip and write images")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True, help="clip directory (clips/<id>)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_common(p)
    p.add_argument("--seeds", type=int, default=5)
    return parser


def _dataset_seeds(cfg: RunConfig, count: int) -> list[int]:
    ss = np.random.SeedSequence(cfg.seed)
    return [int(s) for s in ss.generate_state(count, dtype=np.uint64)]


def cmd_synth(args) -> int:
    cfg = load_config(args.config, args.overrides)
    clips = []
    for i, seed in enumerate(_dataset_seeds(cfg, args.count)):
        params = synth_params_from(cfg, seed)
        clips.append(D.synth_clip(params, clip_id=f"clip_{i:04d}"))
    D.save_dataset(clips, args.out)
    print(f"wrote {len(clips)} clips to {args.out}")
    return 0


def _model_for(cfg: RunConfig) -> tuple[SRModel, np.random.Generator]:
    rng = cfg.rng()
    return SRModel(cfg.model, rng), rng


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    data_dir = args.data or cfg.data.path
    if not data_dir:
        raise ConfigError("no dataset: pass --data or set data.path in the config")
    clips = D.load_dataset(data_dir)
    out_dir = args.out or cfg.output.dir
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "loss_log.txt")
    model, rng = _model_for(cfg)
    tcfg = cfg.train_config()
    if args.resume:
        stats, _ = resume_training(model, clips, tcfg, args.resume,
                                   out_dir=out_dir, log_path=log_path)
    else:
        stats, _ = train_loop(model, clips, tcfg, rng,
                              out_dir=out_dir, log_path=log_path)
    if stats:
        print(f"trained {len(stats)} iterations, final loss {stats[-1].loss_total:.6g}")
    print(f"log: {log_path}")
    return 0


def _predict_clip(model: SRModel, clip: D.Clip) -> np.ndarray:
    """Reconstruct every snapshot; returns (N, H, W, 3) in 0..255."""
    with no_grad():
        pred, _, _ = model.forward((clip.lr / 255.0).astype(np.float32))
    return np.clip(pred.data * 255.0, 0.0, 255.0)


def _bicubic_baseline(clip: D.Clip) -> np.ndarray:
    h, w = clip.hr.shape[1:3]
    return np.stack([bicubic_resize(f, h, w, value_range=(0.0, 255.0))
                     for f in clip.lr])


def _metric_row(pred: np.ndarray, target: np.ndarray) -> tuple[float, float, float, float]:
    return (psnr(pred, target, "y"), ssim(pred, target, "y"),
            psnr(pred, target, "rgb"), ssim(pred, target, "rgb"))


def evaluate_dataset(model: SRModel, clips: list[D.Clip]) -> dict:
    """Per-clip and mean reference-frame metrics for the model and the
    bicubic-upsample baseline."""
    rows, base_rows = [], []
    for clip in clips:
        ref = clip.ref_index
        target = clip.hr[ref]
        rows.append((clip.clip_id,) + _metric_row(_predict_clip(model, clip)[ref], target))
        base_rows.append((clip.clip_id,) + _metric_row(_bicubic_baseline(clip)[ref], target))
    means = tuple(float(np.mean([r[i] for r in rows])) for i in range(1, 5))
    base_means = tuple(float(np.mean([r[i] for r in base_rows])) for i in range(1, 5))
    return {"model": rows, "bicubic": base_rows,
            "model_mean": means, "bicubic_mean": base_means}


def _format_table(result: dict) -> str:
    header = f"{'clip':<12} {'PSNR-Y':>8} {'SSIM-Y':>8} {'PSNR-RGB':>9} {'SSIM-RGB':>9}"
    lines = [header, "-" * len(header)]
    for cid, py, sy, pr, sr in result["model"]:
        lines.append(f"{cid:<12} {py:8.3f} {sy:8.4f} {pr:9.3f} {sr:9.4f}")
    m = result["model_mean"]
    b = result["bicubic_mean"]
    lines.append("-" * len(header))
    lines.append(f"{'mean':<12} {m[0]:8.3f} {m[1]:8.4f} {m[2]:9.3f} {m[3]:9.4f}")
    lines.append(f"{'bicubic':<12} {b[0]:8.3f} {b[1]:8.4f} {b[2]:9.3f} {b[3]:9.4f}")
    return "\n".join(lines)


def _write_metrics_csv(path: str, rows: list[tuple]):
    with open(path, "w") as f:
        f.write("clip_id,psnr_y,ssim_y,psnr_rgb,ssim_rgb\n")
        for cid, py, sy, pr, sr in rows:
            f.write(f"{cid},{py:.6f},{sy:.6f},{pr:.6f},{sr:.6f}\n")


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.overrides)
    clips = D.load_dataset(args.data)
    model, _ = _model_for(cfg)
    load_checkpoint(args.checkpoint, model.params, model.fingerprint())
    result = evaluate_dataset(model, clips)
    print(_format_table(result))
    if args.out:
        _write_metrics_csv(args.out, result["model"])
        base = os.path.splitext(args.out)
        _write_metrics_csv(base[0] + "_bicubic" + (base[1] or ".csv"), result["bicubic"])
        print(f"metrics: {args.out}")
    return 0


def cmd_infer(args) -> int:
    cfg = load_config(args.config, args.overrides)
    clip_dir = args.clip.rstrip("/")
    clip = D.load_clip(clip_dir, os.path.basename(clip_dir), None, 0)
    clip = D.Clip(clip.clip_id, clip.hr, clip.lr, clip.landmarks,
                  ref_index=clip.n_frames // 2, seed=None)
    model, _ = _model_for(cfg)
    load_checkpoint(args.checkpoint, model.params, model.fingerprint())
    pred = _predict_clip(model, clip)
    os.makedirs(args.out, exist_ok=True)
    for n in range(clip.n_frames):
        D.save_image(os.path.join(args.out, f"pred_{n}.png"), pred[n])
        D.save_image(os.path.join(args.out, f"pred_{n}.ppm"), pred[n])
    ref = clip.ref_index
    h, w = clip.hr.shape[1:3]
    upscaled = bicubic_resize(clip.lr[ref], h, w, value_range=(0.0, 255.0))
    sep = 2
    grid = np.full((h, 3 * w + 2 * sep, 3), 255.0)
    for i, panel in enumerate((upscaled, pred[ref], clip.hr[ref])):
        grid[:, i * (w + sep):i * (w + sep) + w] = panel
    D.save_image(os.path.join(args.out, "comparison.png"), grid)
    print(f"wrote {clip.n_frames} reconstructions and comparison grid to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    report = run_gradcheck(seeds=args.seeds)
    print("\n".join(report.lines()))
    return 0 if report.ok else 2


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "train": cmd_train,
        "eval": cmd_eval,
        "infer": cmd_infer,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, UsageError, ShapeError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
