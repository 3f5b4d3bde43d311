"""Command-line entry point.

Subcommands: gen-data, train, eval, predict, export-trend, ablate.
Flags override values from an optional JSON config file; every file the tool
writes goes through the atomic writer, so failures leave no partial output.
All randomness derives from --seed via documented purpose strings.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (GeneratorConfig, SequenceBatch, export_pgm, generate_batch,
                   load_idx_images, read_vseq, write_vseq)
from .metrics import METRIC_NAMES, evaluate, trend_field_export
from .model import ModelConfig, MotionRnn, load_checkpoint
from .tensor import Tensor
from .train import TrainConfig, evaluate_model, train
from .util import atomic_write


class Options:
    """Flag values with JSON-config fallback; explicit flags win."""

    def __init__(self, args: argparse.Namespace, allowed: set[str]):
        self._args = vars(args)
        self._cfg: dict = {}
        path = self._args.get("config")
        if path:
            with open(path) as fh:
                self._cfg = json.load(fh)
            if not isinstance(self._cfg, dict):
                raise ValueError(f"config file {path} must hold a JSON object")
            unknown = set(self._cfg) - allowed
            if unknown:
                raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")

    def get(self, name: str, default=None):
        v = self._args.get(name)
        if v is not None:
            return v
        if name in self._cfg:
            return self._cfg[name]
        return default

    def enabled(self, off_flag: str, cfg_key: str) -> bool:
        """--no-X flags beat the config's enable_X entry."""
        if self._args.get(off_flag):
            return False
        if cfg_key in self._cfg:
            return bool(self._cfg[cfg_key])
        return True


_MODEL_KEYS = {"layers", "channels", "k", "alpha", "patch", "lstm_kernel", "dtype",
               "enable_mh", "enable_tv", "enable_tm"}
_TRAIN_KEYS = {"iters", "batch", "lr", "context", "horizon", "seed",
               "eval_interval", "decay_steps", "clip_norm"}
_GEN_KEYS = {"seed", "count", "size", "frames", "split", "sprites", "sprite_size", "thickness"}
_EVAL_KEYS = {"metrics", "threshold", "context", "horizon", "pixel_sums"}


def _add_config_flag(p):
    p.add_argument("--config", help="JSON config file; explicit flags override it")


def _add_model_flags(p):
    p.add_argument("--layers", type=int, help="stacked recurrent layers (default: 4)")
    p.add_argument("--channels", type=int, help="hidden channels, divisible by 4 (default: 64)")
    p.add_argument("--k", type=int, help="motion filter size, odd (default: 3)")
    p.add_argument("--alpha", type=float, help="momentum step size in (0,1] (default: 0.5)")
    p.add_argument("--patch", type=int, help="space-to-depth patch factor (default: 1)")
    p.add_argument("--lstm-kernel", type=int, dest="lstm_kernel",
                   help="backbone gate kernel size (default: 5)")
    p.add_argument("--no-mh", action="store_true", help="disable the motion highway (default: on)")
    p.add_argument("--no-tv", action="store_true", help="disable transient variation (default: on)")
    p.add_argument("--no-tm", action="store_true", help="disable trending momentum (default: on)")


def _add_train_flags(p):
    p.add_argument("--seed", type=int, help="master seed (default: 0)")
    p.add_argument("--iters", type=int, help="training iterations (default: 2000)")
    p.add_argument("--batch", type=int, help="batch size (default: 8)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default: 3e-4)")
    p.add_argument("--context", type=int, help="context length (default: the file's split index)")
    p.add_argument("--horizon", type=int, help="prediction steps (default: frames after split)")
    p.add_argument("--eval-interval", type=int, dest="eval_interval",
                   help="iterations between evals (default: 200)")
    p.add_argument("--decay-steps", type=int, dest="decay_steps",
                   help="scheduled-sampling decay steps (default: iters/2)")


def _model_config(opt: Options, in_channels: int, height: int, width: int) -> ModelConfig:
    return ModelConfig(
        layers=int(opt.get("layers", 4)),
        channels=int(opt.get("channels", 64)),
        k=int(opt.get("k", 3)),
        alpha=float(opt.get("alpha", 0.5)),
        patch=int(opt.get("patch", 1)),
        enable_mh=opt.enabled("no_mh", "enable_mh"),
        enable_tv=opt.enabled("no_tv", "enable_tv"),
        enable_tm=opt.enabled("no_tm", "enable_tm"),
        in_channels=in_channels, height=height, width=width,
        lstm_kernel=int(opt.get("lstm_kernel", 5)),
        dtype=str(opt.get("dtype", "float32")),
    )


def _train_config(opt: Options) -> TrainConfig:
    return TrainConfig(
        batch_size=int(opt.get("batch", 8)),
        iterations=int(opt.get("iters", 2000)),
        lr=float(opt.get("lr", 3e-4)),
        decay_steps=opt.get("decay_steps"),
        eval_interval=int(opt.get("eval_interval", 200)),
        seed=int(opt.get("seed", 0)),
        clip_norm=float(opt.get("clip_norm", 10.0)),
        horizon=opt.get("horizon"),
    )


def _with_context(batch: SequenceBatch, context) -> SequenceBatch:
    if context is None:
        return batch
    context = int(context)
    if not (0 < context < batch.frames.shape[1]):
        raise ValueError(f"context {context} outside the {batch.frames.shape[1]}-frame sequence")
    return SequenceBatch(batch.frames, context)


def _workers(count: int) -> int:
    cap = os.environ.get("MOTIONRNN_THREADS")
    limit = int(cap) if cap else 1
    return max(1, min(limit, count))


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args) -> int:
    opt = Options(args, _GEN_KEYS)
    images = load_idx_images(args.idx) if args.idx else None
    cfg = GeneratorConfig(
        size=int(opt.get("size", 64)),
        frames=int(opt.get("frames", 20)),
        split=int(opt.get("split", 10)),
        sprites=int(opt.get("sprites", 2)),
        sprite_size=int(opt.get("sprite_size", 18)),
        thickness=float(opt.get("thickness", 0.10)),
        images=images,
    )
    cfg.validate()
    count = int(opt.get("count", 100))
    seed = int(opt.get("seed", 0))
    batch = generate_batch(seed, count, cfg, workers=_workers(count))
    write_vseq(args.out, batch)
    print(f"wrote {count} sequences of {cfg.frames}x{cfg.size}x{cfg.size} to {args.out}")
    return 0


def cmd_train(args) -> int:
    opt = Options(args, _MODEL_KEYS | _TRAIN_KEYS)
    data = _with_context(read_vseq(args.data), opt.get("context"))
    eval_data = None
    if args.eval_data:
        eval_data = _with_context(read_vseq(args.eval_data), opt.get("context"))
    _, _, c, h, w = data.frames.shape
    model = MotionRnn(_model_config(opt, c, h, w), seed=int(opt.get("seed", 0)))
    tcfg = _train_config(opt)
    result = train(model, data, tcfg, args.out, eval_data=eval_data)
    print(f"trained {tcfg.iterations} iterations; "
          f"checkpoint {result.checkpoint_path}, log {result.log_path}")
    return 0


def _predict_all(model: MotionRnn, data: SequenceBatch, horizon: int,
                 batch_size: int = 8) -> np.ndarray:
    parts = []
    for start in range(0, data.frames.shape[0], batch_size):
        part = SequenceBatch(data.frames[start:start + batch_size], data.split_index)
        parts.append(model.predict(part, horizon))
    return np.concatenate(parts, axis=0)


def _resolve_horizon(opt, data: SequenceBatch) -> int:
    h = opt.get("horizon")
    h = int(h) if h is not None else data.frames.shape[1] - data.split_index
    if h < 1:
        raise ValueError(f"horizon must be >= 1, got {h}")
    return h


def cmd_eval(args) -> int:
    opt = Options(args, _EVAL_KEYS)
    model = load_checkpoint(args.checkpoint)
    data = _with_context(read_vseq(args.data), opt.get("context"))
    horizon = _resolve_horizon(opt, data)
    horizon = min(horizon, data.frames.shape[1] - data.split_index)
    names = [m.strip() for m in str(opt.get("metrics", "mse,mae,ssim,psnr")).split(",") if m.strip()]
    for m in names:
        if m not in METRIC_NAMES:
            raise ValueError(f"unknown metric {m!r}, have {', '.join(METRIC_NAMES)}")
    pred = _predict_all(model, data, horizon)
    target = data.frames[:, data.split_index:data.split_index + horizon]
    report = evaluate(pred, target, metrics=names,
                      threshold=float(opt.get("threshold", 0.5)),
                      pixel_sums=bool(opt.get("pixel_sums", False) or args.pixel_sums))
    report.write_csv(args.out)
    for name, v in report.aggregate.items():
        print(f"{name}: {v:.6g}")
    return 0


def cmd_predict(args) -> int:
    opt = Options(args, _EVAL_KEYS | {"count"})
    model = load_checkpoint(args.checkpoint)
    data = _with_context(read_vseq(args.data), opt.get("context"))
    count = min(int(opt.get("count", 4)), data.frames.shape[0])
    horizon = _resolve_horizon(opt, data)
    sel = SequenceBatch(data.frames[:count], data.split_index)
    preds = _predict_all(model, sel, horizon)
    out = Path(args.out)
    split = data.split_index
    for i in range(count):
        for j in range(horizon):
            export_pgm(preds[i, j], out / f"seq{i:03d}_pred{j:02d}.pgm")
            if split + j < data.frames.shape[1]:
                export_pgm(data.frames[i, split + j], out / f"seq{i:03d}_gt{j:02d}.pgm")
    print(f"wrote {count} sequences x {horizon} steps of frames to {out}")
    return 0


def cmd_export_trend(args) -> int:
    model = load_checkpoint(args.checkpoint)
    interface = args.interface
    if not (1 <= interface <= max(0, model.cfg.layers - 1)):
        raise ValueError(f"interface {interface} outside 1..{model.cfg.layers - 1}")
    if model.units[interface - 1] is None or model.units[interface - 1].d0 is None:
        raise ValueError("this checkpoint has no trending-momentum state to export")
    state = model.init_state(1)
    steps = args.steps
    if steps > 0:
        if not args.data:
            raise ValueError("--steps needs --data to drive the model")
        data = read_vseq(args.data)
        frames = data.frames[:1]
        dt = np.dtype(model.cfg.dtype)
        for t in range(min(steps, frames.shape[1])):
            _, state, _ = model.step(Tensor(frames[:, t].astype(dt, copy=False)), state)
    field = state.motion[interface - 1].d.data[0]
    csv_path, svg_path = trend_field_export(field, args.out)
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def cmd_ablate(args) -> int:
    opt = Options(args, _MODEL_KEYS | _TRAIN_KEYS)
    data = _with_context(read_vseq(args.data), opt.get("context"))
    eval_data = None
    if args.eval_data:
        eval_data = _with_context(read_vseq(args.eval_data), opt.get("context"))
    _, _, c, h, w = data.frames.shape
    base = _model_config(opt, c, h, w)
    tcfg = _train_config(opt)
    out = Path(args.out)
    seed = int(opt.get("seed", 0))
    rows = ["mh,tv,tm,params,final_loss,eval_mse,eval_ssim"]
    for mh in (True, False):
        for tv in (True, False):
            for tm in (True, False):
                cfg = replace(base, enable_mh=mh, enable_tv=tv, enable_tm=tm)
                tag = f"mh{int(mh)}_tv{int(tv)}_tm{int(tm)}"
                model = MotionRnn(cfg, seed=seed)
                result = train(model, data, tcfg, out / tag, eval_data=eval_data, quiet=True)
                final_loss = f"{result.losses[-1]:.8g}" if result.losses else ""
                if eval_data is not None:
                    emse, essim = evaluate_model(model, eval_data,
                                                 horizon=tcfg.horizon)
                    rows.append(f"{int(mh)},{int(tv)},{int(tm)},{model.param_count()},"
                                f"{final_loss},{emse:.8g},{essim:.8g}")
                else:
                    rows.append(f"{int(mh)},{int(tv)},{int(tm)},{model.param_count()},"
                                f"{final_loss},,")
                print(f"{tag}: params={model.param_count()} loss={final_loss}", file=sys.stderr)
    with atomic_write(out / "comparison.csv", "w") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"wrote {out / 'comparison.csv'}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionrnn",
        description="Video prediction with motion-decomposed recurrent units.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic moving-glyph dataset")
    _add_config_flag(p)
    p.add_argument("--out", required=True, help="output .vseq path")
    p.add_argument("--seed", type=int, help="master seed (default: 0)")
    p.add_argument("--count", type=int, help="number of sequences (default: 100)")
    p.add_argument("--size", type=int, help="frame side length (default: 64)")
    p.add_argument("--frames", type=int, help="frames per sequence (default: 20)")
    p.add_argument("--split", type=int, help="context length stored in the file (default: 10)")
    p.add_argument("--sprites", type=int, help="sprites per sequence (default: 2)")
    p.add_argument("--sprite-size", type=int, dest="sprite_size",
                   help="sprite bitmap side (default: 18)")
    p.add_argument("--idx", help="optional IDX image file to use as sprites")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a .vseq dataset")
    _add_config_flag(p)
    p.add_argument("--data", required=True, help="training .vseq file")
    p.add_argument("--eval-data", dest="eval_data", help="held-out .vseq file")
    p.add_argument("--out", required=True, help="output directory for checkpoint and log")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on held-out data")
    _add_config_flag(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help=".vseq file to score")
    p.add_argument("--out", required=True, help="metric report CSV path")
    p.add_argument("--metrics", help="comma list of metrics (default: mse,mae,ssim,psnr)")
    p.add_argument("--threshold", type=float, help="csi binarization threshold (default: 0.5)")
    p.add_argument("--context", type=int, help="context override (default: file split)")
    p.add_argument("--horizon", type=int, help="steps to score (default: frames after split)")
    p.add_argument("--pixel-sums", dest="pixel_sums", action="store_true",
                   help="report frame-summed mse/mae instead of per-pixel means")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write predicted frames as PGM images")
    _add_config_flag(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help=".vseq file with contexts")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, help="sequences to render (default: 4)")
    p.add_argument("--context", type=int, help="context override (default: file split)")
    p.add_argument("--horizon", type=int, help="steps to predict (default: frames after split)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export-trend", help="export the momentum field as CSV + SVG arrows")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--out", required=True, help="output base path (writes .csv and .svg)")
    p.add_argument("--data", help=".vseq file to drive the model (with --steps)")
    p.add_argument("--steps", type=int, default=0,
                   help="frames to run before exporting; 0 exports the initial state (default: 0)")
    p.add_argument("--interface", type=int, default=1,
                   help="layer interface to export, 1-based (default: 1)")
    p.set_defaults(func=cmd_export_trend)

    p = sub.add_parser("ablate", help="train/eval the 8-way toggle grid and compare")
    _add_config_flag(p)
    p.add_argument("--data", required=True, help="training .vseq file")
    p.add_argument("--eval-data", dest="eval_data", help="held-out .vseq file")
    p.add_argument("--out", required=True, help="output directory")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
