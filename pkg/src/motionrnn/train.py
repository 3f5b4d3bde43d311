"""Training: L1+L2 objective, Adam, global-norm clipping, scheduled sampling,
and a deterministic loop that logs to CSV and checkpoints through the
atomic writer."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SequenceBatch
from .metrics import evaluate
from .model import MotionRnn, save_checkpoint
from .tensor import Tape, Tensor, backward, concat
from .util import atomic_write, derive_seed


@dataclass
class TrainConfig:
    batch_size: int = 8
    iterations: int = 2000
    lr: float = 3e-4
    decay_steps: int | None = None     # scheduled sampling; default iterations // 2
    eval_interval: int = 200
    seed: int = 0
    clip_norm: float = 10.0
    horizon: int | None = None         # default: frames after the split

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.decay_steps is not None and self.decay_steps < 1:
            raise ValueError(f"decay_steps must be >= 1, got {self.decay_steps}")
        if self.eval_interval < 1:
            raise ValueError(f"eval_interval must be >= 1, got {self.eval_interval}")


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def loss_l1l2(pred: Tensor, target: Tensor) -> Tensor:
    """mean |pred - target| + mean (pred - target)^2."""
    if pred.shape != target.shape:
        raise ValueError(f"loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return diff.abs().mean() + (diff * diff).mean()


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Standard Adam with bias correction; eps sits outside the square root."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = 10.0) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm.

    Returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.ravel(), g.ravel()))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def sampling_mask(iteration: int, horizon: int, decay_steps: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Per-step booleans: True = feed ground truth. The ground-truth
    probability decays linearly to zero over decay_steps iterations."""
    if decay_steps <= 0:
        raise ValueError(f"decay_steps must be positive, got {decay_steps}")
    eps = max(0.0, 1.0 - iteration / decay_steps)
    return rng.random(horizon) < eps


@dataclass
class TrainResult:
    losses: list[float]
    eval_history: list[tuple[int, float, float]]   # (iteration, mse, ssim)
    log_path: Path
    checkpoint_path: Path


def train(model: MotionRnn, train_data: SequenceBatch, cfg: TrainConfig,
          out_dir, eval_data: SequenceBatch | None = None,
          quiet: bool = False) -> TrainResult:
    """Run the loop; writes log.csv and model.ckpt under out_dir.

    Deterministic for fixed (model, data, cfg): shuffling, sampling and
    parameter updates all derive from cfg.seed.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = train_data.frames
    split = train_data.split_index
    horizon = cfg.horizon if cfg.horizon is not None else frames.shape[1] - split
    if not (1 <= horizon <= frames.shape[1] - split):
        raise ValueError(f"horizon {horizon} incompatible with {frames.shape[1]} frames, split {split}")
    decay = cfg.decay_steps if cfg.decay_steps is not None else max(1, cfg.iterations // 2)
    n = frames.shape[0]
    batch = min(cfg.batch_size, n)

    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    sample_rng = np.random.default_rng(derive_seed(cfg.seed, "sampling"))
    params = model.named_parameters()
    opt = AdamState(lr=cfg.lr)

    order = shuffle_rng.permutation(n)
    cursor = 0
    losses: list[float] = []
    eval_history: list[tuple[int, float, float]] = []
    rows: list[str] = ["iteration,loss,eval_mse,eval_ssim"]
    ckpt_path = out_dir / "model.ckpt"
    log_path = out_dir / "log.csv"

    dt = np.dtype(model.cfg.dtype)
    for it in range(cfg.iterations):
        if cursor + batch > n:
            order = shuffle_rng.permutation(n)
            cursor = 0
        idx = np.sort(order[cursor:cursor + batch])
        cursor += batch
        mask = sampling_mask(it, horizon, decay, sample_rng)
        minibatch = SequenceBatch(frames[idx], split)

        with Tape() as tape:
            preds, _ = model.rollout(minibatch, horizon, sampling_mask=mask)
            stacked = concat([p.reshape((batch, 1) + p.shape[1:]) for p in preds], axis=1)
            target = Tensor(frames[idx, split:split + horizon].astype(dt, copy=False))
            loss = loss_l1l2(stacked, target)
        backward(loss, tape)
        grads = {name: p.grad for name, p in params.items() if p.grad is not None}
        clip_gradients(grads, cfg.clip_norm)
        adam_step(params, grads, opt)

        loss_val = loss.item()
        losses.append(loss_val)
        is_eval = (it + 1) % cfg.eval_interval == 0 or it + 1 == cfg.iterations
        if is_eval and eval_data is not None:
            emse, essim = evaluate_model(model, eval_data, horizon=horizon)
            eval_history.append((it + 1, emse, essim))
            rows.append(f"{it + 1},{loss_val:.8g},{emse:.8g},{essim:.8g}")
            save_checkpoint(model, ckpt_path)
            if not quiet:
                print(f"iter {it + 1}/{cfg.iterations} loss {loss_val:.5f} "
                      f"eval_mse {emse:.6f} eval_ssim {essim:.4f}", file=sys.stderr)
        else:
            rows.append(f"{it + 1},{loss_val:.8g},,")
            if is_eval:
                save_checkpoint(model, ckpt_path)

    save_checkpoint(model, ckpt_path)
    with atomic_write(log_path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    return TrainResult(losses=losses, eval_history=eval_history,
                       log_path=log_path, checkpoint_path=ckpt_path)


def evaluate_model(model: MotionRnn, data: SequenceBatch, horizon: int | None = None,
                   batch_size: int = 8) -> tuple[float, float]:
    """Held-out MSE and SSIM aggregates over autoregressive predictions."""
    frames = data.frames
    split = data.split_index
    h = horizon if horizon is not None else frames.shape[1] - split
    h = min(h, frames.shape[1] - split)
    preds = []
    for start in range(0, frames.shape[0], batch_size):
        part = SequenceBatch(frames[start:start + batch_size], split)
        preds.append(model.predict(part, h))
    pred = np.concatenate(preds, axis=0)
    target = frames[:, split:split + h]
    report = evaluate(pred, target, metrics=("mse", "ssim"))
    return report.aggregate["mse"], report.aggregate["ssim"]
