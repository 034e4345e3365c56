"""Dequantization, AdamW with cosine decay, and the train/eval loops.

Determinism contract: all randomness (batch order, dequantization noise)
derives from the seeds recorded in `TrainConfig`, so two runs with the
same config produce bitwise-identical metrics.  Dequantization noise is
re-drawn every step from a stream keyed by (noise_seed, domain, step),
where training and evaluation use separate domains; batch order is keyed
by (data_seed, epoch).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import numerics as nm
from .errors import ConfigError, NumericError, UsageError
from .model import JetModel, nll_bpd
from .numerics import Parameter, Tensor
from .patches import patchify
from .seeding import stream


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 3e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.95  # deliberately below the common 0.999
    eps: float = 1e-8
    epochs: int = 1
    batch_size: int = 64
    warmup_steps: int = 500
    grad_clip_norm: Optional[float] = None
    data_seed: int = 1
    noise_seed: int = 2
    eval_interval: int = 0  # steps between held-out evals; 0 disables
    eval_batches: int = 4
    checkpoint_interval: int = 0  # steps between checkpoints; 0 = final only
    log_interval: int = 1

    def __post_init__(self):
        if self.base_lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("base_lr must be positive; epochs and batch_size >= 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")

    def paper_strict(self) -> "TrainConfig":
        """Drop the desk-scale conveniences: no warmup, no gradient clipping."""
        return replace(self, warmup_steps=0, grad_clip_norm=None)


# Named starting points; explicit config keys override preset values.  The
# finetuning recipes are starting points only, untested at full scale.
PRESETS: dict[str, TrainConfig] = {
    "scratch": TrainConfig(base_lr=3e-4, epochs=200, warmup_steps=0),
    "finetune_short": TrainConfig(base_lr=1e-5, epochs=30, warmup_steps=0),
    "finetune_long": TrainConfig(base_lr=3e-6, epochs=100, warmup_steps=0),
    "desk": TrainConfig(),
}


def preset(name: str) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown train preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]


@dataclass
class OptState:
    """Per-parameter first/second moment accumulators and the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_parameters(cls, params: list[Parameter]) -> "OptState":
        return cls(
            m={p.name: np.zeros_like(p.data) for p in params},
            v={p.name: np.zeros_like(p.data) for p in params},
            t=0,
        )


@dataclass
class TrainState:
    model: JetModel
    opt: OptState
    step: int
    records: list[dict]


def dequantize(batch: np.ndarray, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """(pixel + u)/256 - 0.5 with u ~ U[0, 1) i.i.d.; output in [-0.5, 0.5)."""
    batch = np.asarray(batch)
    if batch.dtype != np.uint8:
        raise UsageError(f"dequantize expects uint8 pixels, got {batch.dtype}")
    noise = rng.random(batch.shape, dtype=np.float32 if dtype == np.float32 else np.float64)
    return ((batch + noise) / 256.0 - 0.5).astype(dtype, copy=False)


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int = 0) -> float:
    """Linear warmup to base_lr, then cosine decay to zero at total_steps."""
    if not 0 <= step <= total_steps:
        raise UsageError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = (step - warmup_steps) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def adamw_step(params: list[Parameter], opt: OptState, lr: float, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update with decoupled weight decay, in place."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(
                f"non-finite gradient for {p.name} at optimizer step {opt.t + 1}; step rejected"
            )
    opt.t += 1
    t = opt.t
    b1, b2 = cfg.beta1, cfg.beta2
    for p in params:
        g = p.grad
        m = opt.m[p.name]
        v = opt.v[p.name]
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.value.data[...] -= lr * (
            m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p.data
        )


def clip_gradients(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params:
            p.grad[...] *= factor
    return norm


def batch_loss(model: JetModel, batch_float: np.ndarray) -> Tensor:
    """Mean bits/dim over a dequantized (B, H, W, C) batch, as a graph node."""
    total = None
    for image in batch_float:
        bpd = nll_bpd(model, Tensor(patchify(image, model.geom)))
        total = bpd if total is None else total + bpd
    return total * (1.0 / batch_float.shape[0])


def eval_bpd(
    model: JetModel,
    images: np.ndarray,
    noise_seed: int,
    repeats: int = 1,
) -> tuple[float, list[float]]:
    """Mean bits/dim over `images` with seeded dequantization noise.

    Each repeat draws a fresh noise stream keyed by (noise_seed, repeat);
    returns (mean over repeats, per-repeat means).
    """
    dtype = model.config.np_dtype
    per_repeat = []
    with nm.no_grad():
        for r in range(repeats):
            rng = stream(noise_seed, 1, r)  # domain 1: evaluation noise
            batch = dequantize(images, rng, dtype)
            values = [
                float(nll_bpd(model, Tensor(patchify(img, model.geom))).data)
                for img in batch
            ]
            per_repeat.append(float(np.mean(values)))
    return float(np.mean(per_repeat)), per_repeat


def train(
    model: JetModel,
    images: np.ndarray,
    cfg: TrainConfig,
    eval_images: Optional[np.ndarray] = None,
    on_record: Optional[Callable[[dict], None]] = None,
    on_checkpoint: Optional[Callable[["TrainState"], None]] = None,
) -> TrainState:
    """Optimize the model on uint8 `images`; returns the final state.

    Per step: seeded shuffle, dequantize, mean-bpd loss, reverse pass,
    optional global-norm clip, AdamW with the cosine schedule.  Metrics
    records are dicts {step, lr, train_bpd[, eval_bpd]}; `on_record` sees
    each one as it is produced.
    """
    if images.ndim != 4 or images.shape[0] == 0:
        raise UsageError("train expects a non-empty (N, H, W, C) uint8 array")
    params = model.parameters()
    opt = OptState.for_parameters(params)
    count = images.shape[0]
    steps_per_epoch = max(count // cfg.batch_size, 1)
    total_steps = cfg.epochs * steps_per_epoch
    dtype = model.config.np_dtype

    records: list[dict] = []
    state = TrainState(model=model, opt=opt, step=0, records=records)
    step = 0
    try:
        for epoch in range(cfg.epochs):
            order = stream(cfg.data_seed, epoch).permutation(count)
            for b in range(steps_per_epoch):
                rows = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                # domain 0: per-step training noise
                batch = dequantize(images[rows], stream(cfg.noise_seed, 0, step), dtype)

                model.zero_grads()
                loss = batch_loss(model, batch)
                nm.backward(loss)
                if cfg.grad_clip_norm is not None:
                    clip_gradients(params, cfg.grad_clip_norm)
                lr = cosine_lr(step, total_steps, cfg.base_lr, cfg.warmup_steps)
                adamw_step(params, opt, lr, cfg)
                step += 1
                state.step = step

                if step % cfg.log_interval == 0 or step == total_steps:
                    record = {"step": step, "lr": lr, "train_bpd": float(loss.data)}
                    if (
                        eval_images is not None
                        and cfg.eval_interval
                        and (step % cfg.eval_interval == 0 or step == total_steps)
                    ):
                        limit = cfg.eval_batches * cfg.batch_size
                        record["eval_bpd"], _ = eval_bpd(
                            model, eval_images[:limit], cfg.noise_seed
                        )
                    records.append(record)
                    if on_record is not None:
                        on_record(record)
                if (
                    on_checkpoint is not None
                    and cfg.checkpoint_interval
                    and step % cfg.checkpoint_interval == 0
                ):
                    on_checkpoint(state)
    except NumericError:
        # The optimizer rejects a step before touching parameters, so the
        # model still holds the last good values; persist them on the way out.
        if on_checkpoint is not None:
            on_checkpoint(state)
        raise
    if on_checkpoint is not None:
        on_checkpoint(state)
    return state


def format_record(record: dict) -> str:
    """One metrics line: space-separated key=value pairs, fixed key order."""
    parts = [f"step={record['step']}", f"lr={record['lr']:.8e}"]
    parts.append(f"train_bpd={record['train_bpd']:.6f}")
    if "eval_bpd" in record:
        parts.append(f"eval_bpd={record['eval_bpd']:.6f}")
    return " ".join(parts)


def parse_record(line: str) -> dict:
    """Inverse of `format_record`."""
    record: dict = {}
    for token in line.split():
        key, _, value = token.partition("=")
        record[key] = int(value) if key == "step" else float(value)
    return record
