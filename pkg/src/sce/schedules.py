"""SGD with momentum, linear-warmup cosine learning rate, and the EMA
momentum schedule for the target network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass
class ScheduleConfig:
    base_lr: float = 0.06
    batch_size: int = 64
    reference_batch: int = 256
    warmup_epochs: int = 5
    total_epochs: int = 30
    steps_per_epoch: int = 1
    ema_base: float = 0.996
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def __post_init__(self):
        if self.warmup_epochs > self.total_epochs:
            raise ValueError(
                f"warmup_epochs {self.warmup_epochs} exceeds total_epochs "
                f"{self.total_epochs}"
            )
        if not 0.0 <= self.ema_base <= 1.0:
            raise ValueError(f"ema_base must be in [0, 1], got {self.ema_base}")

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch


def scaled_base_lr(cfg: ScheduleConfig) -> float:
    """Linear scaling rule: base_lr * batch_size / reference_batch."""
    return cfg.base_lr * cfg.batch_size / cfg.reference_batch


def lr_at(cfg: ScheduleConfig, step: int) -> float:
    """Linear ramp from 0 over the warmup steps, then cosine decay to 0."""
    if not 0 <= step < cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps})")
    lr = scaled_base_lr(cfg)
    if step < cfg.warmup_steps:
        return lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / max(span - 1, 1)
    return lr * 0.5 * (1.0 + np.cos(np.pi * progress))


def momentum_at(cfg: ScheduleConfig, step: int) -> float:
    """Cosine ramp of the EMA coefficient from ema_base (step 0) to 1 (step T)."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    t = step / max(cfg.total_steps, 1)
    return 1.0 - (1.0 - cfg.ema_base) * 0.5 * (np.cos(np.pi * t) + 1.0)


class OptimizerState:
    """Per-parameter velocity buffers for SGD with momentum."""

    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {
            k: np.zeros_like(t.data)
            for k, t in params.items()
            if t.requires_grad
        }


def sgd_update(params: dict[str, Tensor], opt: OptimizerState, lr: float):
    """v <- m*v + g + wd*theta; theta <- theta - lr*v. Skips non-grad params."""
    for name, v in opt.velocity.items():
        t = params[name]
        if t.grad is None:
            continue
        g = t.grad
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        if opt.weight_decay:
            g = g + opt.weight_decay * t.data
        v *= opt.momentum
        v += g
        t.data = t.data - lr * v
