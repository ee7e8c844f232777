"""Online/momentum training machinery: EMA target updates, the FIFO
embedding queue, and the per-step pretraining contract.

Step ordering: augment both views, embed (online with gradient, target
without), snapshot the queue, compute the configured loss against that
snapshot, optimizer step on the online branch, EMA update, and only then
enqueue the fresh target embeddings. The current batch therefore never
appears among its own negatives.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import augment as aug
from . import autodiff as ad
from . import models, objectives, schedules
from .autodiff import Tensor


class MemoryQueue:
    """Fixed-capacity FIFO ring of unit-norm embedding rows."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1 or dim < 1:
            raise ValueError(f"capacity and dim must be positive, got "
                             f"{capacity}, {dim}")
        self.capacity = capacity
        self.dim = dim
        self.storage = np.zeros((capacity, dim), dtype=np.float32)
        self.cursor = 0
        self.fill = 0

    def push(self, batch: np.ndarray):
        batch = np.asarray(batch, dtype=np.float32)
        n = batch.shape[0]
        if n > self.capacity:
            raise ValueError(
                f"batch of {n} rows exceeds queue capacity {self.capacity}"
            )
        idx = (self.cursor + np.arange(n)) % self.capacity
        self.storage[idx] = batch
        self.cursor = int((self.cursor + n) % self.capacity)
        self.fill = min(self.fill + n, self.capacity)

    def snapshot(self) -> np.ndarray:
        """Copy of the stored rows, oldest first. Errors when empty."""
        if self.fill == 0:
            raise ValueError("snapshot of an empty queue")
        if self.fill < self.capacity:
            return self.storage[: self.fill].copy()
        order = (self.cursor + np.arange(self.capacity)) % self.capacity
        return self.storage[order].copy()


def ema_update(online: dict[str, Tensor], target: dict[str, Tensor], m: float):
    """theta_t <- m * theta_t + (1 - m) * theta_o for every entry, running
    batch-norm statistics included."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {m}")
    if set(online) != set(target):
        raise ValueError("online/target parameter layouts differ")
    for k, t in target.items():
        t.data = (m * t.data + (1.0 - m) * online[k].data).astype(t.data.dtype)


def clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    out = {}
    for k, t in params.items():
        c = Tensor(t.data.copy(), requires_grad=False, dtype=None)
        out[k] = c
    return out


@dataclass
class TrainState:
    encoder_spec: models.EncoderSpec
    projector_spec: models.ProjectorSpec
    online: dict[str, Tensor]
    target: dict[str, Tensor]
    opt: schedules.OptimizerState
    queue: MemoryQueue
    step: int = 0


def init_state(encoder_spec: models.EncoderSpec,
               projector_spec: models.ProjectorSpec,
               queue_size: int, seed: int,
               momentum: float = 0.9, weight_decay: float = 5e-4) -> TrainState:
    enc = models.build_encoder(encoder_spec, seed)
    proj = models.build_projector(projector_spec, seed + 1)
    online = models.merge_prefixed(("enc", enc), ("proj", proj))
    # target starts as an exact copy of the online network
    target = clone_params(online)
    opt = schedules.OptimizerState(online, momentum=momentum,
                                  weight_decay=weight_decay)
    queue = MemoryQueue(queue_size, projector_spec.out_dim)
    return TrainState(encoder_spec, projector_spec, online, target, opt, queue)


def embed(params: dict[str, Tensor], state: TrainState, images: Tensor,
          train: bool, update_running: bool) -> Tensor:
    feats = models.encoder_forward(
        models.split_prefixed(params, "enc"), state.encoder_spec, images,
        train=train, update_running=update_running,
    )
    return models.projector_forward(
        models.split_prefixed(params, "proj"), state.projector_spec, feats,
        train=train, update_running=update_running,
    )


def pretrain_step(state: TrainState, batch: np.ndarray,
                  sample_indices: np.ndarray, epoch: int,
                  obj_cfg: objectives.ObjectiveConfig,
                  sched_cfg: schedules.ScheduleConfig,
                  objective: str, seed: int,
                  strong: aug.AugmentationPolicy,
                  weak: aug.AugmentationPolicy) -> dict:
    """One training step; returns the per-step metrics record."""
    t0 = time.perf_counter()
    x1 = aug.apply_policy(strong, batch, seed, epoch, view_index=1,
                          sample_indices=sample_indices)
    x2 = aug.apply_policy(weak, batch, seed, epoch, view_index=2,
                          sample_indices=sample_indices)

    snapshot = state.queue.snapshot()
    key = {"sce": "sce", "infonce": "infonce", "ressl": "ressl",
           "combined": "combined"}[objective]
    with ad.Tape() as tape:
        z1 = embed(state.online, state, Tensor(x1), train=True,
                   update_running=True)
        # target branch: batch statistics, no gradient, stats evolve via
        # EMA only
        z2 = embed(state.target, state, Tensor(x2), train=True,
                   update_running=False)
        losses = objectives.compute_losses(z1, z2.data, snapshot, obj_cfg)
        loss = losses[key]
    loss_val = float(loss.data)
    if not np.isfinite(loss_val):
        stats = {
            "pos_min": float(np.min(z1.data @ z2.data.T)),
            "pos_max": float(np.max(z1.data @ z2.data.T)),
            "queue_fill": state.queue.fill,
        }
        raise FloatingPointError(
            f"non-finite loss at step {state.step}; logits stats: {stats}"
        )

    for t in state.online.values():
        t.zero_grad()
    ad.backward(tape, loss)
    lr = schedules.lr_at(sched_cfg, state.step)
    schedules.sgd_update(state.online, state.opt, lr)
    m = schedules.momentum_at(sched_cfg, state.step)
    ema_update(state.online, state.target, m)
    state.queue.push(z2.data)
    state.step += 1

    return {
        "step": state.step,
        "epoch": epoch,
        "lr": float(lr),
        "ema_m": float(m),
        "loss": loss_val,
        "loss_infonce": float(losses["infonce"].data),
        "loss_ressl": float(losses["ressl"].data),
        "loss_ceil": float(losses["ceil"].data),
        "queue_fill": int(state.queue.fill),
        "wall_ms": (time.perf_counter() - t0) * 1000.0,
    }


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, 0x5E]))
    return rng.permutation(n)


def prefill_queue(state: TrainState, images: np.ndarray,
                  sample_indices: np.ndarray, seed: int,
                  weak: aug.AugmentationPolicy):
    """Seed an empty queue with target embeddings of a warm-up view (view
    index 0), so the first real step already has negatives that are not the
    batch's own z2."""
    x0 = aug.apply_policy(weak, images, seed, 0, view_index=0,
                          sample_indices=sample_indices)
    z0 = embed(state.target, state, Tensor(x0), train=True,
               update_running=False)
    state.queue.push(z0.data)


def pretrain_epochs(state: TrainState, images: np.ndarray,
                    obj_cfg, sched_cfg, objective: str, seed: int,
                    strong, weak, batch_size: int,
                    first_epoch: int, last_epoch: int,
                    on_metrics=None, on_epoch_end=None,
                    skip_until_full: bool = False):
    """Run epochs [first_epoch, last_epoch); emits one metrics record per step.

    With ``skip_until_full`` the loss is not computed while the queue is
    filling: steps only push target embeddings until capacity is reached.
    The default computes the loss against the partial queue from the start.
    """
    n = images.shape[0]
    steps = n // batch_size
    for epoch in range(first_epoch, last_epoch):
        order = epoch_order(n, seed, epoch)
        for s in range(steps):
            idx = order[s * batch_size:(s + 1) * batch_size]
            if state.queue.fill == 0 and not skip_until_full:
                prefill_queue(state, images[idx], idx, seed, weak)
            if skip_until_full and state.queue.fill < state.queue.capacity:
                x2 = aug.apply_policy(weak, images[idx], seed, epoch, 2,
                                      sample_indices=idx)
                z2 = embed(state.target, state, Tensor(x2), train=True,
                           update_running=False)
                state.queue.push(z2.data)
                continue
            rec = pretrain_step(state, images[idx], idx, epoch, obj_cfg,
                                sched_cfg, objective, seed, strong, weak)
            if on_metrics:
                on_metrics(rec)
        if on_epoch_end:
            on_epoch_end(epoch, state)
    return state
