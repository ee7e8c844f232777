"""Run orchestration: wiring configs to the engine, metrics streaming,
checkpointing and the linear-probe evaluation of a finished run."""

from __future__ import annotations

import json
import os

import numpy as np

from . import data as data_mod
from . import engine, evaluation, models
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, serialize_config


class OutputDirLocked(RuntimeError):
    pass


def load_dataset(cfg: RunConfig) -> data_mod.Dataset:
    if cfg.dataset_kind == "blobs":
        return data_mod.gen_synthetic_blobs(
            classes=cfg.blobs_classes, per_class=cfg.blobs_per_class,
            image_size=cfg.encoder.in_size,
            noise_sigma=cfg.blobs_noise_sigma, seed=cfg.seed,
        )
    if not cfg.dataset_path:
        raise FileNotFoundError(
            f"dataset kind {cfg.dataset_kind!r} requires data.path"
        )
    return data_mod.load_cifar_binary(
        cfg.dataset_path, cifar100=(cfg.dataset_kind == "cifar100")
    )


def state_to_checkpoint(state: engine.TrainState, cfg: RunConfig) -> Checkpoint:
    tensors = {}
    for k, t in state.online.items():
        tensors[f"online/{k}"] = t.data
    for k, t in state.target.items():
        tensors[f"target/{k}"] = t.data
    for k, v in state.opt.velocity.items():
        tensors[f"opt/{k}"] = v
    return Checkpoint(
        step=state.step, seed=cfg.seed, tensors=tensors,
        queue_storage=state.queue.storage.copy(),
        queue_cursor=state.queue.cursor, queue_fill=state.queue.fill,
        config_echo=serialize_config(cfg),
    )


def state_from_checkpoint(ckpt: Checkpoint, cfg: RunConfig) -> engine.TrainState:
    state = engine.init_state(
        cfg.encoder, cfg.projector, cfg.queue_size, cfg.seed,
        momentum=cfg.schedule.momentum, weight_decay=cfg.schedule.weight_decay,
    )
    for k, t in state.online.items():
        t.data = ckpt.tensors[f"online/{k}"].copy()
    for k, t in state.target.items():
        t.data = ckpt.tensors[f"target/{k}"].copy()
    for k in state.opt.velocity:
        state.opt.velocity[k] = ckpt.tensors[f"opt/{k}"].copy()
    state.queue.storage = ckpt.queue_storage.astype(np.float32).copy()
    state.queue.cursor = ckpt.queue_cursor
    state.queue.fill = ckpt.queue_fill
    state.step = ckpt.step
    return state


def pretrain_run(cfg: RunConfig, resume: str | None = None,
                 progress=None) -> engine.TrainState:
    """Full pretraining run: metrics.jsonl per step, a checkpoint per epoch.

    The output directory is exclusively owned via a lock file; concurrent
    runs must use distinct directories.
    """
    ds = load_dataset(cfg)
    steps_per_epoch = len(ds) // cfg.batch_size
    if steps_per_epoch < 1:
        raise ValueError(
            f"dataset of {len(ds)} samples too small for batch size "
            f"{cfg.batch_size}"
        )
    cfg.schedule.steps_per_epoch = steps_per_epoch

    os.makedirs(cfg.output_dir, exist_ok=True)
    lock_path = os.path.join(cfg.output_dir, ".lock")
    try:
        lock_fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputDirLocked(
            f"output directory {cfg.output_dir} is locked by another run "
            f"(remove {lock_path} if stale)"
        )
    try:
        if resume is not None:
            ckpt = load_checkpoint(resume)
            state = state_from_checkpoint(ckpt, cfg)
            first_epoch = state.step // steps_per_epoch
        else:
            state = engine.init_state(
                cfg.encoder, cfg.projector, cfg.queue_size, cfg.seed,
                momentum=cfg.schedule.momentum,
                weight_decay=cfg.schedule.weight_decay,
            )
            first_epoch = 0
            with open(os.path.join(cfg.output_dir, "config.txt"), "w") as f:
                f.write(serialize_config(cfg))

        metrics_path = os.path.join(cfg.output_dir, "metrics.jsonl")
        metrics_f = open(metrics_path, "a")

        def on_metrics(rec):
            metrics_f.write(json.dumps(rec) + "\n")
            metrics_f.flush()

        def on_epoch_end(epoch, st):
            save_checkpoint(
                os.path.join(cfg.output_dir, f"checkpoint_epoch{epoch:04d}.ckpt"),
                state_to_checkpoint(st, cfg),
            )
            if progress:
                progress(epoch, st)

        try:
            engine.pretrain_epochs(
                state, ds.images, cfg.obj, cfg.schedule, cfg.objective,
                cfg.seed, cfg.strong_aug, cfg.weak_aug, cfg.batch_size,
                first_epoch, cfg.epochs,
                on_metrics=on_metrics, on_epoch_end=on_epoch_end,
            )
        finally:
            metrics_f.close()
        return state
    finally:
        os.close(lock_fd)
        os.unlink(lock_path)


def probe_run(cfg: RunConfig, online_params: dict, probe_cfg=None,
              seed: int = 0):
    """Linear probe of the frozen online encoder on the run's dataset."""
    ds = load_dataset(cfg)
    if ds.labels is None:
        raise ValueError("probe requires a labeled dataset")
    train, test = data_mod.split_dataset(ds, cfg.holdout, seed=cfg.seed)
    if probe_cfg is None:
        probe_cfg = evaluation.desk_probe_config(len(train))
    enc_params = models.split_prefixed(online_params, "enc")
    return evaluation.linear_probe_train(
        enc_params, cfg.encoder, train.images, train.labels,
        test.images, test.labels, probe_cfg, seed=seed,
    )
