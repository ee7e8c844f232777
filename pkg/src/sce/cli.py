"""Command-line entry point.

Subcommands: ``pretrain``, ``probe``, ``verify``, ``simdist`` and
``sweep``. The SCE_THREADS environment variable caps internal numpy
parallelism (it must be set before the interpreter loads numpy to take
full effect; we forward it to the BLAS thread knobs here as well).
"""

from __future__ import annotations

import os

if "SCE_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["SCE_THREADS"])

import argparse
import json
import sys

import numpy as np

from . import evaluation, models, run, verify
from .checkpoint import load_checkpoint
from .config import RunConfig, load_config, parse_config


def _load_ckpt_config(path: str):
    ckpt = load_checkpoint(path)
    cfg = parse_config(ckpt.config_echo)
    return ckpt, cfg


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    state = run.pretrain_run(cfg, resume=args.resume)
    print(f"pretraining finished at step {state.step}; "
          f"outputs in {cfg.output_dir}")
    return 0


def cmd_probe(args) -> int:
    ckpt, cfg = _load_ckpt_config(args.checkpoint)
    if args.dataset:
        cfg.dataset_path = args.dataset
    state = run.state_from_checkpoint(ckpt, cfg)
    _, acc = run.probe_run(cfg, state.online)
    print(json.dumps({"top1": acc, "checkpoint": args.checkpoint,
                      "step": ckpt.step}))
    return 0


def cmd_verify(args) -> int:
    report = verify.full_verify(trials=args.trials, use_f64=args.f64)
    dec = report["decomposition"]
    print(f"decomposition: max residual {dec['max_residual']:.3e} "
          f"(tol {dec['tolerance']:.0e}, {dec['dtype']}) -> "
          f"{'PASS' if dec['passed'] else 'FAIL'}")
    for name, r in report["gradients"]["per_loss"].items():
        print(f"grad check [{name}]: max rel err {r['max_rel_err']:.3e} -> "
              f"{'PASS' if r['passed'] else 'FAIL'}")
    return 0 if report["passed"] else 1


def cmd_simdist(args) -> int:
    ckpt, cfg = _load_ckpt_config(args.checkpoint)
    state = run.state_from_checkpoint(ckpt, cfg)
    ds = run.load_dataset(cfg)
    report = evaluation.similarity_shift_histogram(
        state.online, (cfg.encoder, cfg.projector), ds.images,
        n_samples=args.samples, seed=cfg.seed,
    )
    payload = report.to_json()
    if args.out:
        with open(args.out, "w") as f:
            f.write(payload + "\n")
    print(payload)
    return 0


_PARAM_ALIASES = {
    "lambda": "objective.lam",
    "mu": "objective.mu",
    "eta": "objective.eta",
    "tau": "objective.tau",
    "tau_m": "objective.tau_m",
    "objective": "objective.kind",
}


def cmd_sweep(args) -> int:
    with open(args.config) as f:
        base_text = f.read()
    key = _PARAM_ALIASES.get(args.param, args.param)
    base_cfg = parse_config(base_text)
    base_dir = base_cfg.output_dir
    os.makedirs(base_dir, exist_ok=True)
    results_path = os.path.join(base_dir, "sweep_results.jsonl")
    with open(results_path, "a") as results_f:
        for value in args.values.split(","):
            flat = parse_config(base_text).to_flat()
            if key not in flat:
                print(f"unknown sweep parameter {args.param!r} (key {key!r})",
                      file=sys.stderr)
                return 2
            flat[key] = value
            cfg = RunConfig.from_flat(flat)
            tag = f"{args.param}_{value}".replace("/", "_")
            cfg.output_dir = os.path.join(base_dir, f"sweep_{tag}")
            state = run.pretrain_run(cfg)
            _, acc = run.probe_run(cfg, state.online)
            row = {"param": key, "value": value, "seed": cfg.seed, "top1": acc}
            results_f.write(json.dumps(row) + "\n")
            print(json.dumps(row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sce",
        description="Soft contrastive pretraining, probing and verification",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("pretrain", help="run self-supervised pretraining")
    sp.add_argument("--config", required=True)
    sp.add_argument("--resume", default=None,
                    help="checkpoint to resume from")
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("probe", help="linear-probe a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", default=None,
                    help="override the dataset path from the config echo")
    sp.set_defaults(fn=cmd_probe)

    sp = sub.add_parser("verify",
                        help="loss decomposition and gradient self-checks")
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--f64", action="store_true")
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("simdist",
                        help="weak/strong view similarity histogram")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--samples", type=int, default=500)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_simdist)

    sp = sub.add_parser("sweep", help="grid over one config parameter")
    sp.add_argument("--config", required=True)
    sp.add_argument("--param", required=True)
    sp.add_argument("--values", required=True,
                    help="comma-separated values")
    sp.set_defaults(fn=cmd_sweep)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (FileNotFoundError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())
