#!/usr/bin/env python3
"""Train the three objectives (soft-target, hard-positive, relational) on
identical blobs data and compare linear-probe accuracies.

Usage:
    python3 scripts/compare_objectives.py --out runs/compare [--epochs 10]
"""

import argparse
import json
import os

from sce import config as cfg_mod
from sce import run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for objective in ("sce", "infonce", "ressl"):
        cfg = cfg_mod.RunConfig(
            objective=objective, epochs=args.epochs, seed=args.seed,
            output_dir=os.path.join(args.out, objective),
        )
        state = run.pretrain_run(cfg)
        _, top1 = run.probe_run(cfg, state.online)
        rows.append({"objective": objective, "epochs": args.epochs,
                     "seed": args.seed, "probe_top1": top1})
        print(json.dumps(rows[-1]), flush=True)

    with open(os.path.join(args.out, "comparison.json"), "w") as f:
        json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
