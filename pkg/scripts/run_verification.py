#!/usr/bin/env python3
"""Run the built-in self-checks: the loss decomposition identity and
finite-difference gradient checks for every loss term.

Usage:
    python3 scripts/run_verification.py [--trials N] [--f64]
"""

import argparse
import json
import sys

from sce import verify


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=200,
                    help="random instances for the decomposition check")
    ap.add_argument("--f64", action="store_true",
                    help="run the decomposition check in float64")
    ap.add_argument("--json", action="store_true",
                    help="emit the full report as JSON")
    args = ap.parse_args()

    report = verify.full_verify(trials=args.trials, use_f64=args.f64)
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        dec = report["decomposition"]
        print(f"decomposition ({dec['dtype']}, {args.trials} trials): "
              f"max residual {dec['max_residual']:.3e} "
              f"tol {dec['tolerance']:.0e} -> "
              f"{'PASS' if dec['passed'] else 'FAIL'}")
        grad_tol = report["gradients"]["tolerance"]
        for name, r in report["gradients"]["per_loss"].items():
            print(f"gradients [{name:8s}]: max rel err "
                  f"{r['max_rel_err']:.3e} tol {grad_tol:.0e} -> "
                  f"{'PASS' if r['passed'] else 'FAIL'}")
    sys.exit(0 if report["passed"] else 1)


if __name__ == "__main__":
    main()
