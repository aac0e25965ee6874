#!/usr/bin/env python3
"""How often does each suite criterion hold across many master seeds?

The suite's default seed is one draw; this shows whether a pass is typical.
Prints one CSV row per (experiment, seed, criterion).
"""
import argparse
import csv
import sys

from fedaudit.experiments import run_suite


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--stride", type=int, default=100, help="gap between consecutive master seeds")
    ap.add_argument("experiments", nargs="*", default=["exp1", "exp2", "exp3", "exp4"])
    args = ap.parse_args()

    w = csv.writer(sys.stdout)
    w.writerow(["experiment", "seed", "criterion", "value", "threshold", "passed"])
    passes: dict[str, list[bool]] = {}
    for exp in args.experiments:
        for i in range(args.seeds):
            seed = i * args.stride
            for c in run_suite(exp, seed=seed)["criteria"]:
                w.writerow([exp, seed, c["name"], c["value"], c["threshold"], c["passed"]])
                passes.setdefault(f"{exp}: {c['name']}", []).append(c["passed"])
    for name, oks in passes.items():
        print(f"# {sum(oks)}/{len(oks)}  {name}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
