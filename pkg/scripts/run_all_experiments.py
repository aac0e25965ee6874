#!/usr/bin/env python3
"""Run every suite entry, write its outputs under --out/<entry>, print the criteria."""
import argparse
import sys
import time
from pathlib import Path

from fedaudit.experiments import EXPERIMENTS, run_suite
from fedaudit.sim import write_outputs


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("experiments", nargs="*", default=list(EXPERIMENTS))
    args = ap.parse_args()

    failed = []
    for exp in args.experiments:
        start = time.perf_counter()
        report = run_suite(exp, seed=args.seed)
        write_outputs(report, args.out / exp)
        print(f"== {exp} ({time.perf_counter() - start:.1f}s)")
        for c in report["criteria"]:
            print(f"   {'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['value']} {c['op']} {c['threshold']}")
        if not report["passed"]:
            failed.append(exp)
    if failed:
        print("failed:", ", ".join(failed))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
