"""Command-line entry point: ``python -m fedaudit <command> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_config
from .contract import gas_estimate
from .dataset import make_synthetic, write_csv
from .experiments import EXPERIMENTS, run_suite
from .scoring import UNIT, ScoreMatrix, contract_scores_fixed_point, to_micro
from .sim import Simulation, write_outputs


def _read_matrix(path, micro: bool) -> ScoreMatrix:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    try:
        if micro:
            return ScoreMatrix([[int(v) for v in r] for r in rows])
        return ScoreMatrix([[to_micro(float(v)) for v in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"bad score matrix {path}: {exc}") from exc


def cmd_run(args) -> int:
    cfg = replace(load_config(args.config), seed=args.seed)
    sim = Simulation.build(cfg)
    report = sim.run()
    out = write_outputs(report, args.out, contract=sim.contract)
    s = report["summary"]
    print(f"{cfg.name}: {s['survivors']} survivors, {s['eliminated']} eliminated, "
          f"conserved={s['conserved']} -> {out}")
    return 0


def cmd_suite(args) -> int:
    report = run_suite(args.experiment, seed=args.seed)
    write_outputs(report, args.out)
    for c in report["criteria"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['value']} {c['op']} {c['threshold']}")
    return 0 if report["passed"] else 1


def cmd_score(args) -> int:
    matrix = _read_matrix(args.matrix, args.micro)
    bd = contract_scores_fixed_point(matrix)
    w = csv.writer(sys.stdout)
    w.writerow(["agent", "m", "m_scaled", "d", "d_scaled", "p"])
    fmt = (lambda v: int(v)) if args.micro else (lambda v: f"{int(v) / UNIT:.6f}")
    for k in range(matrix.n):
        w.writerow([k] + [fmt(getattr(bd, f)[k]) for f in ("m", "m_scaled", "d", "d_scaled", "p")])
    return 0


def cmd_gas(args) -> int:
    print(gas_estimate(args.agents, args.rounds))
    return 0


def cmd_gen_data(args) -> int:
    ds = make_synthetic(args.rows, args.seed)
    write_csv(ds, args.out or sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedaudit", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configured experiment")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run a desk-scale experiment and check its criteria")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("score", help="contribution scores for an evaluator-by-target CSV matrix")
    p.add_argument("--matrix", required=True, type=Path)
    p.add_argument("--micro", action="store_true", help="matrix and output in integer micro-units")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gas", help="estimated per-agent gas")
    p.add_argument("--agents", required=True, type=int)
    p.add_argument("--rounds", required=True, type=int)
    p.set_defaults(func=cmd_gas)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    p.add_argument("--rows", required=True, type=int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", type=Path, help="output file (default: stdout)")
    p.set_defaults(func=cmd_gen_data)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

