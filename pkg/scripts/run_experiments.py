#!/usr/bin/env python3
"""Run every committed experiment config through the command line entry point.

    python3 scripts/run_experiments.py --out results --threads 4
"""

import argparse
import json
import sys
import time
from pathlib import Path

from drmanifold.cli import main

ROOT = Path(__file__).resolve().parents[1]
RUNS = [
    ("pipeline", "sine.toml", None),
    ("pipeline", "dose.toml", None),
    ("experiment", "discretization_check.toml", "discretization-check"),
    ("experiment", "dr_robustness.toml", "dr-robustness"),
    ("experiment", "rate_ladder.toml", "rate-ladder"),
    ("experiment", "dim_sweep.toml", "dim-sweep"),
]


def headline(out: Path, suite: str | None) -> str:
    if suite is None:
        r = json.loads((out / "report.json").read_text())
        return f"regret {r['regret']:.5f} (uniform {r['uniform_regret']:.4f})"
    s = json.loads((out / f"{suite}_summary.json").read_text())
    keys = ("slope", "strictly_decreasing", "ratio", "decreasing", "all_hold", "max_gap_over_bound")
    return ", ".join(f"{k}={s[k]}" for k in keys if k in s)


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="results")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--only", nargs="*", help="config file names to run")
    args = parser.parse_args(argv)
    status = 0
    for command, name, suite in RUNS:
        if args.only and name not in args.only:
            continue
        out = Path(args.out) / Path(name).stem
        cli = [command, "--config", str(ROOT / "configs" / name), "--out", str(out)]
        if args.threads:
            cli += ["--threads", str(args.threads)]
        start = time.perf_counter()
        code = main(cli)
        took = time.perf_counter() - start
        status = status or code
        print(f"{name:<28} exit {code}  {took:7.1f}s  {headline(out, suite) if code == 0 else ''}", flush=True)
    return status


if __name__ == "__main__":
    sys.exit(run())
