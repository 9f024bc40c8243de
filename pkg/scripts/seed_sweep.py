#!/usr/bin/env python3
"""Repeat the rate ladder under several master seeds to see how often it decreases strictly.

    python3 scripts/seed_sweep.py --seeds 1 2 3 4 5 6
"""

import argparse
from pathlib import Path

import numpy as np

from drmanifold.config import load_config
from drmanifold.evaluate import run_rate_ladder

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(ROOT / "configs" / "rate_ladder.toml"))
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5, 6])
    parser.add_argument("--threads", type=int)
    args = parser.parse_args(argv)

    cfg = load_config(args.config, threads=args.threads)
    exp = cfg.experiment
    table = []
    for seed in [cfg.seed, *args.seeds]:
        res = run_rate_ladder(cfg.environment, exp["n_list"], exp["replications"], cfg.pipeline, seed, cfg.threads)
        means = [c["mean_regret"] for c in res.summary["cells"]]
        table.append(means)
        print(f"seed {seed:>10}: means {np.round(means, 5).tolist()}  slope {res.summary['slope']:+.3f}  "
              f"strictly decreasing {res.summary['strictly_decreasing']}", flush=True)
    table = np.array(table)
    passes = sum(all(a > b for a, b in zip(row, row[1:])) for row in table)
    print(f"pooled means {np.round(table.mean(axis=0), 5).tolist()}; strictly decreasing in {passes}/{len(table)}")


if __name__ == "__main__":
    main()
