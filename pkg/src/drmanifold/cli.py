"""Command line: ``drmanifold {simulate,pipeline,experiment} --config PATH``.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .continuous import c_dr_learn, choose_num_intervals, continuous_value, discretized_value
from .env import ContinuousEnvironment, uniform_policy
from .evaluate import (
    SUITES,
    _greedy_simplex,
    regret,
    run_dimension_sweep,
    run_discretization_check,
    run_dr_robustness,
    run_rate_ladder,
)
from .pipeline import run_pipeline
from .stage2 import LearnedPolicy

log = logging.getLogger("drmanifold")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class StageError(RuntimeError):
    pass


@contextmanager
def stage(name: str):
    try:
        yield
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError(f"[{name}] {type(exc).__name__}: {exc}") from exc


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _stamp(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.hash, "master_seed": cfg.seed}


def _rng(cfg: RunConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, stream]))


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    """Draw one logged dataset; writes dataset.csv and dataset_meta.json."""
    env = cfg.build_environment()
    with stage("simulate"):
        data = env.draw(cfg.n, cfg.pipeline.split_fraction, _rng(cfg, 0))
    cfg.out.mkdir(parents=True, exist_ok=True)
    csv_path, meta_path = cfg.out / "dataset.csv", cfg.out / "dataset_meta.json"
    data.write_csv(csv_path)
    meta = {
        **_stamp(cfg), "n": len(data), "n1": data.split_index, "ambient_dim": env.ambient_dim,
        "intrinsic_dim": env.d, "manifold": env.embedding.kind, "eta": env.eta,
        "reward_bound": env.reward_bound, "intrinsic_hash": env.intrinsic_hash(),
        "actions": "continuous" if isinstance(env, ContinuousEnvironment) else env.num_actions,
    }
    _write_json(meta_path, meta)
    return [csv_path, meta_path]


def _num_intervals(cfg: RunConfig, env: ContinuousEnvironment) -> int:
    block = cfg.discretization or {}
    if block.get("rule", "scaled" if "V" not in block else "fixed") == "fixed":
        if "V" not in block:
            raise ConfigError("discretization.rule = 'fixed' needs V")
        return int(block["V"])
    return choose_num_intervals(cfg.n, cfg.pipeline.alpha, env.d, float(block.get("multiplier", 1.0)))


def cmd_pipeline(cfg: RunConfig) -> list[Path]:
    """Split, fit nuisances, learn the policy, and score it against the oracle."""
    env = cfg.build_environment()
    with stage("simulate"):
        data = env.draw(cfg.n, cfg.pipeline.split_fraction, _rng(cfg, 0))
    cfg.out.mkdir(parents=True, exist_ok=True)
    extra: dict = {}
    if isinstance(env, ContinuousEnvironment):
        v = _num_intervals(cfg, env)
        with stage("pipeline"):
            dpol = c_dr_learn(data, v, env.d, cfg.pipeline, _rng(cfg, 1))
        policy: LearnedPolicy = dpol.policy
        result = dpol.fit
        with stage("evaluate"):
            report = regret(env, policy)
            extra["discretization"] = dpol.discretization.to_dict()
            extra["discretized_value"] = discretized_value(env, policy)
            extra["greedy_regret"] = report.reference_value - continuous_value(env, _greedy_simplex(policy))
            extra["uniform_regret"] = report.reference_value - continuous_value(env, uniform_policy(v))
    else:
        with stage("pipeline"):
            result = run_pipeline(data, env.num_actions, env.d, cfg.pipeline, _rng(cfg, 1))
        policy = result.policy
        with stage("evaluate"):
            report = regret(env, policy)
            extra["greedy_regret"] = regret(env, _greedy_simplex(policy)).regret
            extra["uniform_regret"] = regret(env, uniform_policy(env.num_actions)).regret
    policy_path, report_path = cfg.out / "policy.json", cfg.out / "report.json"
    checkpoint = {**policy.to_dict(), **_stamp(cfg)}
    if "discretization" in extra:
        checkpoint["discretization"] = extra["discretization"]
    _write_json(policy_path, checkpoint)
    _write_json(report_path, {
        **_stamp(cfg), **report.to_dict(), **extra,
        "temperature": result.temperature,
        "specs": {k: vars(s) for k, s in result.specs.items()},
        "diagnostics": result.diagnostics,
        "intrinsic_hash": env.intrinsic_hash(),
    })
    return [policy_path, report_path]


def cmd_experiment(cfg: RunConfig, suite: str | None = None) -> list[Path]:
    exp = dict(cfg.experiment)
    suite = suite or exp.get("suite")
    if suite is None:
        raise ConfigError("no experiment suite given (use --suite or experiment.suite)")
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {SUITES}")
    reps = int(exp.get("replications", 10))
    env_cfg, pipe = cfg.environment, cfg.pipeline
    with stage(suite):
        if suite == "rate-ladder":
            result = run_rate_ladder(env_cfg, exp.get("n_list", [500, 2000, 8000]), reps, pipe, cfg.seed, cfg.threads)
        elif suite == "dim-sweep":
            result = run_dimension_sweep(env_cfg, exp.get("D_list", [3, 10, 30]), int(exp.get("n", cfg.n)), reps,
                                         pipe, cfg.seed, cfg.threads)
        elif suite == "dr-robustness":
            result = run_dr_robustness(env_cfg, exp.get("n_list", [2000, 8000]), reps, pipe, cfg.seed,
                                       exp.get("corrupt", "mu"), exp.get("e_corruption", "reverse"), cfg.threads)
        else:
            result = run_discretization_check(env_cfg, exp.get("V_list", [2, 4, 8, 16]),
                                              int(exp.get("policies_per_V", 5)), cfg.seed)
    return list(result.write(cfg.out, cfg.hash, cfg.seed))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML or JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker processes for replications")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="drmanifold", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="draw a logged dataset")
    sub.add_parser("pipeline", parents=[common], help="run the two-stage learner and report regret")
    exp = sub.add_parser("experiment", parents=[common], help="run an experiment suite")
    exp.add_argument("--suite", choices=SUITES)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out, args.threads)
        if args.command == "simulate":
            paths = cmd_simulate(cfg)
        elif args.command == "pipeline":
            paths = cmd_pipeline(cfg)
        else:
            paths = cmd_experiment(cfg, args.suite)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
