"""Regret against the unconstrained oracle and the replicated experiment suites."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .continuous import (
    c_dr_learn,
    choose_num_intervals,
    continuous_value,
    discretization_gap_bound,
    discretized_value,
)
from .env import (
    ContinuousEnvironment,
    EnvironmentConfig,
    FiniteEnvironment,
    SyntheticEnvironment,
    indices_to_policy,
    oracle_value_and_policy,
    true_policy_value,
)
from .nn import MlpNetwork, MlpSpec
from .pipeline import PipelineConfig, run_pipeline
from .stage2 import LearnedPolicy

CORRUPTIONS = ("none", "mu", "e", "both")
SUITES = ("rate-ladder", "dim-sweep", "dr-robustness", "discretization-check")


@dataclass(frozen=True)
class RegretReport:
    reference: str
    reference_value: float
    policy_value: float
    regret: float
    method: str
    standard_error: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def regret(env: SyntheticEnvironment, policy, method: str = "quadrature", m: int = 100_000,
           rng: np.random.Generator | None = None) -> RegretReport:
    """R(pi*, pi) = Q(pi*) - Q(pi) with pi* the unconstrained optimal policy.

    ``policy`` maps covariates to simplex vectors (over actions, or over interval
    midpoints for continuous environments).
    """
    reference_value, _ = oracle_value_and_policy(env)
    if isinstance(env, ContinuousEnvironment) and method == "quadrature":
        value, se = continuous_value(env, policy), None
    else:
        value, se, _ = true_policy_value(env, policy, method, m, rng)
    return RegretReport("unconstrained-oracle", reference_value, value, reference_value - value, method, se)


def oracle_policy(env: FiniteEnvironment):
    """The optimal deterministic policy as a one-hot simplex map."""
    _, choose = oracle_value_and_policy(env)
    return indices_to_policy(choose, env.num_actions)


# ---------------------------------------------------------------------------
# replications


def replication_seed(master_seed: int, cell: int, rep: int) -> np.random.SeedSequence:
    """Counter-based seed for (cell, replication); independent of execution order."""
    return np.random.SeedSequence([int(master_seed), int(cell), int(rep)])


@dataclass(frozen=True)
class Corruption:
    """Deliberately wrong nuisances: ``mu`` replaced by zero, ``e`` by the action-reversed propensities."""

    corrupt: str = "none"
    mu: str = "zero"
    e: str = "reverse"

    def __post_init__(self) -> None:
        if self.corrupt not in CORRUPTIONS:
            raise ValueError(f"corrupt must be one of {CORRUPTIONS}")
        if self.mu != "zero" or self.e not in ("reverse", "uniform"):
            raise ValueError("supported corruptions: mu='zero'; e='reverse' or 'uniform'")

    def overrides(self, env: FiniteEnvironment, floor: float):
        """(mean reward override, propensity override); ``None`` means fit it."""
        if self.corrupt == "none":
            return None, None
        exact_mu = lambda b: env.mean_rewards(b.intrinsic)  # noqa: E731
        exact_e = lambda b: env.propensities(b.intrinsic)  # noqa: E731
        zero_mu = lambda b: np.zeros((len(b), env.num_actions))  # noqa: E731
        if self.e == "reverse":
            wrong_e = lambda b: env.propensities(b.intrinsic)[:, ::-1]  # noqa: E731
            lowest = env.eta
        else:
            wrong_e = lambda b: np.full((len(b), env.num_actions), 1.0 / env.num_actions)  # noqa: E731
            lowest = 1.0 / env.num_actions
        if self.corrupt in ("e", "both") and lowest < floor:
            raise ValueError(f"corrupted propensities reach {lowest:.3g}, below the floor {floor}")
        mu = zero_mu if self.corrupt in ("mu", "both") else exact_mu
        e = wrong_e if self.corrupt in ("e", "both") else exact_e
        return mu, e


@dataclass(frozen=True)
class ReplicationJob:
    env_config: dict
    pipeline: dict
    n: int
    seed: tuple[int, int, int]
    cell: dict
    ambient_dim: int | None = None
    kinds: tuple[str, ...] = ("DR",)
    corruption: str = "none"
    e_corruption: str = "reverse"
    num_intervals: int | None = None
    interval_multiplier: float = 1.0


def run_replication(job: ReplicationJob) -> list[dict]:
    """One fresh dataset, the full pipeline per score kind, regret rows."""
    start = time.perf_counter()
    master, cell_idx, rep = job.seed
    base = {**job.cell, "rep": rep, "seed": f"{master}-{cell_idx}-{rep}"}
    try:
        env = EnvironmentConfig.from_dict(job.env_config).build(job.ambient_dim)
        cfg = PipelineConfig.from_dict(job.pipeline)
        data_ss, fit_ss = replication_seed(*job.seed).spawn(2)
        data = env.draw(job.n, cfg.split_fraction, np.random.default_rng(data_ss))
        rows = []
        if isinstance(env, ContinuousEnvironment):
            v = job.num_intervals or choose_num_intervals(job.n, cfg.alpha, env.d, job.interval_multiplier)
            policy = c_dr_learn(data, v, env.d, cfg, np.random.default_rng(fit_ss))
            rep_ = regret(env, policy)
            rows.append({**base, "estimator": cfg.score_kind, "V": v, "regret": rep_.regret,
                         "policy_value": rep_.policy_value, "reference_value": rep_.reference_value,
                         "greedy_regret": rep_.reference_value - continuous_value(env, _greedy_simplex(policy.policy)),
                         "status": "ok"})
        else:
            mu_o, e_o = Corruption(job.corruption, e=job.e_corruption).overrides(env, cfg.propensity_floor)
            for kind in job.kinds:
                res = run_pipeline(data, env.num_actions, env.d, cfg, np.random.default_rng(fit_ss), mu_o, e_o, kind)
                rep_ = regret(env, res.policy)
                greedy = true_policy_value(env, _greedy_simplex(res.policy)).value
                rows.append({**base, "estimator": kind, "regret": rep_.regret, "policy_value": rep_.policy_value,
                             "reference_value": rep_.reference_value,
                             "greedy_regret": rep_.reference_value - greedy, "status": "ok"})
    except Exception as exc:  # recorded per replication; the cell is then marked incomplete
        rows = [{**base, "estimator": k, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
                for k in job.kinds]
    elapsed = time.perf_counter() - start
    for r in rows:
        r["_runtime"] = elapsed / len(rows)
    return rows


def _greedy_simplex(policy: LearnedPolicy):
    k = policy.network.spec.output_dim
    return indices_to_policy(policy.greedy, k)


def _map(fn: Callable, jobs: Sequence, threads: int) -> list:
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------------------
# results


@dataclass
class ExperimentResult:
    suite: str
    axes: dict
    rows: list[dict]
    summary: dict = field(default_factory=dict)

    def cell_stats(self, keys: Sequence[str]) -> list[dict]:
        groups: dict[tuple, list[dict]] = {}
        for r in self.rows:
            groups.setdefault(tuple(r.get(k) for k in keys), []).append(r)
        out = []
        for key, rows in groups.items():
            vals = np.array([r["regret"] for r in rows if r.get("status") == "ok"])
            out.append({
                **dict(zip(keys, key)),
                "mean_regret": float(vals.mean()) if vals.size else math.nan,
                "std_regret": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                "replications": int(vals.size),
                "failures": len(rows) - int(vals.size),
                "complete": vals.size == len(rows),
                "seeds": [r["seed"] for r in rows],
            })
        return out

    def write(self, out_dir: str | Path, config_hash: str, master_seed: int) -> tuple[Path, Path]:
        """results.csv (deterministic), summary.json, and timings.csv (wall clock, not reproducible)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        columns = ["config_hash", "master_seed"]
        for r in self.rows:
            columns += [k for k in r if not k.startswith("_") and k not in columns]
        csv_path = out / f"{self.suite}_results.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in self.rows:
                rec = {**r, "config_hash": config_hash, "master_seed": master_seed}
                w.writerow([_fmt(rec.get(c, "")) for c in columns])
        with open(out / f"{self.suite}_timings.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["config_hash", "master_seed", "seed", "estimator", "runtime_s"])
            for r in self.rows:
                w.writerow([config_hash, master_seed, r.get("seed"), r.get("estimator", ""),
                            f"{r.get('_runtime', 0.0):.3f}"])
        summary_path = out / f"{self.suite}_summary.json"
        summary = {"suite": self.suite, "config_hash": config_hash, "master_seed": master_seed,
                   "axes": self.axes, **self.summary}
        summary_path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
        return csv_path, summary_path


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def loglog_slope(ns: Iterable[float], means: Iterable[float]) -> float:
    """Least-squares slope of log(mean regret) against log n."""
    x = np.log(np.asarray(list(ns), dtype=np.float64))
    y = np.asarray(list(means), dtype=np.float64)
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        return math.nan
    return float(np.polyfit(x, np.log(y), 1)[0])


def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# suites


def run_rate_ladder(env_config: dict, n_list: Sequence[int], replications: int, pipeline: PipelineConfig,
                    master_seed: int, threads: int = 1) -> ExperimentResult:
    """Mean regret per sample size with the size rules and scaled temperature."""
    n_list = [int(n) for n in n_list]
    if len(n_list) < 3 or not _strictly_decreasing([-n for n in n_list]):
        raise ValueError("n_list must be strictly increasing with at least 3 entries")
    jobs = [ReplicationJob(env_config, pipeline.to_dict(), n, (master_seed, c, r), {"n": n})
            for c, n in enumerate(n_list) for r in range(replications)]
    rows = [row for rows in _map(run_replication, jobs, threads) for row in rows]
    result = ExperimentResult("rate-ladder", {"n": n_list, "replications": replications}, rows)
    cells = result.cell_stats(["n"])
    means = [c["mean_regret"] for c in cells]
    env = EnvironmentConfig.from_dict(env_config).build()
    result.summary = {
        "cells": cells,
        "slope": loglog_slope(n_list, means),
        "strictly_decreasing": _strictly_decreasing(means),
        "reference_exponent": -pipeline.alpha / (2 * pipeline.alpha + env.d),
    }
    return result


def run_dimension_sweep(env_config: dict, ambient_dims: Sequence[int], n: int, replications: int,
                        pipeline: PipelineConfig, master_seed: int, threads: int = 1) -> ExperimentResult:
    """Same intrinsic problem embedded in several ambient dimensions."""
    chart = EnvironmentConfig.from_dict(env_config).build().embedding.chart_dim
    if any(D < chart + 1 for D in ambient_dims):
        raise ValueError(f"every ambient dimension must be >= {chart + 1}")
    jobs = [ReplicationJob(env_config, pipeline.to_dict(), n, (master_seed, c, r), {"D": D}, ambient_dim=D)
            for c, D in enumerate(ambient_dims) for r in range(replications)]
    rows = [row for rows in _map(run_replication, jobs, threads) for row in rows]
    result = ExperimentResult("dim-sweep", {"D": list(ambient_dims), "n": n, "replications": replications}, rows)
    cells = result.cell_stats(["D"])
    means = [c["mean_regret"] for c in cells]
    hashes = {D: EnvironmentConfig.from_dict(env_config).build(D).intrinsic_hash() for D in ambient_dims}
    result.summary = {
        "cells": cells,
        "ratio": max(means) / min(means) if min(means) > 0 else math.inf,
        "intrinsic_hashes": hashes,
        "identical_intrinsic": len(set(hashes.values())) == 1,
    }
    return result


def run_dr_robustness(env_config: dict, n_list: Sequence[int], replications: int, pipeline: PipelineConfig,
                      master_seed: int, corrupt: str = "mu", e_corruption: str = "reverse",
                      threads: int = 1) -> ExperimentResult:
    """DR, DM and IPW policies learned under deliberately wrong nuisances."""
    Corruption(corrupt, e=e_corruption)  # validate early
    jobs = [ReplicationJob(env_config, pipeline.to_dict(), n, (master_seed, c, r), {"n": n, "corrupt": corrupt},
                           kinds=("DR", "DM", "IPW"), corruption=corrupt, e_corruption=e_corruption)
            for c, n in enumerate(n_list) for r in range(replications)]
    rows = [row for rows in _map(run_replication, jobs, threads) for row in rows]
    result = ExperimentResult("dr-robustness", {"n": list(n_list), "corrupt": corrupt, "e_corruption": e_corruption,
                                                "replications": replications}, rows)
    cells = result.cell_stats(["estimator", "n"])
    by_kind = {k: [c["mean_regret"] for c in cells if c["estimator"] == k] for k in ("DR", "DM", "IPW")}
    result.summary = {
        "cells": cells,
        "decreasing": {k: _strictly_decreasing(v) for k, v in by_kind.items()},
    }
    return result


def random_discretized_policy(input_dim: int, num_intervals: int, rng: np.random.Generator,
                              temperature: float = 1.0) -> LearnedPolicy:
    spec = MlpSpec(depth=2, width=16, input_dim=input_dim, output_dim=num_intervals)
    return LearnedPolicy(MlpNetwork.initialize(spec, rng), temperature)


def run_discretization_check(env_config: dict, interval_list: Sequence[int], policies_per_v: int,
                             master_seed: int, tolerance: float = 1e-6) -> ExperimentResult:
    """|Q - Q^(D)| against L_mu / V for random discretized policies."""
    env = EnvironmentConfig.from_dict(env_config).build()
    if not isinstance(env, ContinuousEnvironment):
        raise ValueError("discretization check needs a continuous environment")
    rows = []
    for c, v in enumerate(interval_list):
        for r in range(policies_per_v):
            rng = np.random.default_rng(replication_seed(master_seed, c, r))
            pol = random_discretized_policy(env.ambient_dim, v, rng)
            q, qd = continuous_value(env, pol), discretized_value(env, pol)
            bound = discretization_gap_bound(env, v)
            rows.append({"V": v, "rep": r, "seed": f"{master_seed}-{c}-{r}", "Q": q, "Q_D": qd,
                         "gap": abs(q - qd), "bound": bound, "holds": abs(q - qd) <= bound + tolerance,
                         "status": "ok", "_runtime": 0.0})
    result = ExperimentResult("discretization-check", {"V": list(interval_list), "policies": policies_per_v}, rows)
    result.summary = {"lipschitz": env.reward.lipschitz_in_action, "all_hold": all(r["holds"] for r in rows),
                      "max_gap_over_bound": max(r["gap"] / r["bound"] for r in rows)}
    return result
