"""Continuous actions on [0, 1] via a uniform V-interval discretization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ContinuousEnvironment, LoggedDataset, chart_quadrature, midpoints
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .stage1 import InsufficientSamplesError, action_counts
from .stage2 import LearnedPolicy


class EmptyIntervalError(InsufficientSamplesError):
    def __init__(self, interval: int, count: int, min_count: int, num_intervals: int):
        super().__init__(interval, count, min_count)
        self.args = (
            f"interval {interval} of {num_intervals} holds {count} first-split samples (< {min_count}); "
            f"try a smaller V",
        )


@dataclass(frozen=True)
class Discretization:
    """Intervals I_j = [j/V, (j+1)/V] (0-based j) with midpoints (2j+1)/(2V)."""

    num_intervals: int

    def __post_init__(self) -> None:
        if self.num_intervals < 2:
            raise ValueError("need V >= 2")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.num_intervals + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return midpoints(self.num_intervals)

    def index(self, actions: np.ndarray | float) -> np.ndarray:
        return interval_index(actions, self.num_intervals)

    def to_dict(self) -> dict:
        return {"V": self.num_intervals, "edges": self.edges.tolist(), "midpoints": self.midpoints.tolist()}


def interval_index(actions: np.ndarray | float, num_intervals: int) -> np.ndarray:
    """0-based interval of each action; shared endpoints go to the upper interval except a=1."""
    a = np.asarray(actions, dtype=np.float64)
    if np.any((a < 0.0) | (a > 1.0)) or np.any(np.isnan(a)):
        raise ValueError("actions must lie in [0, 1]")
    return np.minimum(np.floor(a * num_intervals).astype(np.int64), num_intervals - 1)


def choose_num_intervals(n: int, alpha: float, d: int, multiplier: float = 1.0) -> int:
    """V = max(2, round(multiplier * n^(4 alpha / (7 (2 alpha + d)))))."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return max(2, int(round(multiplier * n ** (4.0 * alpha / (7.0 * (2.0 * alpha + d))))))


def discretize(data: LoggedDataset, num_intervals: int) -> LoggedDataset:
    """Replace continuous actions by their interval indices."""
    return data.with_actions(interval_index(data.actions, num_intervals))


@dataclass
class DiscretizedPolicy:
    policy: LearnedPolicy
    discretization: Discretization
    fit: PipelineResult | None = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.policy(x)

    def greedy_dose(self, x: np.ndarray) -> np.ndarray:
        """Deterministic action: midpoint of the argmax interval."""
        return self.discretization.midpoints[self.policy.greedy(x)]

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        probs = self.policy(x)
        u = rng.random(probs.shape[0])
        j = np.minimum((u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1), probs.shape[1] - 1)
        return self.discretization.midpoints[j]


def c_dr_learn(
    data: LoggedDataset,
    num_intervals: int,
    d: int,
    config: PipelineConfig,
    rng: np.random.Generator,
) -> DiscretizedPolicy:
    """Discretize the actions, then run the finite-action pipeline with V actions."""
    disc = Discretization(num_intervals)
    binned = discretize(data, num_intervals)
    counts = action_counts(binned.first_stage.actions, num_intervals)
    for j, c in enumerate(counts):
        if c < config.min_count:
            raise EmptyIntervalError(j, int(c), config.min_count, num_intervals)
    result = run_pipeline(binned, num_intervals, d, config, rng)
    return DiscretizedPolicy(result.policy, disc, result)


def _policy_matrix(env: ContinuousEnvironment, policy, t: np.ndarray) -> np.ndarray:
    return np.asarray(policy(env.embedding.embed(t)), dtype=np.float64)


def discretized_value(env: ContinuousEnvironment, policy, panels: int = 256) -> float:
    """Q^(D): interval-averaged rewards weighted by the policy's interval probabilities."""
    t, w = chart_quadrature(env.d)
    total = 0.0
    for start in range(0, t.shape[0], 1024):
        tt = t[start:start + 1024]
        probs = _policy_matrix(env, policy, tt)
        mu_int = env.interval_mean_rewards(tt, probs.shape[1], panels)
        total += float(w[start:start + 1024] @ (mu_int * probs).sum(axis=1))
    return total


def continuous_value(env: ContinuousEnvironment, policy) -> float:
    """Q of a discretized policy: rewards evaluated at the interval midpoints."""
    t, w = chart_quadrature(env.d)
    probs = _policy_matrix(env, policy, t)
    mu = env.mean_rewards(t, np.broadcast_to(midpoints(probs.shape[1]), probs.shape))
    return float(w @ (mu * probs).sum(axis=1))


def discretization_gap_bound(env: ContinuousEnvironment, num_intervals: int) -> float:
    return env.reward.lipschitz_in_action / num_intervals
