"""Two-stage doubly robust policy learning on a logged dataset with integer actions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .env import Batch, LoggedDataset
from .nn import MlpSpec, ScalingConstants, TrainOptions, architecture_for_role
from .stage1 import PropensityModel, RewardModelSet, action_counts, fit_propensity, fit_reward_models
from .stage2 import DrScoreMatrix, LearnedPolicy, build_scores, learn_policy

NuisanceFn = Callable[[Batch], np.ndarray]


@dataclass(frozen=True)
class PipelineConfig:
    alpha: float = 1.0
    split_fraction: float = 0.5
    reward_scaling: ScalingConstants = ScalingConstants()
    propensity_scaling: ScalingConstants = ScalingConstants()
    policy_scaling: ScalingConstants = ScalingConstants()
    stage1: TrainOptions = TrainOptions()
    stage2: TrainOptions = TrainOptions()
    # fixed temperature; None means H = multiplier * n^(-2 alpha / (2 alpha + d))
    temperature: float | None = None
    temperature_multiplier: float = 1.0
    anneal_from: float | None = 1.0
    anneal_fraction: float = 0.5
    score_kind: str = "DR"
    propensity_floor: float = 1e-4
    min_count: int = 10
    score_clip: float | None = None

    def temperature_for(self, n: int, d: int) -> float:
        if self.temperature is not None:
            return self.temperature
        return self.temperature_multiplier * n ** (-2.0 * self.alpha / (2.0 * self.alpha + d))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        for key in ("reward_scaling", "propensity_scaling", "policy_scaling"):
            if key in data:
                data[key] = ScalingConstants(**data[key])
        for key in ("stage1", "stage2"):
            if key in data:
                data[key] = TrainOptions(**data[key])
        return cls(**data)


@dataclass
class PipelineResult:
    policy: LearnedPolicy
    scores: DrScoreMatrix
    temperature: float
    specs: dict[str, MlpSpec]
    reward_models: RewardModelSet | None = None
    propensity: PropensityModel | None = None
    diagnostics: dict = field(default_factory=dict)


def overlap_proxy(actions: np.ndarray, num_actions: int) -> float:
    """Smallest empirical action frequency; stands in for eta in the size rules."""
    counts = action_counts(actions, num_actions)
    return float(max(counts.min(), 1) / counts.sum())


def nuisance_specs(n1: int, d: int, eta: float, num_actions: int, input_dim: int,
                   config: PipelineConfig) -> tuple[MlpSpec, MlpSpec]:
    reward = architecture_for_role(n1, d, config.alpha, eta, num_actions, "reward", input_dim,
                                   config.reward_scaling)
    prop = architecture_for_role(n1, d, config.alpha, eta, num_actions, "propensity", input_dim,
                                 config.propensity_scaling)
    return reward, prop


def run_pipeline(
    data: LoggedDataset,
    num_actions: int,
    d: int,
    config: PipelineConfig,
    rng: np.random.Generator,
    mean_reward_override: NuisanceFn | None = None,
    propensity_override: NuisanceFn | None = None,
    score_kind: str | None = None,
) -> PipelineResult:
    """Split -> fit nuisances on S1 -> scores on S2 -> learn the softmax policy.

    Overrides replace the corresponding fitted nuisance by a function of the
    second-split batch (used for oracle or deliberately corrupted nuisances).
    """
    s1, s2 = data.first_stage, data.second_stage
    n, n1 = len(data), len(s1)
    dim = data.covariates.shape[1]
    reward_rng, prop_rng, policy_rng = rng.spawn(3)
    eta = overlap_proxy(s1.actions, num_actions)
    reward_spec, prop_spec = nuisance_specs(n1, d, eta, num_actions, dim, config)
    policy_spec = architecture_for_role(n, d, config.alpha, eta, num_actions, "policy-temp", dim,
                                        config.policy_scaling)
    specs = {"reward": reward_spec, "propensity": prop_spec, "policy": policy_spec}

    reward_models = propensity = None
    if mean_reward_override is None:
        reward_models = fit_reward_models(s1.covariates, s1.actions, s1.rewards, num_actions, reward_spec,
                                          config.stage1, reward_rng, config.min_count)
        mu2 = reward_models.predict(s2.covariates)
    else:
        mu2 = mean_reward_override(s2)
    if propensity_override is None:
        propensity = fit_propensity(s1.covariates, s1.actions, num_actions, prop_spec, config.stage1, prop_rng)
        e2 = propensity.predict(s2.covariates)
    else:
        e2 = propensity_override(s2)

    kind = score_kind or config.score_kind
    scores = build_scores(s2.actions, s2.rewards, mu2, e2, kind, config.propensity_floor, config.score_clip)
    temperature = config.temperature_for(n, d)
    policy = learn_policy(s2.covariates, scores, policy_spec, temperature, config.stage2, policy_rng,
                          config.anneal_from, config.anneal_fraction)
    diagnostics = {
        "n": n, "n1": n1, "n2": len(s2), "eta_proxy": eta, "temperature": temperature,
        "floored_rows": scores.floored_rows, "score_kind": kind,
        "policy_objective": policy.best_trace[-1], "policy_epochs": len(policy.trace) - 1,
    }
    if reward_models is not None:
        diagnostics["reward_fit"] = reward_models.report()
    if propensity is not None:
        diagnostics["propensity_fit"] = propensity.report()
    return PipelineResult(policy, scores, temperature, specs, reward_models, propensity, diagnostics)
