"""Doubly robust off-policy learning with ReLU networks on manifold-supported covariates."""

from .config import ConfigError, RunConfig, desk_pipeline, load_config
from .continuous import Discretization, DiscretizedPolicy, c_dr_learn, choose_num_intervals
from .env import (
    ContinuousEnvironment,
    EnvironmentConfig,
    FiniteEnvironment,
    LoggedDataset,
    ManifoldEmbedding,
    sine_environment,
    true_policy_value,
)
from .evaluate import RegretReport, regret
from .nn import MlpNetwork, MlpSpec, ScalingConstants, TrainOptions
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .stage2 import DrScoreMatrix, LearnedPolicy, build_scores

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "RunConfig", "desk_pipeline", "load_config",
    "Discretization", "DiscretizedPolicy", "c_dr_learn", "choose_num_intervals",
    "ContinuousEnvironment", "EnvironmentConfig", "FiniteEnvironment", "LoggedDataset", "ManifoldEmbedding",
    "sine_environment", "true_policy_value",
    "RegretReport", "regret",
    "MlpNetwork", "MlpSpec", "ScalingConstants", "TrainOptions",
    "PipelineConfig", "PipelineResult", "run_pipeline",
    "DrScoreMatrix", "LearnedPolicy", "build_scores",
]
