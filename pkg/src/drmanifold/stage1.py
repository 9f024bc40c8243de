"""Nuisance estimation on the first split: per-action reward regressions and a
multinomial-logistic propensity model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import MlpNetwork, MlpSpec, TrainOptions, TrainReport, augmented_logits, fit, softmax_temp


class InsufficientSamplesError(ValueError):
    """An action (or action interval) was observed too rarely to fit its reward model."""

    def __init__(self, action: int, count: int, min_count: int):
        self.action, self.count, self.min_count = action, count, min_count
        super().__init__(
            f"action {action} observed {count} times in the first split (< {min_count}); "
            "use fewer actions/intervals or more samples"
        )


class DegenerateDataError(ValueError):
    """Only one action appears in the first split."""


@dataclass
class RewardModelSet:
    models: list[MlpNetwork]
    counts: list[int]
    reports: list[TrainReport] = field(default_factory=list)

    @property
    def num_actions(self) -> int:
        return len(self.models)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Estimated mean reward of every action, shape (n, |A|)."""
        x = np.atleast_2d(x)
        return np.stack([m.forward(x)[:, 0] for m in self.models], axis=1)

    __call__ = predict

    def report(self) -> dict:
        return {
            "counts": list(self.counts),
            "final_loss": [r.final_loss for r in self.reports],
            "epochs": [r.epochs for r in self.reports],
        }


@dataclass
class PropensityModel:
    network: MlpNetwork
    report_: TrainReport | None = None

    @property
    def num_actions(self) -> int:
        return self.network.spec.output_dim + 1

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Estimated propensity vectors, shape (n, |A|); the last class has logit 0."""
        return softmax_temp(augmented_logits(self.network.forward(np.atleast_2d(x))), 1.0)

    __call__ = predict

    def report(self) -> dict:
        r = self.report_
        return {} if r is None else {"final_loss": r.final_loss, "epochs": r.epochs}


def action_counts(actions: np.ndarray, num_actions: int) -> np.ndarray:
    return np.bincount(np.asarray(actions, dtype=np.int64), minlength=num_actions)


def fit_reward_models(
    covariates: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    num_actions: int,
    spec: MlpSpec,
    opts: TrainOptions,
    rng: np.random.Generator,
    min_count: int = 10,
) -> RewardModelSet:
    """Fit one squared-loss regression per action on that action's own samples.

    Each action gets an independent RNG stream spawned up front, so the fit for
    one action never depends on the samples of another.
    """
    counts = action_counts(actions, num_actions)
    for j, c in enumerate(counts):
        if c < min_count:
            raise InsufficientSamplesError(j, int(c), min_count)
    streams = rng.spawn(num_actions)
    models, reports = [], []
    for j in range(num_actions):
        mask = actions == j
        net = MlpNetwork.initialize(spec, streams[j])
        reports.append(fit(net, covariates[mask], rewards[mask], "squared", opts, streams[j]))
        models.append(net)
    return RewardModelSet(models, [int(c) for c in counts], reports)


def fit_propensity(
    covariates: np.ndarray,
    actions: np.ndarray,
    num_actions: int,
    spec: MlpSpec,
    opts: TrainOptions,
    rng: np.random.Generator,
) -> PropensityModel:
    if num_actions < 2:
        raise ValueError("propensity model needs at least two actions")
    if spec.output_dim != num_actions - 1:
        raise ValueError(f"propensity network needs {num_actions - 1} outputs, spec has {spec.output_dim}")
    if np.unique(actions).size < 2:
        raise DegenerateDataError("only one action observed in the first split")
    net = MlpNetwork.initialize(spec, rng)
    report = fit(net, covariates, actions, "multinomial-logistic", opts, rng)
    return PropensityModel(net, report)
