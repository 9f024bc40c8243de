"""Doubly robust scores and policy learning over temperature-softmax networks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import (
    GradientBundle,
    MlpNetwork,
    MlpSpec,
    NumericError,
    PlateauStopper,
    TrainOptions,
    adam_step,
    iterate_batches,
    softmax_temp,
)

SCORE_KINDS = ("DR", "DM", "IPW", "ORACLE-TILDE")


@dataclass
class DrScoreMatrix:
    scores: np.ndarray
    kind: str
    floored_rows: int = 0

    @property
    def num_actions(self) -> int:
        return self.scores.shape[1]

    def __add__(self, other: "DrScoreMatrix") -> "DrScoreMatrix":
        return DrScoreMatrix(self.scores + other.scores, f"{self.kind}+{other.kind}")

    def write_csv(self, path) -> None:
        k = self.num_actions
        np.savetxt(path, self.scores, delimiter=",", header=",".join(f"gamma_{j}" for j in range(k)),
                   comments="", fmt="%.17g")


def build_scores(
    actions: np.ndarray,
    rewards: np.ndarray,
    mean_rewards: np.ndarray | None,
    propensities: np.ndarray | None,
    kind: str = "DR",
    floor: float = 1e-4,
    clip: float | None = None,
) -> DrScoreMatrix:
    """Per-sample score vectors on the second split.

    Row i is ``(y_i - m_{a_i}) / p_{a_i} * onehot(a_i) + m(x_i)`` where ``m`` and
    ``p`` are the reward and propensity evaluations at x_i (shape (n, |A|)).
    ``DM`` keeps only ``m``; ``IPW`` uses ``m = 0``. ``ORACLE-TILDE`` is the DR
    formula and is meant to be fed the true nuisances. Propensities below
    ``floor`` are raised to it and counted in ``floored_rows``.
    """
    if kind not in SCORE_KINDS:
        raise ValueError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")
    a = np.asarray(actions, dtype=np.int64)
    y = np.asarray(rewards, dtype=np.float64)
    n = a.shape[0]
    rows = np.arange(n)

    if kind == "IPW":
        mean_rewards = np.zeros_like(np.asarray(propensities, dtype=np.float64))
    m = np.asarray(mean_rewards, dtype=np.float64)
    if m.shape[0] != n:
        raise ValueError("reward evaluations do not match the number of samples")
    scores = m.copy()
    floored = 0
    if kind != "DM":
        p = np.asarray(propensities, dtype=np.float64)
        if p.shape != m.shape:
            raise ValueError(f"propensity shape {p.shape} != reward shape {m.shape}")
        p_obs = p[rows, a]
        low = p_obs < floor
        floored = int(low.sum())
        p_obs = np.where(low, floor, p_obs)
        scores[rows, a] += (y - m[rows, a]) / p_obs
    if clip is not None:
        np.clip(scores, -clip, clip, out=scores)
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite score entries")
    return DrScoreMatrix(scores, kind, floored)


@dataclass
class LearnedPolicy:
    network: MlpNetwork
    temperature: float
    trace: list[float] = field(default_factory=list)
    best_trace: list[float] = field(default_factory=list)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.network.forward(np.atleast_2d(x))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return softmax_temp(self.logits(x), self.temperature)

    def with_temperature(self, temperature: float) -> "LearnedPolicy":
        return LearnedPolicy(self.network, temperature, self.trace, self.best_trace)

    def greedy(self, x: np.ndarray) -> np.ndarray:
        """Argmax action per covariate, lowest index on ties; does not depend on H."""
        return np.argmax(self.logits(x), axis=1)

    def to_dict(self) -> dict:
        return {**self.network.to_dict(), "temperature": self.temperature}

    @classmethod
    def from_dict(cls, data: dict) -> "LearnedPolicy":
        return cls(MlpNetwork.from_dict(data), float(data["temperature"]))


def greedy_from_policy(policy: LearnedPolicy):
    return policy.greedy


def policy_objective(policy, covariates: np.ndarray, scores: DrScoreMatrix | np.ndarray) -> float:
    """Empirical mean of <pi(x_i), Gamma_i>."""
    s = scores.scores if isinstance(scores, DrScoreMatrix) else np.asarray(scores)
    probs = policy(covariates)
    if probs.shape != s.shape:
        raise ValueError(f"policy output {probs.shape} does not match scores {s.shape}")
    return float(np.einsum("ij,ij->", probs, s) / s.shape[0])


def policy_loss_and_grad(net: MlpNetwork, temperature: float, covariates: np.ndarray,
                         scores: np.ndarray) -> tuple[float, GradientBundle]:
    """Negated objective and its gradient w.r.t. the network parameters."""
    out, cache = net.forward_cached(np.atleast_2d(covariates))
    probs = softmax_temp(out, temperature)
    n = scores.shape[0]
    inner = (probs * scores).sum(axis=1)
    value = float(inner.mean())
    if not math.isfinite(value):
        raise NumericError("non-finite policy objective")
    # d<p, s>/df = p * (s - <p, s>) / H
    grad_out = -probs * (scores - inner[:, None]) / (temperature * n)
    return -value, net.backward(cache, grad_out)


def annealing_schedule(target: float, epochs: int, start: float | None, fraction: float) -> list[float]:
    """Per-epoch gradient temperatures ending at ``target``."""
    if start is None or start <= target:
        return [target] * epochs
    ramp = max(1, int(round(fraction * epochs)))
    temps = [start * (target / start) ** (k / ramp) for k in range(1, ramp)]
    return (temps + [target] * epochs)[:epochs]


def learn_policy(
    covariates: np.ndarray,
    scores: DrScoreMatrix,
    spec: MlpSpec,
    temperature: float,
    opts: TrainOptions,
    rng: np.random.Generator,
    anneal_from: float | None = None,
    anneal_fraction: float = 0.5,
) -> LearnedPolicy:
    """Maximize the empirical score objective over softmax_H(network) with Adam.

    The final layer starts at zero (uniform policy); the best full-data iterate
    seen (including the start) is returned, always judged at ``temperature``.
    With ``anneal_from`` the gradient temperature decays geometrically from that
    value to ``temperature`` over the first ``anneal_fraction`` of the epochs;
    small temperatures otherwise saturate the softmax after the first steps.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    s = scores.scores
    if spec.output_dim != s.shape[1]:
        raise ValueError(f"policy spec has {spec.output_dim} outputs, scores have {s.shape[1]} columns")
    net = MlpNetwork.initialize(spec, rng)
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = 0.0
    state = opts.adam(net)
    n = s.shape[0]

    schedule = annealing_schedule(temperature, opts.epochs, anneal_from, anneal_fraction)
    stopper = PlateauStopper(opts.patience, opts.tolerance, minimize=False)
    current = policy_objective(LearnedPolicy(net, temperature), covariates, s)
    best, best_net = current, net.copy()
    trace, best_trace = [current], [best]
    for epoch_temp in schedule:
        for idx in iterate_batches(n, opts, rng):
            _, grads = policy_loss_and_grad(net, epoch_temp, covariates[idx], s[idx])
            adam_step(net, grads, state)
        current = policy_objective(LearnedPolicy(net, temperature), covariates, s)
        if not math.isfinite(current):
            raise NumericError(f"policy objective became non-finite after {len(trace)} epochs; trace tail {trace[-5:]}")
        if current > best:
            best, best_net = current, net.copy()
        trace.append(current)
        best_trace.append(best)
        if epoch_temp == temperature and stopper.update(best):
            break
    return LearnedPolicy(best_net, temperature, trace, best_trace)
