"""Dense ReLU networks with hand-written backpropagation and Adam.

Networks follow the bounded class used throughout the package: ``depth``
affine layers, hidden width ``width``, optional max-abs bound on every
weight/bias entry, and an optional hard clamp on the outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

LOSS_KINDS = ("squared", "multinomial-logistic")
ROLES = ("reward", "propensity", "policy", "policy-temp")


class ShapeError(ValueError):
    """Array shapes do not agree with a network spec."""


class NumericError(FloatingPointError):
    """A loss or objective became non-finite."""


@dataclass(frozen=True)
class MlpSpec:
    depth: int
    width: int
    input_dim: int
    output_dim: int
    weight_bound: float | None = None
    output_bound: float | None = None
    # recorded only; nothing prunes towards it
    sparsity_budget: int | None = None

    def __post_init__(self) -> None:
        for name in ("depth", "width", "input_dim", "output_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.weight_bound is not None and not self.weight_bound > 0:
            raise ValueError("weight_bound must be positive when given")
        if self.output_bound is not None and not self.output_bound > 0:
            raise ValueError("output_bound must be positive when given")
        if self.sparsity_budget is not None and self.sparsity_budget < 1:
            raise ValueError("sparsity_budget must be positive when given")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.width] * (self.depth - 1) + [self.output_dim]

    def replace(self, **changes) -> "MlpSpec":
        return MlpSpec(**{**asdict(self), **changes})


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


@dataclass
class GradientBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.arrays())


@dataclass
class MlpNetwork:
    """Parameters of one ReLU network; ``weights[i]`` has shape (out, in)."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        sizes = self.spec.layer_sizes
        if len(self.weights) != self.spec.depth or len(self.biases) != self.spec.depth:
            raise ShapeError("number of layers does not match spec.depth")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ShapeError(
                    f"layer {i}: expected W{(sizes[i + 1], sizes[i])}, b({sizes[i + 1]},), "
                    f"got W{w.shape}, b{b.shape}"
                )

    @classmethod
    def initialize(cls, spec: MlpSpec, rng: np.random.Generator) -> "MlpNetwork":
        """He-scaled uniform weights, zero biases, projected into the weight bound."""
        sizes = spec.layer_sizes
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        net = cls(spec, weights, biases)
        net.project()
        return net

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "MlpNetwork":
        sizes = spec.layer_sizes
        return cls(
            spec,
            [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
            [np.zeros(o) for o in sizes[1:]],
        )

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def project(self) -> None:
        """Clamp every entry into [-kappa, kappa] in place (no-op without a bound)."""
        kappa = self.spec.weight_bound
        if kappa is None:
            return
        for p in self.parameters():
            np.clip(p, -kappa, kappa, out=p)

    def num_nonzero(self) -> int:
        return int(sum(np.count_nonzero(p) for p in self.parameters()))

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.spec.input_dim:
            raise ShapeError(f"expected input with last dim {self.spec.input_dim}, got shape {x.shape}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate on one input vector or a batch of row vectors."""
        x = self._check_input(x)
        out, _ = self.forward_cached(np.atleast_2d(x))
        return out[0] if x.ndim == 1 else out

    __call__ = forward

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        # cache holds the input to every layer plus the final pre-clamp output
        cache = [x]
        h = x
        last = self.spec.depth - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = relu(z) if i < last else z
            cache.append(h)
        r = self.spec.output_bound
        out = h if r is None else np.clip(h, -r, r)
        return out, cache

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray) -> GradientBundle:
        """Gradients of a scalar loss given its derivative w.r.t. the (clamped) output."""
        g = grad_out
        r = self.spec.output_bound
        if r is not None:
            pre = cache[-1]
            g = g * ((pre > -r) & (pre < r))
        dws: list[np.ndarray] = [None] * self.spec.depth  # type: ignore[list-item]
        dbs: list[np.ndarray] = [None] * self.spec.depth  # type: ignore[list-item]
        for i in range(self.spec.depth - 1, -1, -1):
            h_in = cache[i]
            dws[i] = g.T @ h_in
            dbs[i] = g.sum(axis=0)
            if i > 0:
                # cache[i] is ReLU output, positive exactly where the pre-activation was
                g = (g @ self.weights[i]) * (h_in > 0)
        return GradientBundle(dws, dbs)

    def to_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpNetwork":
        spec = MlpSpec(**data["spec"])
        return cls(
            spec,
            [np.asarray(w, dtype=np.float64).reshape(o, i)
             for w, i, o in zip(data["weights"], spec.layer_sizes[:-1], spec.layer_sizes[1:])],
            [np.asarray(b, dtype=np.float64) for b in data["biases"]],
        )

    def save(self, path: str | Path, **extra) -> None:
        Path(path).write_text(json.dumps({**self.to_dict(), **extra}, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "MlpNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _weighted(weights: np.ndarray | None, n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("sample weights must be nonnegative with positive sum")
    return w / w.sum()


def log_sum_exp(z: np.ndarray) -> np.ndarray:
    top = z.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(z - top).sum(axis=1, keepdims=True)))[:, 0]


def augmented_logits(g: np.ndarray) -> np.ndarray:
    """Append the pinned zero logit of the last class."""
    return np.concatenate([g, np.zeros((g.shape[0], 1))], axis=1)


def loss_and_grad(
    net: MlpNetwork,
    inputs: np.ndarray,
    targets: np.ndarray,
    kind: str = "squared",
    weights: np.ndarray | None = None,
) -> tuple[float, GradientBundle]:
    """Weighted mean loss over a batch and its exact parameter gradient.

    ``squared`` sums squared errors over output coordinates. ``multinomial-logistic``
    treats the network outputs as the first |A|-1 logits with the last logit pinned
    at zero; ``targets`` are then integer action indices in ``[0, output_dim]``.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if inputs.shape[1] != net.spec.input_dim:
        raise ShapeError(f"input dim {inputs.shape[1]} != {net.spec.input_dim}")
    w = _weighted(weights, n)
    out, cache = net.forward_cached(inputs)

    if kind == "squared":
        y = np.asarray(targets, dtype=np.float64).reshape(n, -1)
        if y.shape[1] != net.spec.output_dim:
            raise ShapeError("target dim does not match output_dim")
        resid = out - y
        loss = float(w @ (resid**2).sum(axis=1))
        grad_out = 2.0 * w[:, None] * resid
    elif kind == "multinomial-logistic":
        a = np.asarray(targets).astype(np.int64).reshape(n)
        k = net.spec.output_dim + 1
        if a.min() < 0 or a.max() >= k:
            raise ShapeError(f"action index outside [0, {k})")
        z = augmented_logits(out)
        lse = log_sum_exp(z)
        loss = float(w @ (lse - z[np.arange(n), a]))
        probs = np.exp(z - lse[:, None])
        probs[np.arange(n), a] -= 1.0
        grad_out = w[:, None] * probs[:, :-1]
    else:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")

    if not math.isfinite(loss):
        raise NumericError(
            f"non-finite {kind} loss; max|output|={np.nanmax(np.abs(out)):.3g}, "
            f"max|param|={max(float(np.max(np.abs(p))) for p in net.parameters()):.3g}"
        )
    return loss, net.backward(cache, grad_out)


def softmax_temp(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise softmax of ``logits / temperature`` with max subtraction."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_network(cls, net: MlpNetwork, **hyper) -> "AdamState":
        params = net.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(net: MlpNetwork, grads: GradientBundle, state: AdamState) -> tuple[MlpNetwork, AdamState]:
    """One bias-corrected Adam update followed by the weight-bound projection.

    Updates ``net`` and ``state`` in place and returns both.
    """
    params = net.parameters()
    g_list = grads.arrays()
    if len(g_list) != len(params) or len(state.first_moment) != len(params):
        raise ShapeError("gradient/optimizer state does not match network")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for p, g, m, v in zip(params, g_list, state.first_moment, state.second_moment):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"shape mismatch {g.shape} vs {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
    net.project()
    return net, state


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 300
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 256
    full_batch_limit: int = 4096
    patience: int = 20
    tolerance: float = 1e-6

    def adam(self, net: MlpNetwork) -> AdamState:
        return AdamState.for_network(
            net, learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon
        )


def iterate_batches(n: int, opts: TrainOptions, rng: np.random.Generator) -> Iterator[np.ndarray | slice]:
    """Indices for one epoch: one full batch when small, else shuffled minibatches."""
    if n <= opts.full_batch_limit:
        yield slice(None)
        return
    order = rng.permutation(n)
    for start in range(0, n, opts.batch_size):
        yield order[start:start + opts.batch_size]


class PlateauStopper:
    """Signals a stop once the best value fails to improve by ``tolerance`` (relative) for ``patience`` epochs."""

    def __init__(self, patience: int, tolerance: float, minimize: bool = True):
        self.patience = patience
        self.tolerance = tolerance
        self.sign = 1.0 if minimize else -1.0
        self.best = math.inf
        self.stale = 0

    def update(self, value: float) -> bool:
        v = self.sign * value
        if v < self.best - self.tolerance * max(abs(self.best), 1e-12) or not math.isfinite(self.best):
            self.best = v
            self.stale = 0
        else:
            self.stale += 1
        return self.patience > 0 and self.stale >= self.patience


@dataclass
class TrainReport:
    final_loss: float
    epochs: int
    losses: list[float] = field(default_factory=list)


def fit(
    net: MlpNetwork,
    inputs: np.ndarray,
    targets: np.ndarray,
    kind: str,
    opts: TrainOptions,
    rng: np.random.Generator,
) -> TrainReport:
    """Minimize the mean ``kind`` loss with Adam; trains ``net`` in place."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets)
    n = inputs.shape[0]
    state = opts.adam(net)
    stopper = PlateauStopper(opts.patience, opts.tolerance)
    losses: list[float] = []
    for _ in range(opts.epochs):
        total = 0.0
        for idx in iterate_batches(n, opts, rng):
            xb, yb = inputs[idx], targets[idx]
            loss, grads = loss_and_grad(net, xb, yb, kind)
            adam_step(net, grads, state)
            total += loss * xb.shape[0]
        losses.append(total / n)
        if stopper.update(losses[-1]):
            break
    final, _ = loss_and_grad(net, inputs, targets, kind)
    return TrainReport(final, len(losses), losses)


@dataclass(frozen=True)
class ScalingConstants:
    """Multipliers standing in for the unspecified constants of the size rules."""

    depth: float = 1.0
    width: float = 1.0
    weight_bound: float | None = None
    output_bound: float | None = None


def architecture_for_role(
    n: int,
    d: int,
    alpha: float,
    eta: float,
    num_actions: int,
    role: str,
    input_dim: int,
    constants: ScalingConstants = ScalingConstants(),
) -> MlpSpec:
    """Network size from the sample-size scaling rules.

    reward:      depth ~ log(eta n), width ~ (eta n)^(d/(2a+d)), one output
    propensity:  depth ~ log n,      width ~ n^(d/(2a+d)),      |A|-1 outputs
    policy(-temp): depth ~ log n,    width ~ |A| n^(d/(2a+d)),  |A| outputs

    ``n`` is the sample count the role is trained on (n1 for nuisances, n for
    the policy). For the plain softmax policy class ``alpha`` plays the role of
    the policy smoothness index.
    """
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    if not alpha >= 1:
        raise ValueError(f"smoothness alpha must be >= 1, got {alpha}")
    if not 0 < eta <= 1:
        raise ValueError(f"overlap eta must lie in (0, 1], got {eta}")
    if num_actions < 2:
        raise ValueError("need at least two actions")
    if not (constants.depth > 0 and constants.width > 0):
        raise ValueError("depth and width multipliers must be positive")
    exponent = d / (2 * alpha + d)
    if role == "reward":
        base, out_dim, scale = eta * n, 1, 1
    elif role == "propensity":
        base, out_dim, scale = float(n), num_actions - 1, 1
    elif role in ("policy", "policy-temp"):
        base, out_dim, scale = float(n), num_actions, num_actions
    else:
        raise ValueError(f"unknown role {role!r}; expected one of {ROLES}")
    log_base = math.log(max(base, math.e))
    width_raw = constants.width * scale * base**exponent
    return MlpSpec(
        depth=max(1, math.ceil(constants.depth * log_base)),
        width=max(1, math.ceil(width_raw)),
        input_dim=input_dim,
        output_dim=out_dim,
        weight_bound=constants.weight_bound,
        output_bound=constants.output_bound,
        sparsity_budget=max(1, math.ceil(width_raw * log_base)),
    )


def stack_parameters(nets: Sequence[MlpNetwork]) -> np.ndarray:
    """Flatten parameters of several networks; handy for bitwise comparisons."""
    return np.concatenate([p.ravel() for net in nets for p in net.parameters()])
