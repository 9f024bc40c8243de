"""Synthetic bandit environments whose covariates live on a low-dimensional manifold.

Covariates are drawn uniformly on an intrinsic chart ``t`` in [0, 1]^d, mapped
through a canonical embedding (circle, 2-sphere or a planar swiss roll),
zero-padded to the ambient dimension D and rotated by a seeded orthogonal
matrix. Rewards and logging logits are trigonometric polynomials of ``t``, so
every quantity of interest has an exact quadrature oracle on the chart.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .nn import softmax_temp

MANIFOLDS = {"circle": (1, 2), "sphere2": (2, 3), "swiss-roll": (1, 2)}  # kind -> (d, chart dim)
ACTION_GRID = 1024
ORACLE_ACTION_GRID = 4096

_SWISS_LO, _SWISS_HI = 1.5 * math.pi, 4.5 * math.pi

Policy = Callable[[np.ndarray], np.ndarray]


class CapabilityError(RuntimeError):
    """Requested computation is not available for this environment."""


class OverlapError(ValueError):
    """Propensities fall below the configured overlap floor."""


# ---------------------------------------------------------------------------
# smooth test functions


@dataclass(frozen=True)
class TrigPoly:
    """``constant + sum_k a_k cos(2 pi <freq_k, t> + phase_k)`` on the chart."""

    constant: float = 0.0
    terms: tuple[tuple[float, tuple[int, ...], float], ...] = ()

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_2d(t)
        out = np.full(t.shape[0], float(self.constant))
        for amp, freq, phase in self.terms:
            out = out + amp * np.cos(2.0 * np.pi * (t @ np.asarray(freq, dtype=np.float64)) + phase)
        return out

    @property
    def sup_bound(self) -> float:
        return abs(self.constant) + sum(abs(a) for a, _, _ in self.terms)

    @classmethod
    def sine(cls, amplitude: float = 1.0, freq: Sequence[int] = (1,), constant: float = 0.0) -> "TrigPoly":
        return cls(constant, ((amplitude, tuple(freq), -math.pi / 2),))

    @classmethod
    def cosine(cls, amplitude: float = 1.0, freq: Sequence[int] = (1,), constant: float = 0.0) -> "TrigPoly":
        return cls(constant, ((amplitude, tuple(freq), 0.0),))

    def shifted(self, c: float) -> "TrigPoly":
        return TrigPoly(self.constant + c, self.terms)

    def to_config(self) -> dict:
        return {"constant": self.constant, "terms": [[a, list(k), p] for a, k, p in self.terms]}

    @classmethod
    def from_config(cls, cfg: dict | float) -> "TrigPoly":
        if isinstance(cfg, (int, float)):
            return cls(float(cfg))
        terms = tuple((float(a), tuple(int(x) for x in k), float(p)) for a, k, p in cfg.get("terms", []))
        return cls(float(cfg.get("constant", 0.0)), terms)


# ---------------------------------------------------------------------------
# manifold embedding


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


@dataclass(frozen=True, eq=False)
class ManifoldEmbedding:
    kind: str
    ambient_dim: int
    rotation: np.ndarray
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in MANIFOLDS:
            raise ValueError(f"unknown manifold {self.kind!r}; choose from {sorted(MANIFOLDS)}")
        if self.ambient_dim < self.chart_dim:
            raise ValueError(f"{self.kind} needs ambient_dim >= {self.chart_dim}")
        if self.rotation.shape != (self.ambient_dim, self.ambient_dim):
            raise ValueError("rotation must be D x D")
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(self.ambient_dim), atol=1e-10):
            raise ValueError("rotation is not orthogonal")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def create(cls, kind: str, ambient_dim: int, seed: int | None = 0, scale: float = 1.0) -> "ManifoldEmbedding":
        """Seeded random rotation; ``seed=None`` keeps the identity (plain zero padding)."""
        rot = np.eye(ambient_dim) if seed is None else random_rotation(ambient_dim, np.random.default_rng(seed))
        return cls(kind, ambient_dim, rot, scale)

    @property
    def intrinsic_dim(self) -> int:
        return MANIFOLDS[self.kind][0]

    @property
    def chart_dim(self) -> int:
        return MANIFOLDS[self.kind][1]

    @property
    def bound(self) -> float:
        """B with ||x||_inf <= ||x||_2 <= B on the embedded manifold."""
        return self.scale

    def canonical(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_2d(t)
        if self.kind == "circle":
            ang = 2.0 * np.pi * t[:, 0]
            return np.stack([np.cos(ang), np.sin(ang)], axis=1)
        if self.kind == "sphere2":
            # (height, azimuth) chart is area preserving, so uniform t is uniform on the sphere
            z = 2.0 * t[:, 0] - 1.0
            rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
            ang = 2.0 * np.pi * t[:, 1]
            return np.stack([rho * np.cos(ang), rho * np.sin(ang), z], axis=1)
        theta = _SWISS_LO + (_SWISS_HI - _SWISS_LO) * t[:, 0]
        return np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1) / _SWISS_HI

    def embed(self, t: np.ndarray) -> np.ndarray:
        c = self.canonical(t)
        padded = np.zeros((c.shape[0], self.ambient_dim))
        padded[:, : c.shape[1]] = c
        return self.scale * padded @ self.rotation.T

    def to_intrinsic(self, x: np.ndarray) -> np.ndarray:
        """Invert the embedding for points on the manifold."""
        y = (np.atleast_2d(x) @ self.rotation) / self.scale
        if self.kind == "circle":
            return (np.arctan2(y[:, 1], y[:, 0]) / (2.0 * np.pi) % 1.0)[:, None]
        if self.kind == "sphere2":
            u = (np.clip(y[:, 2], -1.0, 1.0) + 1.0) / 2.0
            v = np.arctan2(y[:, 1], y[:, 0]) / (2.0 * np.pi) % 1.0
            return np.stack([u, v], axis=1)
        theta = np.hypot(y[:, 0], y[:, 1]) * _SWISS_HI
        return ((theta - _SWISS_LO) / (_SWISS_HI - _SWISS_LO))[:, None]


# ---------------------------------------------------------------------------
# quadrature on the chart


def simpson_weights(panels: int, lo: float = 0.0, hi: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    if panels < 2 or panels % 2:
        raise ValueError("Simpson's rule needs an even number of panels")
    nodes = np.linspace(lo, hi, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return nodes, w * (hi - lo) / (3.0 * panels)


def chart_quadrature(d: int, panels: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Composite Simpson nodes/weights on [0, 1]^d (2048 panels for d=1, 256^2 for d=2)."""
    if d == 1:
        nodes, w = simpson_weights(panels or 2048)
        return nodes[:, None], w
    if d == 2:
        nodes, w = simpson_weights(panels or 256)
        u, v = np.meshgrid(nodes, nodes, indexing="ij")
        return np.stack([u.ravel(), v.ravel()], axis=1), np.outer(w, w).ravel()
    raise CapabilityError(f"quadrature is only available for d in (1, 2), got d={d}")


class PolicyValue(NamedTuple):
    value: float
    standard_error: float | None
    method: str


# ---------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class Batch:
    intrinsic: np.ndarray
    covariates: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return self.covariates.shape[0]


@dataclass(frozen=True, eq=False)
class LoggedDataset:
    intrinsic: np.ndarray
    covariates: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    split_index: int

    def __post_init__(self) -> None:
        n = self.covariates.shape[0]
        if not (self.intrinsic.shape[0] == self.actions.shape[0] == self.rewards.shape[0] == n):
            raise ValueError("dataset columns have different lengths")
        if not 0 < self.split_index < n:
            raise ValueError(f"split index must satisfy 0 < n1 < n, got n1={self.split_index}, n={n}")

    def __len__(self) -> int:
        return self.covariates.shape[0]

    @property
    def continuous(self) -> bool:
        return self.actions.dtype.kind == "f"

    def _rows(self, rows: slice) -> Batch:
        return Batch(self.intrinsic[rows], self.covariates[rows], self.actions[rows], self.rewards[rows])

    @property
    def first_stage(self) -> Batch:
        return self._rows(slice(None, self.split_index))

    @property
    def second_stage(self) -> Batch:
        return self._rows(slice(self.split_index, None))

    def with_actions(self, actions: np.ndarray) -> "LoggedDataset":
        return LoggedDataset(self.intrinsic, self.covariates, actions, self.rewards, self.split_index)

    def write_csv(self, path: str | Path) -> None:
        dim = self.covariates.shape[1]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow([f"x_{k}" for k in range(dim)] + ["a", "y"])
            for x, a, y in zip(self.covariates, self.actions.tolist(), self.rewards):
                out.writerow([repr(float(v)) for v in x] + [a if isinstance(a, int) else repr(a), repr(float(y))])


# ---------------------------------------------------------------------------
# environments


def _truncated_normal(n: int, rng: np.random.Generator, cut: float = 3.0) -> np.ndarray:
    z = rng.standard_normal(n)
    bad = np.abs(z) > cut
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > cut
    return z


@dataclass(frozen=True, eq=False)
class _Environment:
    embedding: ManifoldEmbedding
    noise_sigma: float
    reward_bound: float
    overlap_floor: float

    @property
    def d(self) -> int:
        return self.embedding.intrinsic_dim

    @property
    def ambient_dim(self) -> int:
        return self.embedding.ambient_dim

    @property
    def margin_scale(self) -> float:
        """The constant M = max{1, M1, -log eta} used to scale margins."""
        return max(1.0, self.reward_bound, -math.log(self.eta))

    def sample_covariates(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if n < 1:
            raise ValueError("n must be >= 1")
        t = rng.random((n, self.d))
        return t, self.embedding.embed(t)

    def _noisy(self, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        y = mean + self.noise_sigma * _truncated_normal(mean.shape[0], rng)
        return np.clip(y, -self.reward_bound, self.reward_bound)

    def _check_grid_overlap(self) -> None:
        if self.eta < self.overlap_floor:
            raise OverlapError(f"minimum propensity {self.eta:.4g} is below the overlap floor {self.overlap_floor}")

    def _grid(self) -> np.ndarray:
        if self.d == 1:
            return np.linspace(0.0, 1.0, 10_001)[:, None]
        g = np.linspace(0.0, 1.0, 101)
        u, v = np.meshgrid(g, g, indexing="ij")
        return np.stack([u.ravel(), v.ravel()], axis=1)


@dataclass(frozen=True, eq=False)
class FiniteEnvironment(_Environment):
    """|A| discrete actions with mean rewards ``reward_fns`` and softmax logging logits."""

    reward_fns: tuple[TrigPoly, ...] = ()
    logging_logits: tuple[TrigPoly, ...] = ()
    margin_params: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if len(self.reward_fns) < 2 or len(self.reward_fns) != len(self.logging_logits):
            raise ValueError("need >= 2 actions with one reward function and one logit per action")
        if self.noise_sigma < 0 or not self.reward_bound > 0:
            raise ValueError("noise_sigma must be >= 0 and reward_bound > 0")
        self._check_grid_overlap()

    @property
    def num_actions(self) -> int:
        return len(self.reward_fns)

    def mean_rewards(self, t: np.ndarray) -> np.ndarray:
        return np.stack([f(t) for f in self.reward_fns], axis=1)

    def propensities(self, t: np.ndarray) -> np.ndarray:
        return softmax_temp(np.stack([g(t) for g in self.logging_logits], axis=1), 1.0)

    @cached_property
    def eta(self) -> float:
        return float(self.propensities(self._grid()).min())

    def draw(self, n: int, split_fraction: float, rng: np.random.Generator) -> LoggedDataset:
        n1 = _split_index(n, split_fraction)
        t, x = self.sample_covariates(n, rng)
        cum = np.cumsum(self.propensities(t), axis=1)
        u = rng.random(n)
        a = np.minimum((u[:, None] >= cum).sum(axis=1), self.num_actions - 1).astype(np.int64)
        mean = self.mean_rewards(t)[np.arange(n), a]
        return LoggedDataset(t, x, a, self._noisy(mean, rng), n1)

    def intrinsic_hash(self) -> str:
        blob = json.dumps(
            {"kind": self.embedding.kind, "rewards": [f.to_config() for f in self.reward_fns],
             "logging": [g.to_config() for g in self.logging_logits]},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ContinuousReward:
    """mu(t, A) = base(t) + slope * A - curvature * (A - center(t))^2 on A in [0, 1]."""

    base: TrigPoly = TrigPoly()
    slope: float = 0.0
    curvature: float = 0.0
    center: TrigPoly = TrigPoly(0.5)

    def __call__(self, t: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """``actions`` has shape (n,) or (n, m); the result matches it."""
        actions = np.asarray(actions, dtype=np.float64)
        t = np.atleast_2d(t)
        b, c = self.base(t), self.center(t)
        if actions.ndim == 2:
            b, c = b[:, None], c[:, None]
        return b + self.slope * actions - self.curvature * (actions - c) ** 2

    @property
    def sup_bound(self) -> float:
        reach = max(abs(self.center.constant) + sum(abs(a) for a, _, _ in self.center.terms), 1.0) + 1.0
        return self.base.sup_bound + abs(self.slope) + abs(self.curvature) * reach**2

    @property
    def lipschitz_in_action(self) -> float:
        """Upper bound on sup_x |d mu / dA| over [0, 1]."""
        c_lo = self.center.constant - sum(abs(a) for a, _, _ in self.center.terms)
        c_hi = self.center.constant + sum(abs(a) for a, _, _ in self.center.terms)
        dist = max(abs(1.0 - c_lo), abs(c_hi), abs(c_lo), abs(1.0 - c_hi))
        return abs(self.slope) + 2.0 * abs(self.curvature) * dist

    @property
    def unimodal(self) -> bool:
        return self.curvature > 0 or self.slope != 0

    def to_config(self) -> dict:
        return {"base": self.base.to_config(), "slope": self.slope, "curvature": self.curvature,
                "center": self.center.to_config()}

    @classmethod
    def from_config(cls, cfg: dict) -> "ContinuousReward":
        return cls(TrigPoly.from_config(cfg.get("base", 0.0)), float(cfg.get("slope", 0.0)),
                   float(cfg.get("curvature", 0.0)), TrigPoly.from_config(cfg.get("center", 0.5)))


@dataclass(frozen=True, eq=False)
class ContinuousEnvironment(_Environment):
    """Actions in [0, 1]; logging density ``eta + (1-eta) * exp(tilt(t) (A - 1/2)) / Z``.

    The density is piecewise linear between the nodes of a 1024-point action grid,
    so it integrates to one exactly and never drops below ``eta``.
    """

    reward: ContinuousReward = ContinuousReward()
    logging_tilt: TrigPoly = TrigPoly()
    overlap: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.overlap < 1:
            raise ValueError("overlap must lie in (0, 1)")
        if self.noise_sigma < 0 or not self.reward_bound > 0:
            raise ValueError("noise_sigma must be >= 0 and reward_bound > 0")
        self._check_grid_overlap()

    @property
    def eta(self) -> float:
        return self.overlap

    @cached_property
    def action_grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, ACTION_GRID)

    def density_grid(self, t: np.ndarray) -> np.ndarray:
        """Logging density at the action-grid nodes, shape (n, 1024)."""
        raw = np.exp(self.logging_tilt(t)[:, None] * (self.action_grid[None, :] - 0.5))
        h = 1.0 / (ACTION_GRID - 1)
        mass = h * (raw.sum(axis=1) - 0.5 * (raw[:, 0] + raw[:, -1]))
        return self.overlap + (1.0 - self.overlap) * raw / mass[:, None]

    def density(self, t: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Piecewise-linear density at arbitrary actions of shape (n,) or (n, m)."""
        dens = self.density_grid(t)
        a = np.asarray(actions, dtype=np.float64)
        flat = a if a.ndim == 2 else a[:, None]
        pos = np.clip(flat, 0.0, 1.0) * (ACTION_GRID - 1)
        k = np.minimum(pos.astype(np.int64), ACTION_GRID - 2)
        frac = pos - k
        lo = np.take_along_axis(dens, k, axis=1)
        hi = np.take_along_axis(dens, k + 1, axis=1)
        out = lo + frac * (hi - lo)
        return out if a.ndim == 2 else out[:, 0]

    def cdf(self, t: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Exact CDF of the piecewise-linear density, actions of shape (n, m)."""
        dens = self.density_grid(t)
        h = 1.0 / (ACTION_GRID - 1)
        cum = np.concatenate([np.zeros((dens.shape[0], 1)),
                              np.cumsum(0.5 * h * (dens[:, 1:] + dens[:, :-1]), axis=1)], axis=1)
        pos = np.clip(np.asarray(actions, dtype=np.float64), 0.0, 1.0) * (ACTION_GRID - 1)
        k = np.minimum(pos.astype(np.int64), ACTION_GRID - 2)
        delta = (pos - k) * h
        lo = np.take_along_axis(dens, k, axis=1)
        hi = np.take_along_axis(dens, k + 1, axis=1)
        slope = (hi - lo) / h
        return np.take_along_axis(cum, k, axis=1) + lo * delta + 0.5 * slope * delta**2

    def interval_propensities(self, t: np.ndarray, num_intervals: int) -> np.ndarray:
        edges = np.linspace(0.0, 1.0, num_intervals + 1)
        c = self.cdf(t, np.broadcast_to(edges, (np.atleast_2d(t).shape[0], edges.size)))
        return np.diff(c, axis=1)

    def sample_actions(self, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF draw from each row's piecewise-linear density."""
        dens = self.density_grid(t)
        n = dens.shape[0]
        h = 1.0 / (ACTION_GRID - 1)
        cum = np.concatenate([np.zeros((n, 1)), np.cumsum(0.5 * h * (dens[:, 1:] + dens[:, :-1]), axis=1)], axis=1)
        u = rng.random(n) * cum[:, -1]
        k = np.minimum((cum[:, 1:-1] <= u[:, None]).sum(axis=1), ACTION_GRID - 2)
        rows = np.arange(n)
        f0 = dens[rows, k]
        slope = (dens[rows, k + 1] - f0) / h
        rem = u - cum[rows, k]
        # solve f0 * delta + slope * delta^2 / 2 = rem for delta in [0, h]
        disc = np.sqrt(np.maximum(f0 * f0 + 2.0 * slope * rem, 0.0))
        delta = np.where(np.abs(slope) > 1e-12, 2.0 * rem / (f0 + disc), rem / f0)
        return np.clip(k * h + np.clip(delta, 0.0, h), 0.0, 1.0)

    def draw(self, n: int, split_fraction: float, rng: np.random.Generator) -> LoggedDataset:
        n1 = _split_index(n, split_fraction)
        t, x = self.sample_covariates(n, rng)
        a = self.sample_actions(t, rng)
        return LoggedDataset(t, x, a, self._noisy(self.reward(t, a), rng), n1)

    def mean_rewards(self, t: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self.reward(t, actions)

    def interval_mean_rewards(self, t: np.ndarray, num_intervals: int, panels: int = 256) -> np.ndarray:
        """mu_I(t) = int_I mu e dA / int_I e dA with Simpson's rule on each interval."""
        t = np.atleast_2d(t)
        out = np.empty((t.shape[0], num_intervals))
        for j in range(num_intervals):
            nodes, w = simpson_weights(panels, j / num_intervals, (j + 1) / num_intervals)
            grid = np.broadcast_to(nodes, (t.shape[0], nodes.size))
            e = self.density(t, grid)
            out[:, j] = (self.reward(t, grid) * e) @ w / (e @ w)
        return out

    def intrinsic_hash(self) -> str:
        blob = json.dumps({"kind": self.embedding.kind, "reward": self.reward.to_config(),
                           "tilt": self.logging_tilt.to_config(), "overlap": self.overlap}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


SyntheticEnvironment = FiniteEnvironment | ContinuousEnvironment


def _split_index(n: int, split_fraction: float) -> int:
    if n < 4:
        raise ValueError("need at least 4 samples")
    if not 0 < split_fraction < 1:
        raise ValueError("split_fraction must lie in (0, 1)")
    return min(max(int(round(split_fraction * n)), 1), n - 1)


def draw_logged_dataset(env: SyntheticEnvironment, n: int, split_fraction: float,
                        rng: np.random.Generator) -> LoggedDataset:
    return env.draw(n, split_fraction, rng)


# ---------------------------------------------------------------------------
# value oracles


def midpoints(num_intervals: int) -> np.ndarray:
    return (2.0 * np.arange(1, num_intervals + 1) - 1.0) / (2.0 * num_intervals)


def _per_covariate_reward(env: SyntheticEnvironment, policy: Policy, t: np.ndarray, x: np.ndarray) -> np.ndarray:
    probs = np.asarray(policy(x), dtype=np.float64)
    if isinstance(env, FiniteEnvironment):
        if probs.shape != (t.shape[0], env.num_actions):
            raise ValueError(f"policy output shape {probs.shape} does not match {env.num_actions} actions")
        mu = env.mean_rewards(t)
    else:
        mu = env.mean_rewards(t, np.broadcast_to(midpoints(probs.shape[1]), probs.shape))
    return (mu * probs).sum(axis=1)


def true_policy_value(
    env: SyntheticEnvironment,
    policy: Policy,
    method: str = "quadrature",
    m: int = 100_000,
    rng: np.random.Generator | None = None,
    panels: int | None = None,
) -> PolicyValue:
    """Q(pi): expected reward of a policy mapping covariates to simplex vectors.

    For continuous environments the policy's V outputs are probabilities of the
    V interval midpoints.
    """
    if method == "quadrature":
        t, w = chart_quadrature(env.d, panels)
        return PolicyValue(float(w @ _per_covariate_reward(env, policy, t, env.embedding.embed(t))), None, method)
    if method == "monte-carlo":
        rng = rng if rng is not None else np.random.default_rng()
        t, x = env.sample_covariates(m, rng)
        r = _per_covariate_reward(env, policy, t, x)
        return PolicyValue(float(r.mean()), float(r.std(ddof=1) / math.sqrt(m)), method)
    raise ValueError(f"unknown method {method!r}")


def oracle_value_and_policy(env: SyntheticEnvironment) -> tuple[float, Callable[[np.ndarray], np.ndarray]]:
    """Value of the unconstrained optimal policy and the policy itself.

    Finite actions: argmax action index (lowest index on ties). Continuous:
    argmax over a 4096-point action grid.
    """
    t, w = chart_quadrature(env.d)
    if isinstance(env, FiniteEnvironment):
        value = float(w @ env.mean_rewards(t).max(axis=1))

        def best_action(x: np.ndarray) -> np.ndarray:
            return np.argmax(env.mean_rewards(env.embedding.to_intrinsic(x)), axis=1)

        return value, best_action

    if not env.reward.unimodal:
        raise CapabilityError("continuous oracle requires a reward that is unimodal in the action")
    grid = np.linspace(0.0, 1.0, ORACLE_ACTION_GRID)
    best = np.empty(t.shape[0])
    for start in range(0, t.shape[0], 512):
        rows = slice(start, start + 512)
        best[rows] = env.mean_rewards(t[rows], np.broadcast_to(grid, (t[rows].shape[0], grid.size))).max(axis=1)
    value = float(w @ best)

    def best_dose(x: np.ndarray) -> np.ndarray:
        tt = env.embedding.to_intrinsic(x)
        mu = env.mean_rewards(tt, np.broadcast_to(grid, (tt.shape[0], grid.size)))
        return grid[np.argmax(mu, axis=1)]

    return value, best_dose


def one_hot_policy(action: int, num_actions: int) -> Policy:
    def policy(x: np.ndarray) -> np.ndarray:
        out = np.zeros((np.atleast_2d(x).shape[0], num_actions))
        out[:, action] = 1.0
        return out
    return policy


def uniform_policy(num_actions: int) -> Policy:
    def policy(x: np.ndarray) -> np.ndarray:
        return np.full((np.atleast_2d(x).shape[0], num_actions), 1.0 / num_actions)
    return policy


def indices_to_policy(choose: Callable[[np.ndarray], np.ndarray], num_actions: int) -> Policy:
    """Turn a deterministic action-index map into a one-hot simplex policy."""
    def policy(x: np.ndarray) -> np.ndarray:
        idx = np.asarray(choose(x), dtype=np.int64)
        out = np.zeros((idx.shape[0], num_actions))
        out[np.arange(idx.shape[0]), idx] = 1.0
        return out
    return policy


@dataclass(frozen=True)
class MarginEstimate:
    t: float
    probability: float
    standard_error: float


def margin_diagnostic(env: FiniteEnvironment, t_grid: Sequence[float], m: int,
                      rng: np.random.Generator, scale: float | None = None) -> list[MarginEstimate]:
    """Monte Carlo P[best - runner-up mean reward <= M t] for each t.

    ``scale`` overrides M (defaults to ``env.margin_scale``).
    """
    if m < 1000:
        raise ValueError("margin diagnostic needs m >= 1000")
    scale = env.margin_scale if scale is None else scale
    t, _ = env.sample_covariates(m, rng)
    mu = np.sort(env.mean_rewards(t), axis=1)
    gap = mu[:, -1] - mu[:, -2]
    out = []
    for tt in t_grid:
        p = float(np.mean(gap <= scale * tt))
        out.append(MarginEstimate(float(tt), p, math.sqrt(max(p * (1 - p), 1e-300) / m)))
    return out


# ---------------------------------------------------------------------------
# construction from configuration


@dataclass(frozen=True)
class EnvironmentConfig:
    kind: str = "circle"
    ambient_dim: int = 10
    rotation_seed: int | None = 0
    scale: float = 1.0
    continuous: bool = False
    noise_sigma: float = 0.5
    reward_bound: float | None = None
    overlap_floor: float = 0.05
    rewards: tuple = ()
    logging: tuple = ()
    continuous_reward: dict = field(default_factory=dict)
    logging_tilt: dict | float = 0.0
    overlap: float = 0.5

    @classmethod
    def from_dict(cls, data: dict) -> "EnvironmentConfig":
        data = dict(data)
        if "d" in data:
            d = data.pop("d")
            if d != MANIFOLDS[data.get("kind", "circle")][0]:
                raise ValueError(f"manifold {data.get('kind', 'circle')} has intrinsic dimension "
                                 f"{MANIFOLDS[data.get('kind', 'circle')][0]}, not {d}")
        if "num_actions" in data:
            k = data.pop("num_actions")
            if data.get("rewards") and len(data["rewards"]) != k:
                raise ValueError("num_actions disagrees with the number of reward functions")
        for key in ("rewards", "logging"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def build(self, ambient_dim: int | None = None) -> SyntheticEnvironment:
        emb = ManifoldEmbedding.create(self.kind, ambient_dim or self.ambient_dim, self.rotation_seed, self.scale)
        if self.continuous:
            reward = ContinuousReward.from_config(self.continuous_reward)
            bound = self.reward_bound or reward.sup_bound + 3.0 * self.noise_sigma or 1.0
            return ContinuousEnvironment(emb, self.noise_sigma, bound, self.overlap_floor, reward,
                                         TrigPoly.from_config(self.logging_tilt), self.overlap)
        rewards = tuple(TrigPoly.from_config(c) for c in self.rewards)
        logits = tuple(TrigPoly.from_config(c) for c in self.logging) or tuple(TrigPoly() for _ in rewards)
        bound = self.reward_bound or max(f.sup_bound for f in rewards) + 3.0 * self.noise_sigma or 1.0
        return FiniteEnvironment(emb, self.noise_sigma, bound, self.overlap_floor, rewards, logits)


def sine_environment(ambient_dim: int = 10, rotation_seed: int | None = 0, noise_sigma: float = 0.5,
                     logging_amplitude: float = 0.5, shift: float = 0.0) -> FiniteEnvironment:
    """Two actions on the circle: mu_1 = sin(2 pi t), mu_2 = -sin(2 pi t), optionally shifted."""
    return EnvironmentConfig(**sine_environment_config(ambient_dim, rotation_seed, noise_sigma,
                                                       logging_amplitude, shift)).build()  # type: ignore[return-value]


def sine_environment_config(ambient_dim: int = 10, rotation_seed: int | None = 0, noise_sigma: float = 0.5,
                            logging_amplitude: float = 0.5, shift: float = 0.0) -> dict:
    up = TrigPoly.sine(1.0, constant=shift)
    down = TrigPoly.sine(-1.0, constant=shift)
    return {
        "kind": "circle",
        "ambient_dim": ambient_dim,
        "rotation_seed": rotation_seed,
        "noise_sigma": noise_sigma,
        "rewards": (up.to_config(), down.to_config()),
        "logging": (TrigPoly.cosine(logging_amplitude).to_config(), TrigPoly().to_config()),
    }
