"""Run configuration: TOML/JSON loading, schema validation, environment presets."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .env import EnvironmentConfig, TrigPoly, sine_environment_config
from .pipeline import PipelineConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


def load_schema() -> dict:
    return json.loads(resources.files("drmanifold").joinpath("config_schema.json").read_text())


def preset_environment(name: str, **overrides) -> dict:
    """Environment keyword dict for a named preset, with overrides applied."""
    if name == "sine":
        keys = ("ambient_dim", "rotation_seed", "noise_sigma", "logging_amplitude", "shift")
        cfg = sine_environment_config(**{k: overrides.pop(k) for k in keys if k in overrides})
    elif name == "quadratic-dose":
        cfg = {
            "kind": "circle", "ambient_dim": 10, "continuous": True, "noise_sigma": 0.2,
            "continuous_reward": {
                "base": TrigPoly.cosine(0.5).to_config(), "curvature": 1.0,
                "center": TrigPoly.sine(0.3, constant=0.5).to_config(),
            },
            "logging_tilt": TrigPoly.cosine(1.0).to_config(),
            "overlap": 0.5,
        }
    elif name == "linear-dose":
        cfg = {"kind": "circle", "ambient_dim": 10, "continuous": True, "noise_sigma": 0.0,
               "continuous_reward": {"slope": 1.0}, "logging_tilt": 0.0, "overlap": 0.5}
    else:
        raise ConfigError(f"unknown environment preset {name!r}")
    cfg.update(overrides)
    return cfg


def resolve_environment(block: dict) -> dict:
    block = copy.deepcopy(block)
    preset = block.pop("preset", None)
    return preset_environment(preset, **block) if preset else block


def desk_pipeline(output_bound: float | None = None) -> dict:
    """Pipeline settings sized for single-core runs at n <= 10^4.

    Shallower networks (depth multiplier 0.35), a larger Adam step and longer
    nuisance training than the library defaults.
    """
    scaling = {"depth": 0.35, "width": 1.0, "output_bound": output_bound}
    return {
        "alpha": 1.0,
        "split_fraction": 0.5,
        "reward_scaling": dict(scaling),
        "propensity_scaling": dict(scaling),
        "policy_scaling": dict(scaling),
        "stage1": {"epochs": 1000, "learning_rate": 1e-2, "patience": 50},
        "stage2": {"epochs": 300, "learning_rate": 1e-2, "patience": 50},
        "anneal_from": 1.0,
        "anneal_fraction": 0.5,
    }


def _check_finite(obj, path: str = "") -> None:
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ConfigError(f"non-finite number at {path or '<root>'}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}" if path else k)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")


def config_hash(raw: dict) -> str:
    """Hash of everything that affects results (output location and thread count excluded)."""
    relevant = {k: v for k, v in raw.items() if k not in ("out", "threads")}
    return hashlib.sha256(json.dumps(relevant, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    seed: int
    environment: dict
    pipeline: PipelineConfig
    n: int = 1000
    discretization: dict | None = None
    experiment: dict = field(default_factory=dict)
    out: Path = Path("results")
    threads: int = 1

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def build_environment(self, ambient_dim: int | None = None):
        try:
            return EnvironmentConfig.from_dict(self.environment).build(ambient_dim)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"environment block: {exc}") from exc


def parse_config(raw: dict) -> RunConfig:
    """Validate a configuration mapping and build the typed run config."""
    _check_finite(raw)
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    try:
        pipeline = PipelineConfig.from_dict(raw.get("pipeline", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"pipeline block: {exc}") from exc
    return RunConfig(
        raw=raw,
        seed=int(raw["seed"]),
        environment=resolve_environment(raw["environment"]),
        pipeline=pipeline,
        n=int(raw.get("data", {}).get("n", 1000)),
        discretization=raw.get("discretization"),
        experiment=raw.get("experiment", {}),
        out=Path(raw.get("out", "results")),
        threads=int(raw.get("threads") or os.cpu_count() or 1),
    )


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def load_config(path: str | Path, seed: int | None = None, out: str | Path | None = None,
                threads: int | None = None) -> RunConfig:
    """Read a TOML (or .json) config; command-line values override the file."""
    raw = read_config_file(path)
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = str(out)
    if threads is not None:
        raw["threads"] = threads
    return parse_config(raw)
