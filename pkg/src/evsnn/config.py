"""Structured run configuration for the CLI.

Configs are YAML files with full defaulting; unknown keys are rejected so
typos fail loudly. `EEVACT_SEED` in the environment overrides the file seed;
explicit command-line flags override both.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .datasets import GenerateSpec
from .network import NetworkConfig
from .preprocess import AugmentSpec, EncodeSettings
from .training import LossSpec, TrainConfig

SEED_ENV_VAR = "EEVACT_SEED"


class ConfigValidationError(ValueError):
    pass


@dataclass
class DatasetSection:
    root: str | None = None
    test_fraction: float = 0.2
    generate: GenerateSpec = field(default_factory=GenerateSpec)


@dataclass
class EvalSection:
    readout: str = "mean"
    ks: tuple = (1, 3, 5)
    sample_times_s: tuple | None = None
    duration_ms: int = 500

    def validate(self):
        if self.readout not in ("mean", "last"):
            raise ConfigValidationError(f"eval.readout: unknown value {self.readout!r}")


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    network: NetworkConfig = field(default_factory=lambda: NetworkConfig.tiny())
    encode: EncodeSettings = field(default_factory=lambda: EncodeSettings(32, 32))
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossSpec = field(default_factory=LossSpec)
    eval: EvalSection = field(default_factory=EvalSection)


_SECTION_TYPES = {
    "dataset": DatasetSection,
    "network": NetworkConfig,
    "encode": EncodeSettings,
    "train": TrainConfig,
    "loss": LossSpec,
    "eval": EvalSection,
}
_NESTED = {
    (DatasetSection, "generate"): GenerateSpec,
    (TrainConfig, "augment"): AugmentSpec,
    (TrainConfig, "encode"): EncodeSettings,
}


def _build(dc_type, data, path: str):
    """Strictly construct a dataclass from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigValidationError(f"{path}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigValidationError(
            f"{path}: unknown key(s) {sorted(unknown)}; "
            f"valid keys: {sorted(known)}")
    kwargs = {}
    for key, value in data.items():
        nested = _NESTED.get((dc_type, key))
        if nested is not None:
            kwargs[key] = _build(nested, value, f"{path}.{key}")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return dc_type(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigValidationError(f"{path}: {exc}") from exc


def _apply_overrides(data: dict, overrides: list[str]) -> None:
    """Apply `section.key=value` CLI overrides onto the raw config mapping."""
    for item in overrides:
        if "=" not in item:
            raise ConfigValidationError(f"override {item!r} is not key=value")
        dotted, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigValidationError(f"override path {dotted!r} invalid")
        node[parts[-1]] = value


def load_run_config(path, overrides: list[str] | None = None,
                    seed_flag: int | None = None) -> RunConfig:
    path = Path(path)
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigValidationError(f"{path}: top level must be a mapping")
    if overrides:
        _apply_overrides(data, overrides)

    top_known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - top_known
    if unknown:
        raise ConfigValidationError(
            f"{path}: unknown top-level key(s) {sorted(unknown)}")

    kwargs = {}
    for key in ("seed", "output_dir"):
        if key in data:
            kwargs[key] = data[key]
    for key, dc_type in _SECTION_TYPES.items():
        if key in data:
            kwargs[key] = _build(dc_type, data[key], key)
    config = RunConfig(**kwargs)

    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            config.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigValidationError(
                f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from exc
    if seed_flag is not None:
        config.seed = seed_flag

    config.network.validate()
    config.eval.validate()
    # Training encodes with the shared encode section unless overridden.
    if "train" not in data or "encode" not in (data.get("train") or {}):
        config.train.encode = config.encode
    config.train.rng_seed = config.seed
    return config
