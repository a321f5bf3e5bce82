# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Strategy, baseline, data, broker, and experiment settings for fedtp."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Sequence

import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    YamlConfigSettingsSource,
)

StrategyName = Literal["fedavg", "fedprox", "fedl2r", "ftl-tp"]
BaselineName = Literal["il", "cl", "ctl"]
MethodName = Literal["fedavg", "fedprox", "fedl2r", "ftl-tp", "il", "cl", "ctl"]

STRATEGIES: tuple[str, ...] = ("fedavg", "fedprox", "fedl2r", "ftl-tp")
BASELINES: tuple[str, ...] = ("il", "cl", "ctl")


class ConfigError(ValueError):
    """Raised when a config file or override cannot be parsed or validated."""


_STRATEGY_PRESETS: dict[str, dict[str, float]] = {
    "fedavg": {"mu": 0.0, "alpha_l2r": 0.0},
    "fedprox": {"mu": 0.1, "alpha_l2r": 0.0},
    "fedl2r": {"mu": 0.0, "alpha_l2r": 0.01},
    "ftl-tp": {"mu": 0.01, "alpha_l2r": 0.001},
}


class StrategyConfig(BaseModel):
    strategy: StrategyName = "ftl-tp"
    mu: float = Field(default=0.01, ge=0.0)
    alpha_l2r: float = Field(default=0.001, ge=0.0)
    local_epochs: int = Field(default=1, ge=1)
    batch_size: int = Field(default=8, ge=1)
    learning_rate: float = Field(default=0.0005, gt=0.0)
    fractions: dict[str, float] = {}
    rounds: int = Field(default=150, ge=0)
    base_cut: int = Field(default=1, ge=1)
    hidden_dims: list[int] = [175, 125, 50]
    optimizer: Literal["adam", "sgd"] = "adam"
    reset_optimizer: bool = True
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)

    @model_validator(mode="after")
    def _check_strategy_terms(self) -> StrategyConfig:
        if self.strategy == "fedavg" and (self.mu or self.alpha_l2r):
            raise ValueError("fedavg requires mu=0 and alpha_l2r=0")
        if self.strategy == "fedprox" and self.alpha_l2r:
            raise ValueError("fedprox requires alpha_l2r=0")
        for group, fraction in self.fractions.items():
            if not 0.0 < fraction <= 1.0:
                raise ValueError(f"client fraction for group {group!r} must be in (0, 1]")
        if self.base_cut > len(self.hidden_dims):
            raise ValueError(
                f"base_cut={self.base_cut} leaves no personalized layer for "
                f"{len(self.hidden_dims) + 1} layers"
            )
        return self

    @classmethod
    def preset(cls, strategy: str, **overrides: Any) -> StrategyConfig:
        """Defaults used for each strategy in the experiments."""
        if strategy not in _STRATEGY_PRESETS:
            raise ConfigError(f"Unknown strategy {strategy!r}")
        return cls(strategy=strategy, **{**_STRATEGY_PRESETS[strategy], **overrides})

    def fraction_for(self, group: str) -> float:
        return self.fractions.get(group, 1.0)


class BaselineConfig(BaseModel):
    paradigm: BaselineName = "cl"
    epochs: int = Field(default=150, ge=0)
    batch_size: int = Field(default=8, ge=1)
    learning_rate: float = Field(default=0.0005, gt=0.0)
    freeze_cut: int = Field(default=1, ge=0)
    reinit_head: bool = True


class DataConfig(BaseModel):
    data_dir: Path | None = None
    num_features: int = Field(default=624, ge=2)
    subspace_dim: int = Field(default=16, ge=1)
    noise_scale: float = Field(default=1.0, gt=0.0)
    class_separation: float = Field(default=3.0, ge=0.0)
    shift_scale: float = Field(default=1.0, ge=0.0)
    basis_seed: int = 0
    seed: int = 0
    domain_sizes: dict[str, int] = {}

    @model_validator(mode="after")
    def _check_subspace(self) -> DataConfig:
        if self.subspace_dim >= self.num_features:
            raise ValueError("subspace_dim must be smaller than num_features")
        return self


class BrokerOptions(BaseModel):
    host: str = "127.0.0.1"
    port: int = Field(default=5682, ge=0, le=65535)
    username: str = "fedtp"
    password: str = "fedtp"
    update_timeout: float = Field(default=60.0, gt=0.0)
    round_retries: int = Field(default=1, ge=0)
    connect_retries: int = Field(default=5, ge=0)


class ExperimentConfig(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="FEDTP_",
        env_nested_delimiter="__",
        yaml_file="fedtp.yaml",
        yaml_file_encoding="utf-8",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            env_settings,
            YamlConfigSettingsSource(settings_cls),
            file_secret_settings,
        )

    method: MethodName = "ftl-tp"
    group_a: str = "M"
    group_b: str = "S"
    target_a: str | None = None
    target_b: str | None = None
    strategy: StrategyConfig = Field(default_factory=StrategyConfig)
    baseline: BaselineConfig = Field(default_factory=BaselineConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    partition_mode: Literal["balanced", "unbalanced"] = "balanced"
    unbalanced_domain: str | None = None
    repeats: int = Field(default=5, ge=1)
    folds: int = Field(default=5, ge=2)
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    out: Path = Path("./runs")
    broker: BrokerOptions = Field(default_factory=BrokerOptions)
    verbose: bool = False

    @model_validator(mode="after")
    def _check_groups(self) -> ExperimentConfig:
        if self.group_a == self.group_b:
            raise ValueError("group_a and group_b must be distinct")
        if {self.group_a, self.group_b} == {"S", "T"}:
            raise ValueError("groups S and T share the same signals and are never paired")
        if self.method in STRATEGIES and self.strategy.strategy != self.method:
            raise ValueError(
                f"method {self.method!r} does not match strategy.strategy "
                f"{self.strategy.strategy!r}"
            )
        return self


def parse_override(item: str) -> tuple[list[str], Any]:
    """Split ``a.b.c=value`` into a key path and a YAML-typed value."""
    if "=" not in item:
        raise ConfigError(f"Override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    path = [part for part in key.strip().split(".") if part]
    if not path:
        raise ConfigError(f"Override {item!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"Override {item!r} has an unparseable value: {exc}") from exc
    return path, value


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key.path=value`` overrides to a nested config dict (copying it)."""
    result = json.loads(json.dumps(data, default=str))
    for item in overrides:
        path, value = parse_override(item)
        node = result
        for part in path[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            elif not isinstance(child, dict):
                raise ConfigError(f"Override {item!r}: {part!r} is not a section")
            node = child
        node[path[-1]] = value
    return result


def read_config_file(path: Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"Cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a mapping at the top level")
    return data


def _with_strategy_preset(data: dict) -> dict:
    """Fill strategy terms from the method's preset when the file leaves them out."""
    method = data.get("method")
    if method not in STRATEGIES:
        return data
    strategy = dict(data.get("strategy") or {})
    strategy.setdefault("strategy", method)
    for key, value in _STRATEGY_PRESETS[strategy["strategy"]].items():
        strategy.setdefault(key, value)
    return {**data, "strategy": strategy}


def load_config(
    path: Path | None = None,
    overrides: Sequence[str] = (),
    **extra: Any,
) -> ExperimentConfig:
    """Build an ExperimentConfig from an optional file plus overrides.

    File values and overrides are passed as init kwargs, so they win over
    ``FEDTP_*`` env vars and ``fedtp.yaml``.
    """
    data = read_config_file(path) if path is not None else {}
    data = apply_overrides(data, overrides)
    data.update({k: v for k, v in extra.items() if v is not None})
    data = _with_strategy_preset(data)
    try:
        return ExperimentConfig(**data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(config: ExperimentConfig) -> dict:
    """Effective config as a JSON-ready dict."""
    return config.model_dump(mode="json")
