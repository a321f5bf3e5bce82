# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Shared fixtures and small builders for fedtp tests."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import pytest

from fedtp.core.options import BaselineConfig, DataConfig, ExperimentConfig, StrategyConfig
from fedtp.data.domains import ClientDataset, DomainDataset
from fedtp.fl.client import ClientUpdate
from fedtp.nn.params import ModelParams, build_layer_specs, init_kaiming

SMALL_FEATURES = 12
SMALL_HIDDEN = [8, 6]


def make_domain(
    group: str = "M",
    domain: str = "Al-Cu",
    n: int = 30,
    num_features: int = SMALL_FEATURES,
    num_classes: int = 3,
    seed: int = 0,
    class_names: Sequence[str] | None = None,
) -> DomainDataset:
    """A separable-ish toy domain: class ``c`` is shifted by ``c`` along every feature."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    features = rng.normal(size=(n, num_features)) + labels[:, None] * 1.0
    names = tuple(class_names) if class_names else tuple(f"C{i}" for i in range(num_classes))
    return DomainDataset(
        group=group,
        domain=domain,
        features=features,
        labels=labels,
        num_classes=num_classes,
        class_names=names,
    )


def make_client(client_id: int, group: str = "M", n: int = 20, seed: int | None = None,
                **kwargs) -> ClientDataset:
    data = make_domain(group=group, n=n, seed=client_id if seed is None else seed, **kwargs)
    return ClientDataset(client_id=client_id, data=data)


def make_params(
    dims: Sequence[int] = (4, 5, 3), base_cut: int = 1, seed: int = 0
) -> ModelParams:
    specs = build_layer_specs(dims[0], list(dims[1:-1]), dims[-1])
    return init_kaiming(specs, seed, base_cut=base_cut)


def scalar_params(*values: float, base_cut: int = 1) -> ModelParams:
    """A chain of 1x1 layers with the given weights and zero biases."""
    layers = tuple((np.array([[v]], dtype=float), np.zeros(1)) for v in values)
    return ModelParams(layers=layers, base_cut=base_cut)


def make_update(
    client_id: int, params: ModelParams, n_k: int = 1, group: str = "M", round: int = 1
) -> ClientUpdate:
    return ClientUpdate(client_id=client_id, group=group, params=params, n_k=n_k, round=round)


def small_strategy(strategy: str = "ftl-tp", **changes) -> StrategyConfig:
    settings = {"hidden_dims": SMALL_HIDDEN, "rounds": 3, "batch_size": 4, **changes}
    return StrategyConfig.preset(strategy, **settings)


def small_data(**changes) -> DataConfig:
    settings = {
        "num_features": SMALL_FEATURES,
        "subspace_dim": 4,
        "domain_sizes": {"M": 24, "S": 18, "T": 18},
        **changes,
    }
    return DataConfig(**settings)


def small_experiment(out: Path, method: str = "ftl-tp", **changes) -> ExperimentConfig:
    strategy = small_strategy(method if method in ("fedavg", "fedprox", "fedl2r") else "ftl-tp",
                              rounds=2)
    settings = {
        "method": method,
        "strategy": strategy,
        "baseline": BaselineConfig(epochs=2, batch_size=4),
        "data": small_data(),
        "repeats": 2,
        "folds": 2,
        "out": out,
        **changes,
    }
    return ExperimentConfig(**settings)


@pytest.fixture
def experiment(tmp_path) -> ExperimentConfig:
    return small_experiment(tmp_path / "runs")
