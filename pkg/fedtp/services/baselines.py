# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Non-federated baselines: individual, centralized, and centralized transfer learning."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fedtp.core.models import RoundMetrics
from fedtp.core.options import BaselineConfig
from fedtp.data.domains import ClientDataset, DomainDataset, pool
from fedtp.nn.network import evaluate
from fedtp.nn.optim import AdamState
from fedtp.nn.params import ModelParams, build_layer_specs, init_kaiming, reinit_head
from fedtp.nn.trainer import TrainSettings, fit
from fedtp.utils.seeds import derive_seed

logger = logging.getLogger("fedtp")

DEFAULT_HIDDEN = (175, 125, 50)


class BaselineError(ValueError):
    """Raised for empty inputs or incompatible transfer settings."""


@dataclass
class BaselineResult:
    paradigm: str
    group: str
    model: ModelParams
    target_accuracy: float
    metrics: list[RoundMetrics] = field(default_factory=list)
    client_models: dict[int, ModelParams] = field(default_factory=dict)
    client_accuracies: dict[int, float] = field(default_factory=dict)
    pretrained: ModelParams | None = None
    transfer_start: ModelParams | None = None


def _settings(cfg: BaselineConfig) -> TrainSettings:
    return TrainSettings(epochs=1, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate)


def _initial(data: DomainDataset, hidden_dims: Sequence[int], seed: int) -> ModelParams:
    specs = build_layer_specs(data.num_features, list(hidden_dims), data.num_classes)
    return init_kaiming(specs, derive_seed(seed, "init"), base_cut=1)


def _train(
    params: ModelParams,
    data: DomainDataset,
    cfg: BaselineConfig,
    seed: int,
    target: DomainDataset,
    *,
    frozen_layers: int = 0,
) -> tuple[ModelParams, list[RoundMetrics]]:
    """Epoch loop with one metrics row per epoch; Adam state runs warm across epochs."""
    settings = _settings(cfg)
    state: AdamState | None = None
    metrics: list[RoundMetrics] = []
    started = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        result = fit(
            params,
            data.features,
            data.labels,
            settings,
            derive_seed(seed, "epoch", epoch),
            frozen_layers=frozen_layers,
            optimizer_state=state,
        )
        params, state = result.params, result.optimizer_state
        metrics.append(
            RoundMetrics(
                round=epoch,
                group=data.group,
                train_loss=result.mean_loss,
                target_accuracy=evaluate(params, target),
                wall_clock_ms=(time.perf_counter() - started) * 1000.0,
            )
        )
    return params, metrics


def train_cl(
    pooled: DomainDataset,
    cfg: BaselineConfig,
    seed: int,
    target: DomainDataset,
    hidden_dims: Sequence[int] = DEFAULT_HIDDEN,
) -> BaselineResult:
    """Centralized training on the union of one group's source shards."""
    if len(pooled) == 0:
        raise BaselineError("Centralized training needs data")
    params, metrics = _train(_initial(pooled, hidden_dims, seed), pooled, cfg, seed, target)
    accuracy = evaluate(params, target)
    logger.info("CL on %s (%d samples): target accuracy %.4f", pooled.group, len(pooled), accuracy)
    return BaselineResult(
        paradigm="cl",
        group=pooled.group,
        model=params,
        target_accuracy=accuracy,
        metrics=metrics,
    )


def train_il(
    clients: Sequence[ClientDataset],
    cfg: BaselineConfig,
    seed: int,
    target: DomainDataset,
    hidden_dims: Sequence[int] = DEFAULT_HIDDEN,
) -> BaselineResult:
    """Each client trains alone; the reported accuracy is the unweighted client mean.

    All clients use the same seed, so identical clients yield identical models.
    Metrics rows average loss and accuracy over clients per epoch.
    """
    if not clients:
        raise BaselineError("Individual learning needs at least one client")
    models: dict[int, ModelParams] = {}
    accuracies: dict[int, float] = {}
    per_client: list[list[RoundMetrics]] = []
    for client in sorted(clients, key=lambda c: c.client_id):
        params, metrics = _train(
            _initial(client.data, hidden_dims, seed), client.data, cfg, seed, target
        )
        models[client.client_id] = params
        accuracies[client.client_id] = evaluate(params, target)
        per_client.append(metrics)

    mean_accuracy = float(np.mean(list(accuracies.values())))
    metrics = [
        RoundMetrics(
            round=rows[0].round,
            group=rows[0].group,
            train_loss=float(np.mean([r.train_loss for r in rows])),
            target_accuracy=float(np.mean([r.target_accuracy for r in rows])),
            wall_clock_ms=max(r.wall_clock_ms for r in rows),
        )
        for rows in zip(*per_client)
    ]
    first = min(models)
    logger.info(
        "IL on %s (%d clients): mean target accuracy %.4f",
        clients[0].group,
        len(clients),
        mean_accuracy,
    )
    return BaselineResult(
        paradigm="il",
        group=clients[0].group,
        model=models[first],
        target_accuracy=mean_accuracy,
        metrics=metrics,
        client_models=models,
        client_accuracies=accuracies,
    )


def train_ctl(
    dataset_a: DomainDataset,
    dataset_b: DomainDataset,
    cfg: BaselineConfig,
    seed: int,
    target_b: DomainDataset,
    hidden_dims: Sequence[int] = DEFAULT_HIDDEN,
) -> BaselineResult:
    """Pretrain on A, freeze the leading ``freeze_cut`` layers, fine-tune on B.

    The head is reinitialized for B's class count when ``reinit_head`` is set.
    """
    if len(dataset_a) == 0 or len(dataset_b) == 0:
        raise BaselineError("Transfer learning needs data in both datasets")
    if dataset_a.num_features != dataset_b.num_features:
        raise BaselineError(
            f"Input dimensions differ: {dataset_a.num_features} vs {dataset_b.num_features}"
        )
    num_layers = len(hidden_dims) + 1
    if not 0 <= cfg.freeze_cut < num_layers:
        raise BaselineError(f"freeze_cut={cfg.freeze_cut} must lie in [0, {num_layers})")

    pretrained, _ = _train(
        _initial(dataset_a, hidden_dims, seed),
        dataset_a,
        cfg,
        derive_seed(seed, "ctl", "pretrain"),
        dataset_a,
    )

    if cfg.reinit_head:
        start = reinit_head(pretrained, dataset_b.num_classes, derive_seed(seed, "ctl", "head"))
    elif pretrained.num_classes != dataset_b.num_classes:
        raise BaselineError(
            f"Class counts differ ({pretrained.num_classes} vs {dataset_b.num_classes}) "
            "and head reinitialization is off"
        )
    else:
        start = pretrained

    params, metrics = _train(
        start,
        dataset_b,
        cfg,
        derive_seed(seed, "ctl", "finetune"),
        target_b,
        frozen_layers=cfg.freeze_cut,
    )
    accuracy = evaluate(params, target_b)
    logger.info(
        "CTL %s -> %s: target accuracy %.4f", dataset_a.group, dataset_b.group, accuracy
    )
    return BaselineResult(
        paradigm="ctl",
        group=dataset_b.group,
        model=params,
        target_accuracy=accuracy,
        metrics=metrics,
        pretrained=pretrained,
        transfer_start=start,
    )


def pooled_source(clients: Sequence[ClientDataset]) -> DomainDataset:
    """Union of client shards in client-id order."""
    if not clients:
        raise BaselineError("No client shards to pool")
    return pool(sorted(clients, key=lambda c: c.client_id))
