# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Minibatch training loop shared by federated clients and the baselines."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from fedtp.core.logging import log_event
from fedtp.nn.network import Minibatch, loss_and_grad
from fedtp.nn.optim import AdamState, adam_step, sgd_step
from fedtp.nn.params import LayerArrays, ModelError, ModelParams


@dataclass(frozen=True)
class TrainSettings:
    epochs: int
    batch_size: int
    learning_rate: float
    mu: float = 0.0
    alpha_l2r: float = 0.0
    optimizer: Literal["adam", "sgd"] = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    mean_loss: float
    steps: int
    batch_clamped: bool
    optimizer_state: AdamState | None = None


def _freeze(grad: LayerArrays, frozen_layers: int) -> LayerArrays:
    if not frozen_layers:
        return grad
    return tuple(
        (np.zeros_like(gw), np.zeros_like(gb)) if i < frozen_layers else (gw, gb)
        for i, (gw, gb) in enumerate(grad)
    )


def fit(
    params: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    settings: TrainSettings,
    seed: int,
    *,
    anchor: ModelParams | None = None,
    frozen_layers: int = 0,
    optimizer_state: AdamState | None = None,
    client_id: int | None = None,
) -> FitResult:
    """Run ``settings.epochs`` epochs of shuffled minibatch steps.

    ``anchor`` is the proximal reference and defaults to the starting params.
    Layers below ``frozen_layers`` never move. A batch size larger than the
    dataset is clamped to the dataset size and recorded as a warning event.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if n == 0:
        raise ModelError("Cannot train on an empty dataset")
    if settings.batch_size < 1:
        raise ModelError(f"batch size must be >= 1, got {settings.batch_size}")
    if not 0 <= frozen_layers < len(params) + 1:
        raise ModelError(f"frozen_layers={frozen_layers} out of range")

    batch_size = settings.batch_size
    clamped = batch_size > n
    if clamped:
        log_event(
            logging.WARNING,
            f"Batch size {batch_size} exceeds dataset size {n}; clamping",
            client_id=client_id,
            event="batch_clamped",
        )
        batch_size = n

    anchor = anchor if anchor is not None else params
    state = optimizer_state
    if settings.optimizer == "adam" and state is None:
        state = AdamState.fresh(
            params,
            settings.learning_rate,
            beta1=settings.beta1,
            beta2=settings.beta2,
            eps=settings.eps,
        )

    rng = np.random.default_rng(seed)
    losses: list[float] = []
    for _ in range(settings.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            batch = Minibatch(features[idx], labels[idx])
            terms, grad = loss_and_grad(
                params, anchor, batch, mu=settings.mu, alpha_l2r=settings.alpha_l2r
            )
            grad = _freeze(grad, frozen_layers)
            before = params
            if settings.optimizer == "adam":
                params, state = adam_step(params, grad, state)
            else:
                params = sgd_step(params, grad, settings.learning_rate)
            if frozen_layers:
                params = params.with_layers(
                    before.layers[:frozen_layers] + params.layers[frozen_layers:]
                )
            losses.append(terms.data_loss)

    return FitResult(
        params=params,
        mean_loss=float(np.mean(losses)) if losses else 0.0,
        steps=len(losses),
        batch_clamped=clamped,
        optimizer_state=state if settings.optimizer == "adam" else None,
    )
