# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Client-side local training for every strategy."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from fedtp.core.options import StrategyConfig
from fedtp.nn.network import LabeledData
from fedtp.nn.optim import AdamState
from fedtp.nn.params import ModelError, ModelParams
from fedtp.nn.trainer import TrainSettings, fit
from fedtp.utils.seeds import derive_seed


@dataclass(frozen=True)
class ClientUpdate:
    """A client's trained parameters and local sample count for one round."""

    client_id: int
    group: str
    params: ModelParams
    n_k: int
    round: int
    train_loss: float = 0.0
    optimizer_state: AdamState | None = None
    train_ms: float = field(default=0.0, compare=False)

    def __post_init__(self) -> None:
        if self.n_k < 1:
            raise ModelError(f"client {self.client_id}: n_k must be >= 1, got {self.n_k}")
        if self.round < 1:
            raise ModelError(f"client {self.client_id}: round must be >= 1, got {self.round}")


def train_settings(cfg: StrategyConfig) -> TrainSettings:
    """Local training settings for a strategy; FedAvg trains on the data loss only."""
    return TrainSettings(
        epochs=cfg.local_epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        mu=cfg.mu,
        alpha_l2r=cfg.alpha_l2r,
        optimizer=cfg.optimizer,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
    )


def client_seed(seed: int, round: int, client_id: int) -> int:
    """Shuffle seed for one client in one round; shared by sim and network modes."""
    return derive_seed(seed, "client", round, client_id)


def client_update(
    global_params: ModelParams,
    data: LabeledData,
    cfg: StrategyConfig,
    seed: int,
    *,
    client_id: int,
    group: str,
    round: int,
    optimizer_state: AdamState | None = None,
) -> ClientUpdate:
    """Run E epochs of local training anchored at the received global model.

    ``seed`` is the already derived per-client seed. ``optimizer_state`` is only
    honoured when ``cfg.reset_optimizer`` is off.
    """
    state = None if cfg.reset_optimizer else optimizer_state
    started = time.perf_counter()
    result = fit(
        global_params,
        data.features,
        data.labels,
        train_settings(cfg),
        seed,
        anchor=global_params,
        optimizer_state=state,
        client_id=client_id,
    )
    return ClientUpdate(
        client_id=client_id,
        group=group,
        params=result.params,
        n_k=len(data.labels),
        round=round,
        train_loss=result.mean_loss,
        optimizer_state=result.optimizer_state,
        train_ms=(time.perf_counter() - started) * 1000.0,
    )
