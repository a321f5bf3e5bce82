# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""In-process federation: sample, broadcast, train, aggregate, record."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from fedtp.core.models import RoundMetrics
from fedtp.core.options import StrategyConfig
from fedtp.data.domains import ClientDataset
from fedtp.fl.aggregate import aggregate_round
from fedtp.fl.client import ClientUpdate, client_seed, client_update
from fedtp.fl.sampling import sample_clients
from fedtp.nn.network import LabeledData, evaluate
from fedtp.nn.optim import AdamState
from fedtp.nn.params import ModelParams, build_layer_specs, init_group_models, shared_base_equal
from fedtp.utils.seeds import derive_seed

logger = logging.getLogger("fedtp")


class FederationError(RuntimeError):
    """A round failed; ``client_id`` names the failing client when known."""

    def __init__(self, message: str, *, client_id: int | None = None, round: int | None = None):
        super().__init__(message)
        self.client_id = client_id
        self.round = round


@dataclass(frozen=True)
class GlobalState:
    """Per-group global models after ``round`` aggregations."""

    round: int
    models: dict[str, ModelParams]

    @property
    def groups(self) -> list[str]:
        return sorted(self.models)


@dataclass
class FederationHistory:
    states: list[GlobalState] = field(default_factory=list)
    metrics: list[RoundMetrics] = field(default_factory=list)

    @property
    def final(self) -> GlobalState:
        return self.states[-1]


def group_rosters(clients: Sequence[ClientDataset]) -> dict[str, list[int]]:
    """Client ids per group; every client belongs to exactly one group."""
    rosters: dict[str, list[int]] = {}
    seen: set[int] = set()
    for client in clients:
        if client.client_id in seen:
            raise FederationError(f"Duplicate client id {client.client_id}")
        seen.add(client.client_id)
        rosters.setdefault(client.group, []).append(client.client_id)
    return {g: sorted(ids) for g, ids in sorted(rosters.items())}


def group_shapes(clients: Sequence[ClientDataset]) -> dict[str, tuple[int, int]]:
    """``(num_features, num_classes)`` per group, checked across its clients."""
    shapes: dict[str, tuple[int, int]] = {}
    for client in clients:
        shape = (client.data.num_features, client.num_classes)
        known = shapes.setdefault(client.group, shape)
        if known != shape:
            raise FederationError(
                f"client {client.client_id}: shape {shape} differs from group "
                f"{client.group} shape {known}",
                client_id=client.client_id,
            )
    return dict(sorted(shapes.items()))


def initial_models(
    cfg: StrategyConfig, shapes: Mapping[str, tuple[int, int]], seed: int
) -> dict[str, ModelParams]:
    """Round-0 models for every group, sharing one base segment."""
    specs = {
        group: build_layer_specs(num_features, cfg.hidden_dims, num_classes)
        for group, (num_features, num_classes) in shapes.items()
    }
    return init_group_models(specs, cfg.base_cut, derive_seed(seed, "init"))


def round_seed(seed: int, round: int) -> int:
    """Sampling seed for one server round; shared by sim and network modes."""
    return derive_seed(seed, "round", round)


def round_metrics(
    round: int,
    models: Mapping[str, ModelParams],
    updates: Sequence[ClientUpdate],
    elapsed_ms: float,
    eval_sets: Mapping[str, LabeledData] | None = None,
    validation_sets: Mapping[str, LabeledData] | None = None,
) -> list[RoundMetrics]:
    """One metrics row per group, in sorted group order."""
    rows: list[RoundMetrics] = []
    for group in sorted(models):
        losses = [u.train_loss for u in updates if u.group == group]
        target = eval_sets.get(group) if eval_sets else None
        validation = validation_sets.get(group) if validation_sets else None
        rows.append(
            RoundMetrics(
                round=round,
                group=group,
                train_loss=sum(losses) / len(losses) if losses else None,
                target_accuracy=evaluate(models[group], target) if target is not None else None,
                validation_accuracy=(
                    evaluate(models[group], validation) if validation is not None else None
                ),
                wall_clock_ms=elapsed_ms,
            )
        )
    return rows


def check_shared_base(strategy: str, models: Mapping[str, ModelParams], round: int) -> None:
    if strategy == "ftl-tp" and len(models) > 1 and not shared_base_equal(models):
        raise FederationError(f"Base segments diverged across groups in round {round}", round=round)


def run_federation(
    cfg: StrategyConfig,
    client_datasets: Sequence[ClientDataset],
    seed: int,
    *,
    models: Mapping[str, ModelParams] | None = None,
    eval_sets: Mapping[str, LabeledData] | None = None,
    validation_sets: Mapping[str, LabeledData] | None = None,
    workers: int = 1,
    keep_states: bool = True,
    on_round: Callable[[GlobalState, list[RoundMetrics]], None] | None = None,
    on_updates: Callable[[int, list[ClientUpdate]], None] | None = None,
) -> FederationHistory:
    """Run ``cfg.rounds`` server rounds over the given clients.

    Each round samples clients per group, trains them from their group's global
    model (concurrently when ``workers > 1``), and aggregates with the
    configured strategy. With ``keep_states=False`` only the initial and final
    states are kept. ``on_updates`` receives each round's client updates before
    they are aggregated.
    """
    clients = {c.client_id: c for c in client_datasets}
    rosters = group_rosters(client_datasets)
    if not rosters:
        raise FederationError("No clients to federate")
    if models is None:
        models = initial_models(cfg, group_shapes(client_datasets), seed)
    missing = set(rosters) - set(models)
    if missing:
        raise FederationError(f"No initial model for groups {sorted(missing)}")

    state = GlobalState(round=0, models=dict(sorted(models.items())))
    check_shared_base(cfg.strategy, state.models, 0)
    history = FederationHistory(states=[state])
    optimizer_states: dict[int, AdamState | None] = {}
    started = time.perf_counter()

    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(1, cfg.rounds + 1):
            # --- Sample ---
            selected = sample_clients(rosters, cfg.fractions, round_seed(seed, t))
            jobs = [
                (group, client_id)
                for group, ids in selected.items()
                for client_id in ids
            ]

            # --- Local training ---
            def _train(job: tuple[str, int], t: int = t, state: GlobalState = state):
                group, client_id = job
                try:
                    return client_update(
                        state.models[group],
                        clients[client_id].data,
                        cfg,
                        client_seed(seed, t, client_id),
                        client_id=client_id,
                        group=group,
                        round=t,
                        optimizer_state=optimizer_states.get(client_id),
                    )
                except Exception as exc:
                    raise FederationError(
                        f"client {client_id} failed in round {t}: {exc}",
                        client_id=client_id,
                        round=t,
                    ) from exc

            if executor is not None:
                updates = list(executor.map(_train, jobs))
            else:
                updates = [_train(job) for job in jobs]
            if on_updates is not None:
                on_updates(t, updates)
            if not cfg.reset_optimizer:
                for update in updates:
                    optimizer_states[update.client_id] = update.optimizer_state

            # --- Aggregate ---
            new_models = aggregate_round(cfg.strategy, updates, state.models, round=t)
            check_shared_base(cfg.strategy, new_models, t)
            state = GlobalState(round=t, models=new_models)

            elapsed_ms = (time.perf_counter() - started) * 1000.0
            rows = round_metrics(t, new_models, updates, elapsed_ms, eval_sets, validation_sets)
            history.metrics.extend(rows)
            if keep_states:
                history.states.append(state)
            if on_round is not None:
                on_round(state, rows)
            logger.debug(
                "Round %d: %d updates, %s",
                t,
                len(updates),
                ", ".join(f"{r.group} loss={r.train_loss}" for r in rows),
            )
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    if not keep_states and state.round > 0:
        history.states.append(state)
    return history
