# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Server node: runs the federation over the broker."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from fedtp.core.federation import (
    FederationError,
    check_shared_base,
    initial_models,
    round_metrics,
    round_seed,
)
from fedtp.core.logging import log_event
from fedtp.core.models import RoundMetrics, Roster
from fedtp.core.options import BrokerOptions, StrategyConfig
from fedtp.core.writer import write_metrics_csv
from fedtp.fl.aggregate import aggregate_round
from fedtp.fl.client import ClientUpdate
from fedtp.fl.sampling import sample_clients
from fedtp.net.broker import TO_CLIENTS, TO_SERVER
from fedtp.net.codec import CodecError, WeightMessage, params_to_payload
from fedtp.net.connection import BrokerConnection, Delivery
from fedtp.nn.checkpoint import save_checkpoint
from fedtp.nn.params import ModelParams

logger = logging.getLogger("fedtp")

SERVER_QUEUE = "server"
SERVER_SENDER = "server"


def client_queue(client_id: int) -> str:
    return f"client-{client_id}"


def declare_server_queue(conn: BrokerConnection, groups: list[str]) -> None:
    """The server queue, bound to every group topic on ``to_server`` (idempotent)."""
    conn.declare_queue(SERVER_QUEUE)
    for group in groups:
        conn.bind(SERVER_QUEUE, TO_SERVER, group)


@dataclass
class ServerResult:
    models: dict[str, ModelParams]
    metrics: list[RoundMetrics] = field(default_factory=list)
    checkpoints: dict[str, Path] = field(default_factory=dict)


class _Collector:
    """Server-queue reader that keeps one message per client and acks everything."""

    def __init__(self, conn: BrokerConnection, roster: Roster) -> None:
        self.conn = conn
        self.group_of = {entry.client_id: entry.group for entry in roster.clients}

    def _next(self, deadline: float) -> tuple[Delivery, WeightMessage | None] | None:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            return None
        delivery = self.conn.get(timeout=remaining)
        if delivery is None:
            return None
        try:
            return delivery, WeightMessage.from_body(delivery.body)
        except CodecError as exc:
            log_event(logging.WARNING, "Dropping malformed message", event="bad_message",
                      error=str(exc))
            return delivery, None

    def wait_ready(self, timeout: float) -> None:
        waiting = set(self.group_of)
        deadline = time.monotonic() + timeout
        while waiting:
            item = self._next(deadline)
            if item is None:
                raise FederationError(
                    f"Clients never reported ready: {sorted(waiting)}"
                )
            delivery, msg = item
            if msg is not None and msg.kind == "ready":
                waiting.discard(msg.client_id)
            self.conn.ack(delivery.delivery_tag)
        logger.info("All %d clients ready", len(self.group_of))

    def collect(
        self, round: int, expected: set[int], got: dict[int, ClientUpdate], timeout: float
    ) -> None:
        """Add updates for ``round`` from ``expected`` clients to ``got`` until complete."""
        deadline = time.monotonic() + timeout
        while expected - set(got):
            item = self._next(deadline)
            if item is None:
                return
            delivery, msg = item
            if msg is not None and msg.kind == "update":
                self._accept(round, expected, got, msg)
            self.conn.ack(delivery.delivery_tag)

    def _accept(
        self, round: int, expected: set[int], got: dict[int, ClientUpdate], msg: WeightMessage
    ) -> None:
        client_id = msg.client_id
        if msg.round != round:
            log_event(logging.INFO, "Discarding update from another round", round=msg.round,
                      client_id=client_id, event="stale_discarded")
            return
        if client_id not in expected or client_id in got:
            log_event(logging.DEBUG, "Ignoring unexpected or duplicate update", round=round,
                      client_id=client_id, event="duplicate_discarded")
            return
        group = self.group_of[client_id]
        if msg.routing_key != group:
            log_event(logging.WARNING, f"Update tagged {msg.routing_key!r}, expected {group!r}",
                      round=round, client_id=client_id, event="wrong_group")
            return
        try:
            params = msg.params()
        except CodecError as exc:
            log_event(logging.WARNING, "Undecodable update", round=round, client_id=client_id,
                      event="bad_message", error=str(exc))
            return
        got[client_id] = ClientUpdate(
            client_id=client_id,
            group=group,
            params=params,
            n_k=msg.n_k or 0,
            round=round,
            train_loss=msg.train_loss or 0.0,
        )


def _broadcast(
    conn: BrokerConnection,
    cfg: StrategyConfig,
    models: Mapping[str, ModelParams],
    selected: Mapping[str, list[int]],
    round: int,
    attempt: int,
    seed: int,
) -> None:
    hyperparams = cfg.model_dump(mode="json")
    for group, params in sorted(models.items()):
        msg = WeightMessage(
            kind="model",
            round=round,
            routing_key=group,
            sender=SERVER_SENDER,
            attempt=attempt,
            payload=params_to_payload(params),
            hyperparams=hyperparams,
            participants=selected.get(group, []),
            seed=seed,
        )
        conn.publish(TO_CLIENTS, group, msg.to_body())


def run_server_node(
    cfg: StrategyConfig,
    roster: Roster,
    seed: int,
    options: BrokerOptions,
    *,
    shapes: Mapping[str, tuple[int, int]],
    run_dir: Path | None = None,
) -> ServerResult:
    """Publish each group's model per round, collect the sampled clients' updates, aggregate.

    A round whose updates do not all arrive within ``options.update_timeout`` is
    re-broadcast ``options.round_retries`` times before the run fails.
    """
    rosters = roster.by_group()
    if not rosters:
        raise FederationError("Roster has no clients")
    missing_shapes = set(rosters) - set(shapes)
    if missing_shapes:
        raise FederationError(f"No model shape for groups {sorted(missing_shapes)}")

    models = initial_models(cfg, {g: shapes[g] for g in rosters}, seed)
    metrics: list[RoundMetrics] = []

    with BrokerConnection(options) as conn:
        declare_server_queue(conn, list(rosters))
        conn.consume(SERVER_QUEUE)
        collector = _Collector(conn, roster)
        collector.wait_ready(options.update_timeout)

        started = time.perf_counter()
        for t in range(1, cfg.rounds + 1):
            selected = sample_clients(rosters, cfg.fractions, round_seed(seed, t))
            expected = {cid for ids in selected.values() for cid in ids}
            got: dict[int, ClientUpdate] = {}
            attempts = options.round_retries + 1
            for attempt in range(1, attempts + 1):
                _broadcast(conn, cfg, models, selected, t, attempt, seed)
                collector.collect(t, expected, got, options.update_timeout)
                if not expected - set(got):
                    break
                log_event(
                    logging.WARNING,
                    f"Round {t} timed out waiting for clients",
                    round=t,
                    event="round_retry",
                    details=f"missing={sorted(expected - set(got))} attempt={attempt}",
                )
            missing = sorted(expected - set(got))
            if missing:
                raise FederationError(
                    f"Round {t}: no update from clients {missing} after {attempts} attempts",
                    client_id=missing[0],
                    round=t,
                )

            updates = sorted(got.values(), key=lambda u: (u.group, u.client_id))
            models = aggregate_round(cfg.strategy, updates, models, round=t)
            check_shared_base(cfg.strategy, models, t)
            elapsed_ms = (time.perf_counter() - started) * 1000.0
            metrics.extend(round_metrics(t, models, updates, elapsed_ms))
            logger.info("Round %d aggregated from %d clients", t, len(updates))

        for group in sorted(rosters):
            stop = WeightMessage(kind="stop", round=cfg.rounds, routing_key=group,
                                 sender=SERVER_SENDER)
            conn.publish(TO_CLIENTS, group, stop.to_body())

    result = ServerResult(models=models, metrics=metrics)
    if run_dir is not None:
        run_dir = Path(run_dir)
        write_metrics_csv(metrics, run_dir / "metrics.csv")
        for group, params in sorted(models.items()):
            result.checkpoints[group] = save_checkpoint(params, run_dir / f"model-{group}.ckpt")
    return result
