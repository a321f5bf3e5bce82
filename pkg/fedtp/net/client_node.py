# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Client node: trains on its private shard whenever it is sampled."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from fedtp.core.logging import log_event
from fedtp.core.options import BrokerOptions, StrategyConfig
from fedtp.data.csv_io import load_csv
from fedtp.data.domains import NUM_FEATURES, DomainDataset
from fedtp.fl.client import ClientUpdate, client_seed, client_update
from fedtp.net.broker import TO_CLIENTS, TO_SERVER
from fedtp.net.codec import CodecError, WeightMessage, params_to_payload
from fedtp.net.connection import BrokerConnection
from fedtp.net.server_node import client_queue, declare_server_queue
from fedtp.nn.optim import AdamState

logger = logging.getLogger("fedtp")


class NodeError(RuntimeError):
    """A client node cannot continue (bad shard, silent server)."""


@dataclass
class ClientNodeStats:
    client_id: int
    group: str
    published: int = 0
    rounds: list[int] = field(default_factory=list)
    discarded: int = 0


def load_shard(
    data: DomainDataset | Path, group: str, num_features: int = NUM_FEATURES
) -> DomainDataset:
    if isinstance(data, DomainDataset):
        dataset = data
    else:
        dataset = load_csv(Path(data), num_features=num_features)
    if dataset.group != group:
        raise NodeError(f"Shard belongs to group {dataset.group!r}, not {group!r}")
    return dataset


def run_client_node(
    client_id: int,
    group: str,
    data: DomainDataset | Path,
    options: BrokerOptions,
    *,
    num_features: int = NUM_FEATURES,
    idle_timeout: float | None = None,
) -> ClientNodeStats:
    """Serve training requests for one client until the server sends ``stop``.

    A re-broadcast of a round already trained (higher ``attempt``) re-sends the
    cached update instead of training again, so retries never change results.
    """
    dataset = load_shard(data, group, num_features)
    stats = ClientNodeStats(client_id=client_id, group=group)
    sender = client_queue(client_id)
    last_round = 0
    last_attempt = 0
    cached: WeightMessage | None = None
    optimizer_state: AdamState | None = None

    with BrokerConnection(options) as conn:
        conn.declare_queue(sender)
        conn.bind(sender, TO_CLIENTS, group)
        declare_server_queue(conn, [group])
        conn.consume(sender)
        ready = WeightMessage(kind="ready", routing_key=group, sender=sender, client_id=client_id)
        conn.publish(TO_SERVER, group, ready.to_body())
        logger.info("Client %d (%s) ready with %d samples", client_id, group, len(dataset))

        while True:
            delivery = conn.get(timeout=idle_timeout)
            if delivery is None:
                raise NodeError(f"client {client_id}: no message from the server in time")
            try:
                msg = WeightMessage.from_body(delivery.body)
            except CodecError as exc:
                log_event(logging.WARNING, "Dropping malformed message", client_id=client_id,
                          event="bad_message", error=str(exc))
                conn.ack(delivery.delivery_tag)
                continue

            if msg.routing_key != group:
                log_event(logging.WARNING, f"Ignoring message for group {msg.routing_key!r}",
                          client_id=client_id, event="wrong_group")
            elif msg.kind == "stop":
                conn.ack(delivery.delivery_tag)
                break
            elif msg.kind != "model" or client_id not in msg.participants:
                pass
            elif msg.round < last_round:
                stats.discarded += 1
                log_event(logging.INFO, "Discarding stale model", round=msg.round,
                          client_id=client_id, event="stale_discarded")
            elif msg.round == last_round:
                if msg.attempt > last_attempt and cached is not None:
                    last_attempt = msg.attempt
                    conn.publish(TO_SERVER, group, cached.to_body())
                    log_event(logging.INFO, "Re-sent cached update", round=msg.round,
                              client_id=client_id, event="update_resent")
                else:
                    stats.discarded += 1
                    log_event(logging.DEBUG, "Ignoring duplicate model", round=msg.round,
                              client_id=client_id, event="duplicate_discarded")
            else:
                update = _train(msg, dataset, client_id, group, optimizer_state)
                if not StrategyConfig.model_validate(msg.hyperparams or {}).reset_optimizer:
                    optimizer_state = update.optimizer_state
                cached = WeightMessage(
                    kind="update",
                    round=msg.round,
                    routing_key=group,
                    sender=sender,
                    client_id=client_id,
                    n_k=update.n_k,
                    train_loss=update.train_loss,
                    attempt=msg.attempt,
                    payload=params_to_payload(update.params),
                )
                conn.publish(TO_SERVER, group, cached.to_body())
                last_round, last_attempt = msg.round, msg.attempt
                stats.published += 1
                stats.rounds.append(msg.round)
                logger.debug("Client %d sent round %d update", client_id, msg.round)
            conn.ack(delivery.delivery_tag)

    logger.info("Client %d stopped after %d updates", client_id, stats.published)
    return stats


def _train(
    msg: WeightMessage,
    dataset: DomainDataset,
    client_id: int,
    group: str,
    optimizer_state: AdamState | None,
) -> ClientUpdate:
    if msg.seed is None:
        raise NodeError(f"round {msg.round} model message carries no seed")
    cfg = StrategyConfig.model_validate(msg.hyperparams or {})
    return client_update(
        msg.params(),
        dataset,
        cfg,
        client_seed(msg.seed, msg.round, client_id),
        client_id=client_id,
        group=group,
        round=msg.round,
        optimizer_state=optimizer_state,
    )

