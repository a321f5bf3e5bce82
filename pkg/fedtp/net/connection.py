# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Blocking broker client used by the server and client nodes."""

from __future__ import annotations

import itertools
import select
import socket
from collections import deque
from dataclasses import dataclass
from typing import Any

from fedtp.core.options import BrokerOptions
from fedtp.net.broker import AuthError, BrokerError
from fedtp.net.framing import FrameError, recv_frame, send_frame
from fedtp.utils.retry import connect_with_retry


@dataclass(frozen=True)
class Delivery:
    queue: str
    delivery_tag: int
    redelivered: bool
    body: Any


class BrokerConnection:
    """One authenticated TCP session with the broker.

    Replies are matched to requests by id; deliveries that arrive while a reply
    is awaited are buffered for ``get``.
    """

    def __init__(self, options: BrokerOptions, *, connect_timeout: float = 5.0) -> None:
        self.options = options
        self.connect_timeout = connect_timeout
        self._sock: socket.socket | None = None
        self._ids = itertools.count(1)
        self._pending: deque[Delivery] = deque()

    # --- lifecycle ---

    def connect(self) -> BrokerConnection:
        connect_with_retry(
            self._open,
            retries=self.options.connect_retries,
            target=f"{self.options.host}:{self.options.port}",
        )
        return self

    def _open(self) -> None:
        sock = socket.create_connection(
            (self.options.host, self.options.port), timeout=self.connect_timeout
        )
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        try:
            reply = self._request(
                "auth", username=self.options.username, password=self.options.password
            )
        except BrokerError:
            self.close()
            raise
        if not reply.get("ok"):
            self.close()
            raise AuthError(f"Broker refused user {self.options.username!r}")

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def __enter__(self) -> BrokerConnection:
        return self.connect()

    def __exit__(self, *exc: object) -> None:
        self.close()

    # --- framing ---

    def _socket(self) -> socket.socket:
        if self._sock is None:
            raise BrokerError("Not connected to the broker")
        return self._sock

    def _read(self) -> dict:
        try:
            frame = recv_frame(self._socket())
        except (FrameError, OSError) as exc:
            raise BrokerError(f"Lost broker connection: {exc}") from exc
        if frame is None:
            raise BrokerError("Broker closed the connection")
        return frame

    def _buffer(self, frame: dict) -> None:
        self._pending.append(
            Delivery(
                queue=str(frame.get("queue")),
                delivery_tag=int(frame["delivery_tag"]),
                redelivered=bool(frame.get("redelivered")),
                body=frame.get("body"),
            )
        )

    def _request(self, op: str, **fields: Any) -> dict:
        request_id = next(self._ids)
        try:
            send_frame(self._socket(), {"op": op, "id": request_id, **fields})
        except (FrameError, OSError) as exc:
            raise BrokerError(f"Cannot send {op!r}: {exc}") from exc
        while True:
            frame = self._read()
            if frame.get("op") == "deliver":
                self._buffer(frame)
            elif frame.get("op") == "reply" and frame.get("id") == request_id:
                return frame

    def _call(self, op: str, **fields: Any) -> dict:
        reply = self._request(op, **fields)
        if not reply.get("ok"):
            raise BrokerError(f"{op} failed: {reply.get('error', 'unknown error')}")
        return reply

    # --- operations ---

    def declare_queue(self, queue: str) -> None:
        self._call("declare_queue", queue=queue)

    def bind(self, queue: str, exchange: str, routing_key: str) -> None:
        self._call("bind", queue=queue, exchange=exchange, routing_key=routing_key)

    def publish(self, exchange: str, routing_key: str, body: Any) -> int:
        """Publish and return how many queues received a copy."""
        reply = self._call("publish", exchange=exchange, routing_key=routing_key, body=body)
        return int(reply["delivered"])

    def consume(self, queue: str) -> None:
        self._call("consume", queue=queue)

    def ack(self, delivery_tag: int) -> None:
        self._call("ack", delivery_tag=delivery_tag)

    def stats(self) -> dict:
        return self._call("stats")

    def get(self, timeout: float | None = None) -> Delivery | None:
        """Next delivery, waiting up to ``timeout`` seconds (forever when None)."""
        if self._pending:
            return self._pending.popleft()
        sock = self._socket()
        while True:
            readable, _, _ = select.select([sock], [], [], timeout)
            if not readable:
                return None
            frame = self._read()
            if frame.get("op") == "deliver":
                self._buffer(frame)
                return self._pending.popleft()
