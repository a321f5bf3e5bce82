# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Minimal direct-exchange broker over length-prefixed JSON frames.

Requests are JSON objects with an ``op`` and an ``id``; every request gets a
``reply`` frame with the same ``id``. Consumers additionally receive
``deliver`` frames carrying a ``delivery_tag`` to ``ack``. Messages a consumer
never acknowledged go back to the head of their queue when it disconnects.
"""

from __future__ import annotations

import asyncio
import hmac
import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from fedtp.core.logging import log_event
from fedtp.net.framing import FrameError, read_frame, write_frame

logger = logging.getLogger("fedtp")

TO_CLIENTS = "to_clients"
TO_SERVER = "to_server"
EXCHANGES = (TO_CLIENTS, TO_SERVER)


class BrokerError(RuntimeError):
    """Raised for broker protocol failures (bad request, unknown exchange, lost link)."""


class AuthError(BrokerError):
    """Raised when the broker refuses the credentials."""


def load_credentials(path: Path) -> dict[str, str]:
    """Read ``{users: {name: password}}`` (or a bare name-to-password mapping) from YAML."""
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise BrokerError(f"Cannot read credentials {path}: {exc}") from exc
    if isinstance(raw, dict) and isinstance(raw.get("users"), dict):
        raw = raw["users"]
    if not isinstance(raw, dict) or not raw:
        raise BrokerError(f"Credentials file {path} holds no users")
    users = {str(k): str(v) for k, v in raw.items()}
    if any(not name or not password for name, password in users.items()):
        raise BrokerError("Usernames and passwords must be non-empty")
    return users


@dataclass
class _Queue:
    name: str
    messages: deque = field(default_factory=deque)
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)
    consumer: _Connection | None = None


@dataclass(eq=False)
class _Connection:
    writer: asyncio.StreamWriter
    peer: str
    user: str = ""
    write_lock: asyncio.Lock = field(default_factory=asyncio.Lock)
    unacked: dict[int, tuple[str, Any]] = field(default_factory=dict)
    consuming: set[str] = field(default_factory=set)

    async def send(self, frame: dict) -> None:
        async with self.write_lock:
            await write_frame(self.writer, frame)


class Broker:
    """Direct exchanges ``to_clients`` and ``to_server`` with named FIFO queues."""

    def __init__(
        self, credentials: Mapping[str, str], host: str = "127.0.0.1", port: int = 0
    ) -> None:
        if not credentials:
            raise BrokerError("Broker needs at least one user")
        self._credentials = dict(credentials)
        self.host = host
        self.port = port
        self._server: asyncio.AbstractServer | None = None
        self._connections: set[_Connection] = set()
        self._queues: dict[str, _Queue] = {}
        self._bindings: dict[str, dict[str, set[str]]] = {ex: {} for ex in EXCHANGES}
        self._next_tag = 0
        self.unroutable = 0
        self.published = 0
        self.delivered = 0

    # --- lifecycle ---

    async def start(self) -> tuple[str, int]:
        self._server = await asyncio.start_server(self._handle, self.host, self.port)
        sock = self._server.sockets[0]
        self.host, self.port = sock.getsockname()[:2]
        logger.info("Broker listening on %s:%d", self.host, self.port)
        return self.host, self.port

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            for conn in list(self._connections):
                conn.writer.close()
            await self._server.wait_closed()
            self._server = None

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        assert self._server is not None
        async with self._server:
            await self._server.serve_forever()

    # --- routing (also usable in-process) ---

    def declare_queue(self, name: str) -> None:
        if not name:
            raise BrokerError("Queue name must be non-empty")
        self._queues.setdefault(name, _Queue(name))

    def bind(self, queue: str, exchange: str, routing_key: str) -> None:
        self._check_exchange(exchange)
        if queue not in self._queues:
            raise BrokerError(f"Unknown queue {queue!r}")
        if not routing_key:
            raise BrokerError("Routing key must be non-empty")
        self._bindings[exchange].setdefault(routing_key, set()).add(queue)

    def bindings(self, exchange: str) -> dict[str, set[str]]:
        self._check_exchange(exchange)
        return {key: set(queues) for key, queues in self._bindings[exchange].items()}

    def depth(self, queue: str) -> int:
        return len(self._queues[queue].messages)

    async def publish(self, exchange: str, routing_key: str, body: Any) -> int:
        """Copy ``body`` to every queue bound with exactly ``routing_key``; returns the count."""
        self._check_exchange(exchange)
        targets = sorted(self._bindings[exchange].get(routing_key, ()))
        self.published += 1
        if not targets:
            self.unroutable += 1
            log_event(
                logging.WARNING,
                f"Unroutable message on {exchange} with key {routing_key!r}",
                event="unroutable",
                details=f"exchange={exchange} routing_key={routing_key}",
            )
            return 0
        for name in targets:
            queue = self._queues[name]
            async with queue.lock:
                queue.messages.append((body, False))
            await self._pump(queue)
        return len(targets)

    def _check_exchange(self, exchange: str) -> None:
        if exchange not in self._bindings:
            raise BrokerError(f"Unknown exchange {exchange!r}; known: {list(EXCHANGES)}")

    async def _pump(self, queue: _Queue) -> None:
        """Deliver queued messages to the queue's consumer in FIFO order."""
        async with queue.lock:
            while queue.consumer is not None and queue.messages:
                consumer = queue.consumer
                body, redelivered = queue.messages.popleft()
                self._next_tag += 1
                tag = self._next_tag
                consumer.unacked[tag] = (queue.name, body)
                try:
                    await consumer.send(
                        {
                            "op": "deliver",
                            "queue": queue.name,
                            "delivery_tag": tag,
                            "redelivered": redelivered,
                            "body": body,
                        }
                    )
                except (ConnectionError, RuntimeError):
                    consumer.unacked.pop(tag, None)
                    queue.messages.appendleft((body, redelivered))
                    queue.consumer = None
                    break
                self.delivered += 1

    async def _requeue(self, conn: _Connection) -> None:
        """Return a closed connection's unacked messages to their queue heads."""
        by_queue: dict[str, list[Any]] = {}
        for tag in sorted(conn.unacked):
            name, body = conn.unacked[tag]
            by_queue.setdefault(name, []).append(body)
        conn.unacked.clear()
        for name in conn.consuming:
            queue = self._queues.get(name)
            if queue is not None and queue.consumer is conn:
                queue.consumer = None
        for name, bodies in by_queue.items():
            queue = self._queues[name]
            async with queue.lock:
                for body in reversed(bodies):
                    queue.messages.appendleft((body, True))
            await self._pump(queue)

    # --- connection handling ---

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = str(writer.get_extra_info("peername"))
        conn = _Connection(writer=writer, peer=peer)
        self._connections.add(conn)
        try:
            if not await self._authenticate(reader, conn):
                return
            while True:
                frame = await read_frame(reader)
                if frame is None:
                    break
                reply = await self._dispatch(conn, frame)
                if reply is not None:
                    await conn.send(reply)
        except (FrameError, ConnectionError, asyncio.IncompleteReadError) as exc:
            logger.debug("Connection %s closed: %s", peer, exc)
        finally:
            self._connections.discard(conn)
            await self._requeue(conn)
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    async def _authenticate(self, reader: asyncio.StreamReader, conn: _Connection) -> bool:
        frame = await read_frame(reader)
        if frame is None:
            return False
        user = str(frame.get("username", ""))
        password = str(frame.get("password", ""))
        expected = self._credentials.get(user)
        ok = (
            frame.get("op") == "auth"
            and expected is not None
            and hmac.compare_digest(expected.encode(), password.encode())
        )
        if not ok:
            log_event(logging.WARNING, f"Refused login from {conn.peer}", event="auth_refused")
            refusal = {"op": "reply", "id": frame.get("id"), "ok": False}
            await conn.send({**refusal, "error": "authentication failed"})
            return False
        conn.user = user
        await conn.send({"op": "reply", "id": frame.get("id"), "ok": True})
        return True

    async def _dispatch(self, conn: _Connection, frame: dict) -> dict | None:
        """Apply one request; None when the reply was already sent."""
        op = frame.get("op")
        reply: dict[str, Any] = {"op": "reply", "id": frame.get("id"), "ok": True}
        try:
            if op == "declare_queue":
                self.declare_queue(str(frame.get("queue", "")))
            elif op == "bind":
                self.bind(
                    str(frame.get("queue", "")),
                    str(frame.get("exchange", "")),
                    str(frame.get("routing_key", "")),
                )
            elif op == "publish":
                reply["delivered"] = await self.publish(
                    str(frame.get("exchange", "")),
                    str(frame.get("routing_key", "")),
                    frame.get("body"),
                )
            elif op == "consume":
                await self._consume(conn, str(frame.get("queue", "")), reply)
                return None
            elif op == "ack":
                tag = frame.get("delivery_tag")
                if conn.unacked.pop(tag, None) is None:
                    raise BrokerError(f"Unknown delivery tag {tag!r}")
            elif op == "stats":
                reply.update(
                    unroutable=self.unroutable,
                    published=self.published,
                    delivered=self.delivered,
                    queues={name: len(q.messages) for name, q in sorted(self._queues.items())},
                )
            else:
                raise BrokerError(f"Unknown op {op!r}")
        except BrokerError as exc:
            reply.update(ok=False, error=str(exc))
        return reply

    async def _consume(self, conn: _Connection, name: str, reply: dict) -> None:
        queue = self._queues.get(name)
        if queue is None:
            reply.update(ok=False, error=f"Unknown queue {name!r}")
            await conn.send(reply)
            return
        if queue.consumer is not None and queue.consumer is not conn:
            reply.update(ok=False, error=f"Queue {name!r} already has a consumer")
            await conn.send(reply)
            return
        queue.consumer = conn
        conn.consuming.add(name)
        await conn.send(reply)
        await self._pump(queue)


def broker_serve(
    credentials: Mapping[str, str], host: str = "127.0.0.1", port: int = 5682
) -> None:
    """Run a broker until interrupted."""
    broker = Broker(credentials, host, port)
    try:
        asyncio.run(broker.serve_forever())
    except KeyboardInterrupt:
        logger.info("Broker stopped")


class BrokerThread:
    """A broker on its own event loop in a daemon thread (tests and local runs)."""

    def __init__(
        self, credentials: Mapping[str, str], host: str = "127.0.0.1", port: int = 0
    ) -> None:
        self.broker = Broker(credentials, host, port)
        self._loop = asyncio.new_event_loop()
        self._ready = threading.Event()
        self._thread = threading.Thread(target=self._run, name="fedtp-broker", daemon=True)

    def _run(self) -> None:
        asyncio.set_event_loop(self._loop)
        self._loop.run_until_complete(self.broker.start())
        self._ready.set()
        self._loop.run_forever()
        self._loop.run_until_complete(self.broker.stop())
        pending = asyncio.all_tasks(self._loop)
        for task in pending:
            task.cancel()
        self._loop.run_until_complete(asyncio.gather(*pending, return_exceptions=True))
        self._loop.close()

    def start(self) -> tuple[str, int]:
        self._thread.start()
        if not self._ready.wait(timeout=10):
            raise BrokerError("Broker did not start")
        return self.broker.host, self.broker.port

    def stop(self) -> None:
        self._loop.call_soon_threadsafe(self._loop.stop)
        self._thread.join(timeout=10)

    def __enter__(self) -> BrokerThread:
        self.start()
        return self

    def __exit__(self, *exc: object) -> None:
        self.stop()
