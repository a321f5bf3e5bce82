# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Length-prefixed JSON frames: 4-byte big-endian length, then UTF-8 JSON."""

from __future__ import annotations

import asyncio
import json
import socket
import struct
from typing import Any

HEADER = struct.Struct(">I")
MAX_FRAME_SIZE = 64 * 1024 * 1024


class FrameError(ValueError):
    """Raised for oversized, truncated, or non-JSON frames."""


def dumps(obj: Any) -> bytes:
    """Compact JSON; floats use the shortest repr that round-trips."""
    try:
        return json.dumps(obj, separators=(",", ":"), allow_nan=False).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise FrameError(f"Cannot encode frame: {exc}") from exc


def loads(body: bytes) -> dict:
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"Frame is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise FrameError("Frame must hold a JSON object")
    return obj


def encode_frame(obj: Any) -> bytes:
    body = dumps(obj)
    if len(body) > MAX_FRAME_SIZE:
        raise FrameError(f"Frame too large: {len(body)} bytes (max {MAX_FRAME_SIZE})")
    return HEADER.pack(len(body)) + body


def _check_length(length: int) -> None:
    if length > MAX_FRAME_SIZE:
        raise FrameError(f"Frame too large: {length} bytes (max {MAX_FRAME_SIZE})")


# --- asyncio streams ---


async def read_frame(reader: asyncio.StreamReader) -> dict | None:
    """Next frame, or None on a clean end of stream between frames."""
    try:
        header = await reader.readexactly(HEADER.size)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise FrameError("Stream ended inside a frame header") from exc
    (length,) = HEADER.unpack(header)
    _check_length(length)
    try:
        body = await reader.readexactly(length)
    except asyncio.IncompleteReadError as exc:
        raise FrameError(f"Stream ended after {len(exc.partial)} of {length} bytes") from exc
    return loads(body)


async def write_frame(writer: asyncio.StreamWriter, obj: Any) -> None:
    writer.write(encode_frame(obj))
    await writer.drain()


# --- blocking sockets ---


def _recv_exactly(sock: socket.socket, n: int) -> bytes:
    chunks: list[bytes] = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> dict | None:
    """Blocking read of one frame; None when the peer closed between frames."""
    header = _recv_exactly(sock, HEADER.size)
    if not header:
        return None
    if len(header) < HEADER.size:
        raise FrameError("Connection closed inside a frame header")
    (length,) = HEADER.unpack(header)
    _check_length(length)
    body = _recv_exactly(sock, length)
    if len(body) < length:
        raise FrameError(f"Connection closed after {len(body)} of {length} bytes")
    return loads(body)


def send_frame(sock: socket.socket, obj: Any) -> None:
    sock.sendall(encode_frame(obj))
