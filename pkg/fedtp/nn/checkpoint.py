# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Binary model checkpoints.

Layout (all integers unsigned 32-bit big-endian)::

    b"FTLTPCK1" | layer_count | base_cut | (out_dim, in_dim) * layer_count |
    per layer: weight (out*in float64 LE, row-major) then bias (out float64 LE)
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from fedtp.core.writer import atomic_write_bytes
from fedtp.nn.params import ModelError, ModelParams

MAGIC = b"FTLTPCK1"
_U32 = struct.Struct(">I")
_DIMS = struct.Struct(">II")


def params_to_bytes(params: ModelParams) -> bytes:
    parts = [MAGIC, _U32.pack(len(params)), _U32.pack(params.base_cut)]
    for w, _ in params.layers:
        parts.append(_DIMS.pack(*w.shape))
    for w, b in params.layers:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def params_from_bytes(data: bytes) -> ModelParams:
    if data[: len(MAGIC)] != MAGIC:
        raise ModelError("Not a fedtp checkpoint (bad magic header)")
    offset = len(MAGIC)
    try:
        (count,) = _U32.unpack_from(data, offset)
        (base_cut,) = _U32.unpack_from(data, offset + 4)
        offset += 8
        dims = []
        for _ in range(count):
            dims.append(_DIMS.unpack_from(data, offset))
            offset += 8
    except struct.error as exc:
        raise ModelError(f"Truncated checkpoint header: {exc}") from exc

    layers = []
    for out_dim, in_dim in dims:
        w_bytes = out_dim * in_dim * 8
        b_bytes = out_dim * 8
        if offset + w_bytes + b_bytes > len(data):
            raise ModelError("Truncated checkpoint payload")
        w = np.frombuffer(data, dtype="<f8", count=out_dim * in_dim, offset=offset)
        offset += w_bytes
        b = np.frombuffer(data, dtype="<f8", count=out_dim, offset=offset)
        offset += b_bytes
        layers.append((w.reshape(out_dim, in_dim).astype(np.float64), b.astype(np.float64)))
    if offset != len(data):
        raise ModelError(f"Checkpoint has {len(data) - offset} trailing bytes")
    return ModelParams(layers=tuple(layers), base_cut=base_cut)


def save_checkpoint(params: ModelParams, path: Path) -> Path:
    """Write a checkpoint atomically. Returns the written path."""
    path = Path(path)
    atomic_write_bytes(path, params_to_bytes(params))
    return path


def load_checkpoint(path: Path) -> ModelParams:
    return params_from_bytes(Path(path).read_bytes())


def fingerprint(params: ModelParams) -> str:
    """SHA-256 of the checkpoint encoding; equal iff the models are bit-identical."""
    return hashlib.sha256(params_to_bytes(params)).hexdigest()
