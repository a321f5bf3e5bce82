# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Deterministic seed derivation."""

from __future__ import annotations

import hashlib


def derive_seed(master_seed: int, *parts: object) -> int:
    """Derive an independent 63-bit seed from a master seed and a tag path.

    The same inputs always give the same seed, across processes and platforms,
    so the simulator and the networked nodes draw identical random streams.
    """
    key = "\x1f".join([str(int(master_seed)), *(str(p) for p in parts)])
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1
