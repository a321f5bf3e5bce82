# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Per-round client sampling."""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from fedtp.utils.seeds import derive_seed


class SamplingError(ValueError):
    """Raised for an empty group or an out-of-range client fraction."""


def participants_per_round(fraction: float, group_size: int) -> int:
    """``m = max(round(C * M), 1)`` with halves rounded up."""
    if not 0.0 < fraction <= 1.0:
        raise SamplingError(f"client fraction must be in (0, 1], got {fraction}")
    if group_size < 1:
        raise SamplingError("cannot sample from an empty group")
    return min(max(math.floor(fraction * group_size + 0.5), 1), group_size)


def sample_clients(
    groups: Mapping[str, int | Sequence[int]],
    fractions: Mapping[str, float],
    rng_seed: int,
) -> dict[str, list[int]]:
    """Draw ``m_g`` distinct clients per group uniformly without replacement.

    ``groups`` maps a group id to either its size ``M_g`` (clients ``0..M_g-1``)
    or its explicit client ids. Missing fractions default to 1. Each group draws
    from its own stream derived from ``rng_seed``; results are sorted.
    """
    selected: dict[str, list[int]] = {}
    for group in sorted(groups):
        members = groups[group]
        ids = list(range(members)) if isinstance(members, int) else sorted(members)
        if not ids:
            raise SamplingError(f"group {group!r} has no clients")
        m = participants_per_round(fractions.get(group, 1.0), len(ids))
        if m == len(ids):
            selected[group] = ids
            continue
        rng = np.random.default_rng(derive_seed(rng_seed, "sample", group))
        picks = rng.choice(len(ids), size=m, replace=False)
        selected[group] = sorted(ids[i] for i in picks)
    return selected
