# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Server-side aggregation: FedAvg and shared-base / per-group-head FTL-TP.

Every weighted mean is taken as ``ref + sum_k (n_k / N) (theta_k - ref)`` with
``ref`` the update of the lowest client id and terms summed in ascending
client-id order. Identical inputs therefore aggregate to themselves exactly,
and the input list order never changes the result.
"""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np

from fedtp.core.logging import log_event
from fedtp.fl.client import ClientUpdate
from fedtp.nn.params import LayerArrays, ModelParams


class AggregationError(ValueError):
    """Raised for empty or shape-incompatible update sets."""


def _ordered(updates: Sequence[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise AggregationError("No client updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    ids = [u.client_id for u in ordered]
    if len(set(ids)) != len(ids):
        raise AggregationError(f"Duplicate client ids in updates: {ids}")
    return ordered


def _check_shapes(segments: Sequence[LayerArrays], what: str, ids: Sequence[int]) -> None:
    reference = [(w.shape, b.shape) for w, b in segments[0]]
    for client_id, segment in zip(ids[1:], segments[1:]):
        shapes = [(w.shape, b.shape) for w, b in segment]
        if shapes != reference:
            raise AggregationError(
                f"client {client_id}: {what} shapes {shapes} do not match {reference}"
            )


def weighted_mean(segments: Sequence[LayerArrays], counts: Sequence[int]) -> LayerArrays:
    """Layer-wise ``sum_k (n_k / N) theta_k`` anchored at the first segment.

    Results are clipped to the per-parameter client range so float rounding
    never leaves the convex hull.
    """
    total = int(sum(counts))
    if total < 1:
        raise AggregationError("Sample counts must sum to a positive number")
    weights = [n / total for n in counts]
    out: list[tuple[np.ndarray, np.ndarray]] = []
    for layer in range(len(segments[0])):
        pair: list[np.ndarray] = []
        for part in (0, 1):
            stack = [seg[layer][part] for seg in segments]
            ref = stack[0]
            acc = np.zeros_like(ref)
            for weight, value in zip(weights, stack):
                acc += weight * (value - ref)
            mean = ref + acc
            lo = np.minimum.reduce(stack)
            hi = np.maximum.reduce(stack)
            pair.append(np.clip(mean, lo, hi))
        out.append((pair[0], pair[1]))
    return tuple(out)


def aggregate_fedavg(updates: Sequence[ClientUpdate]) -> ModelParams:
    """Sample-weighted mean of full client models."""
    ordered = _ordered(updates)
    ids = [u.client_id for u in ordered]
    cuts = {u.params.base_cut for u in ordered}
    if len(cuts) != 1:
        raise AggregationError(f"Updates disagree on base_cut: {sorted(cuts)}")
    segments = [u.params.layers for u in ordered]
    _check_shapes(segments, "layer", ids)
    layers = weighted_mean(segments, [u.n_k for u in ordered])
    return ModelParams(layers=layers, base_cut=ordered[0].params.base_cut)


def aggregate_ftl_tp(
    updates: Sequence[ClientUpdate],
    base_cut: int | None = None,
    previous: Mapping[str, ModelParams] | None = None,
    *,
    round: int | None = None,
) -> dict[str, ModelParams]:
    """Shared base over all clients, personalized layers within each group.

    The base is weighted by ``n_k / N`` with ``N`` summed over every group; each
    group's personalized layers by ``n_k / N_g`` over that group only. Groups in
    ``previous`` with no update this round keep their personalized layers and
    take the new base.
    """
    ordered = _ordered(updates)
    base_cut = ordered[0].params.base_cut if base_cut is None else base_cut
    for update in ordered:
        if update.params.base_cut != base_cut:
            raise AggregationError(
                f"client {update.client_id}: base_cut {update.params.base_cut} != {base_cut}"
            )

    ids = [u.client_id for u in ordered]
    base_segments = [u.params.base for u in ordered]
    _check_shapes(base_segments, "base", ids)
    base = weighted_mean(base_segments, [u.n_k for u in ordered])

    by_group: dict[str, list[ClientUpdate]] = {}
    for update in ordered:
        by_group.setdefault(update.group, []).append(update)

    models: dict[str, ModelParams] = {}
    for group in sorted(by_group):
        members = by_group[group]
        segments = [u.params.personal for u in members]
        _check_shapes(segments, f"group {group} personalized", [u.client_id for u in members])
        personal = weighted_mean(segments, [u.n_k for u in members])
        models[group] = ModelParams(layers=base + personal, base_cut=base_cut)

    for group in sorted(previous or {}):
        if group in models:
            continue
        assert previous is not None
        log_event(
            logging.WARNING,
            f"No updates from group {group}; keeping its personalized layers",
            round=round,
            group=group,
            event="group_skipped",
        )
        models[group] = ModelParams(layers=base + previous[group].personal, base_cut=base_cut)
    return dict(sorted(models.items()))


def aggregate_round(
    strategy: str,
    updates: Sequence[ClientUpdate],
    previous: Mapping[str, ModelParams],
    *,
    round: int | None = None,
) -> dict[str, ModelParams]:
    """One server aggregation step for any strategy.

    FTL-TP couples the groups through the shared base. The FedAvg family keeps
    one independent model per group; a group without updates keeps its model.
    """
    if strategy == "ftl-tp":
        return aggregate_ftl_tp(updates, previous=previous, round=round)

    by_group: dict[str, list[ClientUpdate]] = {}
    for update in updates:
        by_group.setdefault(update.group, []).append(update)
    models: dict[str, ModelParams] = {}
    for group in sorted(set(previous) | set(by_group)):
        if group in by_group:
            models[group] = aggregate_fedavg(by_group[group])
        else:
            log_event(
                logging.WARNING,
                f"No updates from group {group}; keeping its model",
                round=round,
                group=group,
                event="group_skipped",
            )
            models[group] = previous[group]
    return models
