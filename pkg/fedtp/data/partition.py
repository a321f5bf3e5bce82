# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Client partitioning of source domains and k-fold splits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from fedtp.core.models import ClientAssignment, PartitionPlan
from fedtp.data.domains import ClientDataset, DataError, DomainDataset
from fedtp.utils.seeds import derive_seed

CLIENTS_PER_DOMAIN = 3

PartitionMode = Literal["balanced", "unbalanced"]


class PartitionError(DataError):
    """Raised when a domain cannot be split as requested."""


@dataclass(frozen=True)
class UnbalancedRule:
    """Shard sizes at a reference domain size, scaled to the actual size.

    With ``all_domains`` every source domain is split this way; otherwise only
    one designated domain is and the rest stay balanced.
    """

    counts: tuple[int, ...]
    all_domains: bool

    @property
    def reference_size(self) -> int:
        return sum(self.counts)


UNBALANCED_RULES: dict[str, UnbalancedRule] = {
    "M": UnbalancedRule(counts=(30, 60, 110), all_domains=True),
    "S": UnbalancedRule(counts=(15, 25, 50), all_domains=False),
    "T": UnbalancedRule(counts=(15, 25, 50), all_domains=False),
}


@dataclass(frozen=True)
class Partition:
    plan: PartitionPlan
    clients: list[ClientDataset]

    def client_ids(self) -> list[int]:
        return [c.client_id for c in self.clients]


def balanced_sizes(n: int, shards: int = CLIENTS_PER_DOMAIN) -> list[int]:
    """Near-equal shard sizes; the remainder goes to the last shards (200 -> 66, 67, 67)."""
    if n < shards:
        raise PartitionError(f"Domain of size {n} cannot be split into {shards} shards")
    base, extra = divmod(n, shards)
    return [base + (1 if i >= shards - extra else 0) for i in range(shards)]


def unbalanced_sizes(n: int, rule: UnbalancedRule) -> list[int]:
    """Scale ``rule.counts`` to ``n``; the last shard absorbs rounding."""
    scaled = [int(np.floor(c * n / rule.reference_size + 0.5)) for c in rule.counts[:-1]]
    sizes = scaled + [n - sum(scaled)]
    if min(sizes) < 1:
        raise PartitionError(
            f"Domain of size {n} is too small for unbalanced counts {list(rule.counts)}"
        )
    return sizes


def stratified_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """A random permutation in which every class is spread evenly along the order.

    Each class's members get evenly spaced positions in [0, 1); merging by
    position means any contiguous slice holds each class within one sample of
    its proportional share.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    position = np.empty(n)
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        position[members] = (np.arange(members.shape[0]) + 0.5) / members.shape[0]
    tiebreak = rng.permutation(n)
    return np.lexsort((tiebreak, position))


def _split(
    dataset: DomainDataset, sizes: Sequence[int], seed: int, stratified: bool
) -> list[DomainDataset]:
    rng = np.random.default_rng(derive_seed(seed, "partition", dataset.group, dataset.domain))
    order = stratified_order(dataset.labels, rng) if stratified else rng.permutation(len(dataset))
    bounds = np.cumsum([0, *sizes])
    return [dataset.subset(np.sort(order[a:b])) for a, b in zip(bounds[:-1], bounds[1:])]


def partition(
    datasets: Sequence[DomainDataset],
    target_domain: str,
    mode: PartitionMode = "balanced",
    seed: int = 0,
    *,
    start_client_id: int = 0,
    unbalanced_domain: str | None = None,
    stratified: bool = True,
) -> Partition:
    """Split every non-target domain of one group among three clients.

    Client ids are assigned consecutively from ``start_client_id`` in domain
    order. The target domain never reaches a client.
    """
    if not datasets:
        raise PartitionError("No domains to partition")
    groups = {d.group for d in datasets}
    if len(groups) != 1:
        raise PartitionError(f"Datasets span several groups: {sorted(groups)}")
    group = datasets[0].group
    domains = [d.domain for d in datasets]
    if len(set(domains)) != len(domains):
        raise PartitionError(f"Duplicate domains in group {group}: {domains}")
    if target_domain not in domains:
        raise PartitionError(f"Target domain {target_domain!r} not in group {group}: {domains}")
    sources = [d for d in datasets if d.domain != target_domain]
    if not sources:
        raise PartitionError(f"Group {group} has no source domain besides the target")

    rule: UnbalancedRule | None = None
    if mode == "unbalanced":
        if group not in UNBALANCED_RULES:
            raise PartitionError(f"No unbalanced counts defined for group {group!r}")
        rule = UNBALANCED_RULES[group]
        if not rule.all_domains:
            unbalanced_domain = unbalanced_domain or sources[0].domain
            if unbalanced_domain not in {d.domain for d in sources}:
                raise PartitionError(
                    f"Unbalanced domain {unbalanced_domain!r} is not a source domain "
                    f"of group {group}"
                )
        else:
            unbalanced_domain = None
    elif mode != "balanced":
        raise PartitionError(f"Unknown partition mode {mode!r}")
    else:
        unbalanced_domain = None

    clients: list[ClientDataset] = []
    assignments: list[ClientAssignment] = []
    next_id = start_client_id
    for dataset in sources:
        skewed = rule is not None and (rule.all_domains or dataset.domain == unbalanced_domain)
        sizes = (
            unbalanced_sizes(len(dataset), rule)
            if skewed and rule is not None
            else balanced_sizes(len(dataset))
        )
        for shard in _split(dataset, sizes, seed, stratified):
            clients.append(ClientDataset(client_id=next_id, data=shard))
            assignments.append(
                ClientAssignment(
                    client_id=next_id,
                    group=group,
                    domain=shard.domain,
                    sample_count=len(shard),
                )
            )
            next_id += 1

    plan = PartitionPlan(
        group=group,
        target_domain=target_domain,
        mode=mode,
        stratified=stratified,
        unbalanced_domain=unbalanced_domain,
        client_assignments=assignments,
    )
    return Partition(plan=plan, clients=clients)


def kfold_splits(
    data: int | DomainDataset, k: int = 5, seed: int = 0
) -> list[tuple[np.ndarray, np.ndarray]]:
    """``k`` (train, validation) index pairs with disjoint near-equal validation folds."""
    n = data if isinstance(data, int) else len(data)
    if k < 2:
        raise PartitionError(f"k must be >= 2, got {k}")
    if n < k:
        raise PartitionError(f"Cannot make {k} folds from {n} samples")
    order = np.random.default_rng(derive_seed(seed, "kfold", n, k)).permutation(n)
    folds = np.array_split(order, k)
    splits: list[tuple[np.ndarray, np.ndarray]] = []
    for i, validation in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        splits.append((np.sort(train), np.sort(validation)))
    return splits
