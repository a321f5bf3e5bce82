# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Domain groups, labeled domain datasets, and client shards."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NUM_FEATURES = 624


class DataError(ValueError):
    """Raised for malformed or inconsistent datasets."""


@dataclass(frozen=True)
class GroupPreset:
    name: str
    domains: tuple[str, ...]
    class_names: tuple[str, ...]
    domain_size: int

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


# Material, surface, and tool-condition groups of the welding study.
GROUP_PRESETS: dict[str, GroupPreset] = {
    "M": GroupPreset(
        name="M",
        domains=("Al-Cu", "Cu-Cu", "Cu-Al", "Al-Al"),
        class_names=("TC1", "TC2", "TC3", "TC4"),
        domain_size=200,
    ),
    "S": GroupPreset(
        name="S",
        domains=("Clean", "Polished", "Contam"),
        class_names=("New", "Worn", "DMGD"),
        domain_size=90,
    ),
    "T": GroupPreset(
        name="T",
        domains=("DMGD", "New", "Worn"),
        class_names=("Clean", "Polished", "Contam"),
        domain_size=90,
    ),
}


def get_preset(group: str) -> GroupPreset:
    try:
        return GROUP_PRESETS[group]
    except KeyError:
        raise DataError(
            f"Unknown domain group {group!r}; known groups: {sorted(GROUP_PRESETS)}"
        ) from None


def _readonly(array: np.ndarray, dtype: type) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DomainDataset:
    """Labeled feature vectors from one domain of one domain group.

    ``sample_ids`` are row indices into the parent domain and act as provenance
    tags: a shard's ids always refer back to ``domain``.
    """

    group: str
    domain: str
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: tuple[str, ...] = ()
    sample_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        features = _readonly(self.features, np.float64)
        labels = _readonly(self.labels, np.int64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise DataError(f"{self.group}/{self.domain}: need at least one feature row")
        if labels.shape != (features.shape[0],):
            raise DataError(f"{self.group}/{self.domain}: label count does not match rows")
        if not np.isfinite(features).all():
            raise DataError(f"{self.group}/{self.domain}: features contain NaN or Inf")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise DataError(
                f"{self.group}/{self.domain}: labels must lie in [0, {self.num_classes})"
            )
        ids = np.arange(features.shape[0]) if self.sample_ids is None else self.sample_ids
        ids = _readonly(ids, np.int64)
        if ids.shape != labels.shape:
            raise DataError(f"{self.group}/{self.domain}: sample_ids do not match rows")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_ids", ids)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int] | np.ndarray) -> DomainDataset:
        """Rows at ``indices`` (positions in this dataset), keeping provenance ids."""
        idx = np.asarray(indices, dtype=np.int64)
        return DomainDataset(
            group=self.group,
            domain=self.domain,
            features=self.features[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            class_names=self.class_names,
            sample_ids=self.sample_ids[idx],
        )


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """One client's private shard; every client holds data from one domain."""

    client_id: int
    data: DomainDataset

    @property
    def group(self) -> str:
        return self.data.group

    @property
    def domain(self) -> str:
        return self.data.domain

    @property
    def features(self) -> np.ndarray:
        return self.data.features

    @property
    def labels(self) -> np.ndarray:
        return self.data.labels

    @property
    def num_classes(self) -> int:
        return self.data.num_classes

    def __len__(self) -> int:
        return len(self.data)


def pool(
    datasets: Sequence[DomainDataset | ClientDataset], domain: str = "pooled"
) -> DomainDataset:
    """Concatenate datasets of one group in the given order."""
    parts = [d.data if isinstance(d, ClientDataset) else d for d in datasets]
    if not parts:
        raise DataError("Nothing to pool")
    groups = {p.group for p in parts}
    if len(groups) != 1:
        raise DataError(f"Cannot pool datasets from different groups: {sorted(groups)}")
    first = parts[0]
    return DomainDataset(
        group=first.group,
        domain=domain,
        features=np.concatenate([p.features for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        num_classes=first.num_classes,
        class_names=first.class_names,
        sample_ids=np.concatenate([p.sample_ids for p in parts]),
    )


def by_domain(datasets: Sequence[DomainDataset]) -> dict[str, DomainDataset]:
    return {d.domain: d for d in datasets}
