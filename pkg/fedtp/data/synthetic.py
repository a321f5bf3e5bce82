# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Synthetic multi-domain datasets with controllable domain shift.

Each sample is ``x = S u + Q v``. ``S`` spans a shared discriminative subspace
and ``Q`` its orthogonal complement. The class signal ``u`` is drawn around
class means that are the same in every domain, so the Bayes rule in the shared
subspace is linear and domain-invariant. The nuisance part ``v`` carries
per-domain, class-conditional offsets and a per-domain rotated anisotropic
noise covariance. A model that leans on nuisance directions fits its source
domains but does not transfer to an unseen domain.

``basis_seed`` fixes ``S`` and ``Q``; groups generated with the same basis seed
share one feature space, which is what lets base layers transfer across groups.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from fedtp.core.options import DataConfig
from fedtp.data.domains import NUM_FEATURES, DataError, DomainDataset, get_preset
from fedtp.utils.seeds import derive_seed

GENERATOR_VERSION = "1"


@dataclass(frozen=True)
class ShiftSpec:
    group: str
    domains: tuple[str, ...]
    class_names: tuple[str, ...]
    num_features: int = NUM_FEATURES
    subspace_dim: int = 16
    noise_scale: float = 1.0
    class_separation: float = 3.0
    shift_scale: float = 1.0
    basis_seed: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.subspace_dim >= self.num_features:
            raise DataError(
                f"subspace_dim {self.subspace_dim} must be smaller than "
                f"num_features {self.num_features}"
            )
        if self.subspace_dim < 1:
            raise DataError("subspace_dim must be >= 1")
        if self.noise_scale <= 0:
            raise DataError("noise_scale must be > 0")
        if len(set(self.domains)) != len(self.domains) or not self.domains:
            raise DataError("domains must be a non-empty list of distinct names")
        if len(self.class_names) < 2:
            raise DataError("need at least two classes")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def nuisance_dim(self) -> int:
        return self.num_features - self.subspace_dim

    @classmethod
    def for_group(cls, group: str, data: DataConfig | None = None) -> ShiftSpec:
        """Spec for a preset group (M, S, T) using the data settings."""
        data = data or DataConfig()
        preset = get_preset(group)
        return cls(
            group=group,
            domains=preset.domains,
            class_names=preset.class_names,
            num_features=data.num_features,
            subspace_dim=data.subspace_dim,
            noise_scale=data.noise_scale,
            class_separation=data.class_separation,
            shift_scale=data.shift_scale,
            basis_seed=data.basis_seed,
            seed=derive_seed(data.seed, "group", group),
        )


def _orthogonal(size: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(size, size)))
    return q * np.sign(np.diag(r))


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / np.where(norms == 0.0, 1.0, norms)


def domain_offsets(shift: ShiftSpec) -> np.ndarray:
    """Class-conditional nuisance offsets, shape (domains, classes, nuisance_dim).

    Offsets are distinct across domains whenever ``shift_scale > 0``.
    """
    out = np.zeros((len(shift.domains), shift.num_classes, shift.nuisance_dim))
    magnitude = shift.shift_scale * shift.class_separation
    if magnitude == 0.0:
        return out
    for d, domain in enumerate(shift.domains):
        rng = np.random.default_rng(derive_seed(shift.seed, "offsets", domain))
        common = _unit_rows(rng.normal(size=(1, shift.nuisance_dim)))
        per_class = _unit_rows(rng.normal(size=(shift.num_classes, shift.nuisance_dim)))
        out[d] = magnitude * (common + per_class)
    return out


def generate_synthetic(
    shift: ShiftSpec, sizes: Mapping[str, int] | None = None
) -> list[DomainDataset]:
    """Generate one labeled dataset per domain, deterministic per seed.

    ``sizes`` maps domain name to sample count; domains left out are skipped.
    When omitted, every domain in ``shift`` gets the group preset's size.
    """
    if sizes is None:
        size = get_preset(shift.group).domain_size
        sizes = {domain: size for domain in shift.domains}
    unknown = set(sizes) - set(shift.domains)
    if unknown:
        raise DataError(f"Unknown domains for group {shift.group}: {sorted(unknown)}")
    for domain, n in sizes.items():
        if n < 1:
            raise DataError(f"Domain {domain!r} size must be positive, got {n}")

    basis = _orthogonal(shift.num_features, np.random.default_rng(shift.basis_seed))
    shared = basis[:, : shift.subspace_dim]
    nuisance = basis[:, shift.subspace_dim :]

    class_rng = np.random.default_rng(derive_seed(shift.seed, "classes"))
    means = shift.class_separation * _unit_rows(
        class_rng.normal(size=(shift.num_classes, shift.subspace_dim))
    )
    offsets = domain_offsets(shift)

    datasets: list[DomainDataset] = []
    for d, domain in enumerate(shift.domains):
        if domain not in sizes:
            continue
        n = sizes[domain]
        rng = np.random.default_rng(derive_seed(shift.seed, "samples", domain))
        rotation = _orthogonal(shift.nuisance_dim, rng)
        scales = np.exp(rng.normal(0.0, 0.5, size=shift.nuisance_dim))

        labels = rng.permutation(np.arange(n) % shift.num_classes)
        u = means[labels] + shift.noise_scale * rng.normal(size=(n, shift.subspace_dim))
        noise = (rng.normal(size=(n, shift.nuisance_dim)) * scales) @ rotation.T
        v = offsets[d][labels] + shift.noise_scale * noise
        features = u @ shared.T + v @ nuisance.T

        datasets.append(
            DomainDataset(
                group=shift.group,
                domain=domain,
                features=features,
                labels=labels,
                num_classes=shift.num_classes,
                class_names=shift.class_names,
            )
        )
    return datasets


def generate_group(
    group: str, data: DataConfig | None = None, domains: Sequence[str] | None = None
) -> list[DomainDataset]:
    """Generate a preset group with the configured (or preset) domain sizes."""
    data = data or DataConfig()
    shift = ShiftSpec.for_group(group, data)
    size = data.domain_sizes.get(group, get_preset(group).domain_size)
    names = list(domains) if domains is not None else list(shift.domains)
    return generate_synthetic(shift, {name: size for name in names})
