# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Tests for fedtp.data.synthetic."""

import numpy as np
import pytest

from fedtp.core.options import BaselineConfig, DataConfig
from fedtp.data.domains import DataError, get_preset, pool
from fedtp.data.synthetic import ShiftSpec, domain_offsets, generate_group, generate_synthetic
from fedtp.services.baselines import train_cl
from tests.conftest import small_data


def _spec(**changes):
    settings = {
        "group": "S",
        "domains": ("Clean", "Polished", "Contam"),
        "class_names": ("New", "Worn", "DMGD"),
        "num_features": 20,
        "subspace_dim": 4,
        "seed": 3,
        **changes,
    }
    return ShiftSpec(**settings)


class TestShiftSpec:
    def test_for_group_uses_preset(self):
        spec = ShiftSpec.for_group("M", small_data())
        assert spec.domains == get_preset("M").domains
        assert spec.num_classes == 4
        assert spec.num_features == 12
        assert spec.nuisance_dim == 8

    def test_subspace_too_large(self):
        with pytest.raises(DataError, match="subspace_dim"):
            _spec(subspace_dim=20)

    def test_duplicate_domains(self):
        with pytest.raises(DataError, match="distinct"):
            _spec(domains=("A", "A"))

    def test_one_class(self):
        with pytest.raises(DataError, match="two classes"):
            _spec(class_names=("only",))

    def test_unknown_group(self):
        with pytest.raises(DataError, match="Unknown domain group"):
            ShiftSpec.for_group("X")


class TestGenerateSynthetic:
    def test_shapes_and_balance(self):
        datasets = generate_synthetic(_spec(), {"Clean": 30, "Polished": 30, "Contam": 30})
        assert [d.domain for d in datasets] == ["Clean", "Polished", "Contam"]
        for data in datasets:
            assert data.features.shape == (30, 20)
            assert np.bincount(data.labels, minlength=3).tolist() == [10, 10, 10]
            assert data.class_names == ("New", "Worn", "DMGD")

    def test_deterministic(self):
        a = generate_synthetic(_spec(), {"Clean": 12})
        b = generate_synthetic(_spec(), {"Clean": 12})
        assert np.array_equal(a[0].features, b[0].features)
        assert np.array_equal(a[0].labels, b[0].labels)

    def test_seed_changes_samples(self):
        a = generate_synthetic(_spec(seed=1), {"Clean": 12})
        b = generate_synthetic(_spec(seed=2), {"Clean": 12})
        assert not np.array_equal(a[0].features, b[0].features)

    def test_domain_subset(self):
        datasets = generate_synthetic(_spec(), {"Contam": 9})
        assert [d.domain for d in datasets] == ["Contam"]

    def test_preset_sizes_by_default(self):
        datasets = generate_synthetic(ShiftSpec.for_group("S", small_data()))
        assert [len(d) for d in datasets] == [90, 90, 90]

    def test_unknown_domain(self):
        with pytest.raises(DataError, match="Unknown domains"):
            generate_synthetic(_spec(), {"Nope": 5})

    def test_non_positive_size(self):
        with pytest.raises(DataError, match="positive"):
            generate_synthetic(_spec(), {"Clean": 0})

    def test_domains_differ(self):
        datasets = generate_synthetic(_spec(), {"Clean": 60, "Polished": 60})
        means = [d.features.mean(axis=0) for d in datasets]
        assert np.linalg.norm(means[0] - means[1]) > 0.5


class TestDomainOffsets:
    def test_distinct_across_domains(self):
        offsets = domain_offsets(_spec())
        assert offsets.shape == (3, 3, 16)
        assert not np.allclose(offsets[0], offsets[1])

    def test_zero_shift(self):
        assert not domain_offsets(_spec(shift_scale=0.0)).any()


class TestGenerateGroup:
    def test_configured_sizes(self):
        datasets = generate_group("M", small_data())
        assert [len(d) for d in datasets] == [24, 24, 24, 24]

    def test_domain_selection(self):
        data = DataConfig(num_features=10, subspace_dim=3, domain_sizes={"M": 8})
        datasets = generate_group("M", data, domains=["Cu-Al"])
        assert [(d.domain, len(d), d.num_features) for d in datasets] == [("Cu-Al", 8, 10)]


class TestSeparability:
    def test_centralized_model_separates_held_out_source(self):
        # Default noise, separation and shift on a narrower feature space.
        domains = generate_group("M", DataConfig(num_features=64))
        sources = [d for d in domains if d.domain != "Al-Cu"]
        pooled = pool(sources)
        order = np.random.default_rng(0).permutation(len(pooled))
        cut = len(pooled) * 4 // 5
        train, held_out = pooled.subset(order[:cut]), pooled.subset(order[cut:])
        cfg = BaselineConfig(epochs=40, batch_size=16, learning_rate=0.001)
        result = train_cl(train, cfg, 0, held_out, [32, 16])
        assert result.target_accuracy >= 0.9
