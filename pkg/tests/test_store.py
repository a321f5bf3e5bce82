# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Tests for fedtp.data.store."""

import json

import numpy as np
import pytest

from fedtp.core.models import Roster, RosterEntry
from fedtp.data.domains import DataError
from fedtp.data.partition import partition
from fedtp.data.store import (
    MANIFEST_NAME,
    ROSTER_NAME,
    domain_path,
    load_group,
    read_roster,
    write_client_shards,
    write_group_datasets,
    write_roster,
)
from fedtp.data.synthetic import GENERATOR_VERSION, generate_group
from tests.conftest import small_data


class TestGroupDatasets:
    def test_write_and_reload(self, tmp_path):
        data = small_data()
        groups = {"M": generate_group("M", data), "S": generate_group("S", data)}
        manifest = write_group_datasets(groups, tmp_path, seed=0)

        assert domain_path(tmp_path, "S", "Clean").exists()
        on_disk = json.loads((tmp_path / MANIFEST_NAME).read_text(encoding="utf-8"))
        assert on_disk["generator_version"] == GENERATOR_VERSION
        assert manifest.groups["M"].domains == {d: 24 for d in ("Al-Cu", "Cu-Cu", "Cu-Al", "Al-Al")}

        reloaded = load_group(small_data(data_dir=tmp_path), "M")
        assert [d.domain for d in reloaded] == ["Al-Cu", "Cu-Cu", "Cu-Al", "Al-Al"]
        for original, loaded in zip(groups["M"], reloaded):
            assert np.array_equal(original.features, loaded.features)
            assert np.array_equal(original.labels, loaded.labels)

    def test_generates_without_data_dir(self):
        datasets = load_group(small_data(), "T")
        assert [d.domain for d in datasets] == ["DMGD", "New", "Worn"]
        assert all(len(d) == 18 for d in datasets)

    def test_missing_group_dir(self, tmp_path):
        with pytest.raises(DataError, match="No domain tables"):
            load_group(small_data(data_dir=tmp_path), "M")


class TestClientShards:
    def test_shards_and_roster(self, tmp_path):
        datasets = generate_group("S", small_data())
        clients = partition(datasets, "Clean", start_client_id=9).clients
        roster = write_client_shards(clients, tmp_path)

        assert [e.client_id for e in roster.clients] == list(range(9, 15))
        assert (tmp_path / "clients" / "9.csv").exists()
        assert read_roster(tmp_path / ROSTER_NAME) == roster
        assert roster.by_group() == {"S": list(range(9, 15))}

    def test_custom_roster_path(self, tmp_path):
        clients = partition(generate_group("S", small_data()), "Clean").clients
        write_client_shards(clients, tmp_path / "shards", roster_path=tmp_path / "r.yaml")
        assert len(read_roster(tmp_path / "r.yaml").clients) == 6


class TestRoster:
    def test_list_form(self, tmp_path):
        path = tmp_path / "roster.yaml"
        path.write_text("- {client_id: 0, group: M}\n- {client_id: 1, group: S}\n",
                        encoding="utf-8")
        assert read_roster(path).by_group() == {"M": [0], "S": [1]}

    def test_round_trip(self, tmp_path):
        roster = Roster(clients=[RosterEntry(client_id=3, group="M", data_path="x.csv")])
        assert read_roster(write_roster(roster, tmp_path / "r.yaml")) == roster

    def test_duplicate_ids(self, tmp_path):
        path = tmp_path / "roster.yaml"
        path.write_text("- {client_id: 0, group: M}\n- {client_id: 0, group: S}\n",
                        encoding="utf-8")
        with pytest.raises(DataError, match="repeats"):
            read_roster(path)

    def test_invalid_entry(self, tmp_path):
        path = tmp_path / "roster.yaml"
        path.write_text("- {group: M}\n", encoding="utf-8")
        with pytest.raises(DataError, match="Invalid roster"):
            read_roster(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="Cannot read roster"):
            read_roster(tmp_path / "nope.yaml")
