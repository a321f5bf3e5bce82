# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Tests for fedtp.core.models."""

import pytest
from pydantic import ValidationError

from fedtp.core.models import (
    PartitionPlan,
    ReportRow,
    RoundMetrics,
    Roster,
    RosterEntry,
    TrialRecord,
)


class TestRoster:
    def test_by_group_sorted(self):
        roster = Roster(clients=[
            RosterEntry(client_id=4, group="S"),
            RosterEntry(client_id=1, group="M"),
            RosterEntry(client_id=0, group="M"),
        ])
        assert roster.by_group() == {"M": [0, 1], "S": [4]}

    def test_empty(self):
        assert Roster().by_group() == {}

    def test_entry_requires_group(self):
        with pytest.raises(ValidationError):
            RosterEntry(client_id=0)


class TestReportRow:
    def test_absent_when_missing(self):
        assert ReportRow(group="M", target="Al-Cu", method="il", trials=1, missing=2).absent

    def test_present(self):
        row = ReportRow(group="M", target="Al-Cu", method="il", trials=3, mean=0.5, std=0.1,
                        pooled_std=0.1)
        assert not row.absent


class TestRecords:
    def test_round_metrics_optional_fields(self):
        row = RoundMetrics(round=1, group="M", wall_clock_ms=2.0)
        assert row.train_loss is None and row.target_accuracy is None

    def test_trial_record_json(self):
        record = TrialRecord(method="cl", group="S", target="Clean", combination="M/Al-Cu",
                             repeat=0, seed=3, accuracy=0.5)
        assert TrialRecord.model_validate_json(record.model_dump_json()) == record

    def test_partition_plan_mode(self):
        with pytest.raises(ValidationError):
            PartitionPlan(group="M", target_domain="Al-Cu", mode="skewed", client_assignments=[])
