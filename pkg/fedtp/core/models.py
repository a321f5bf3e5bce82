# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Pydantic records for metrics, trials, sweeps, partitions, and manifests."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class RoundMetrics(BaseModel):
    round: int
    group: str
    train_loss: float | None = None
    target_accuracy: float | None = None
    validation_accuracy: float | None = None
    wall_clock_ms: float


class TrialRecord(BaseModel):
    method: str
    group: str
    target: str
    combination: str
    repeat: int
    seed: int
    accuracy: float | None = None
    fraction: float | None = None


class CombinationStat(BaseModel):
    combination: str
    n: int
    mean: float
    std: float
    variance: float


class SweepResult(BaseModel):
    method: str
    group: str
    target: str
    fraction: float | None = None
    trials: list[TrialRecord] = []
    combinations: list[CombinationStat] = []
    mean: float
    std: float
    pooled_std: float


class FractionRow(BaseModel):
    fraction: float
    target: str
    mean: float
    std: float
    pooled_std: float


class TimingRow(BaseModel):
    label: str
    elapsed_ms: float
    compute_ms: float
    runs: int
    devices: int
    fingerprints: dict[str, str] = {}


class TimingReport(BaseModel):
    rounds: int
    clients_per_device: int
    group_a: str
    group_b: str
    rows: list[TimingRow]


class ClientAssignment(BaseModel):
    client_id: int
    group: str
    domain: str
    sample_count: int


class PartitionPlan(BaseModel):
    group: str
    target_domain: str
    mode: Literal["balanced", "unbalanced"]
    stratified: bool = True
    unbalanced_domain: str | None = None
    client_assignments: list[ClientAssignment]


class GroupManifest(BaseModel):
    class_names: list[str]
    num_features: int
    domains: dict[str, int]


class DatasetManifest(BaseModel):
    generator_version: str
    seed: int
    groups: dict[str, GroupManifest]


class RosterEntry(BaseModel):
    client_id: int
    group: str
    data_path: str | None = None


class Roster(BaseModel):
    clients: list[RosterEntry] = Field(default_factory=list)

    def by_group(self) -> dict[str, list[int]]:
        groups: dict[str, list[int]] = {}
        for entry in self.clients:
            groups.setdefault(entry.group, []).append(entry.client_id)
        return {g: sorted(ids) for g, ids in sorted(groups.items())}


class RunSummary(BaseModel):
    method: str
    seed: int
    rounds: int
    groups: list[str]
    targets: dict[str, str]
    target_accuracy: dict[str, float]
    checkpoints: dict[str, str] = {}
    elapsed_ms: float


class ReportRow(BaseModel):
    group: str
    target: str
    method: str
    fraction: float | None = None
    trials: int
    missing: int = 0
    mean: float | None = None
    std: float | None = None
    pooled_std: float | None = None

    @property
    def absent(self) -> bool:
        return self.missing > 0 or self.mean is None
