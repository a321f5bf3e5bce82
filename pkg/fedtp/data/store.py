# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""On-disk dataset layout: ``<root>/<group>/<domain>.csv``, manifest, client shards, rosters."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import yaml
from pydantic import ValidationError

from fedtp.core.models import DatasetManifest, GroupManifest, Roster, RosterEntry
from fedtp.core.options import DataConfig
from fedtp.core.writer import atomic_write_text, write_json
from fedtp.data.csv_io import load_csv, save_csv
from fedtp.data.domains import GROUP_PRESETS, ClientDataset, DataError, DomainDataset
from fedtp.data.synthetic import GENERATOR_VERSION, generate_group

MANIFEST_NAME = "manifest.json"
ROSTER_NAME = "roster.yaml"


def domain_path(root: Path, group: str, domain: str) -> Path:
    return Path(root) / group / f"{domain}.csv"


def write_group_datasets(
    groups: Mapping[str, Sequence[DomainDataset]], root: Path, seed: int
) -> DatasetManifest:
    """Write every domain table plus ``manifest.json``."""
    manifest = DatasetManifest(generator_version=GENERATOR_VERSION, seed=seed, groups={})
    for group, datasets in sorted(groups.items()):
        for dataset in datasets:
            save_csv(dataset, domain_path(root, group, dataset.domain))
        first = datasets[0]
        manifest.groups[group] = GroupManifest(
            class_names=list(first.class_names),
            num_features=first.num_features,
            domains={d.domain: len(d) for d in datasets},
        )
    write_json(Path(root) / MANIFEST_NAME, manifest)
    return manifest


def _domain_order(group: str, names: Sequence[str]) -> list[str]:
    preset = GROUP_PRESETS.get(group)
    if preset is None:
        return sorted(names)
    known = [d for d in preset.domains if d in names]
    return known + sorted(set(names) - set(known))


def load_group(data: DataConfig, group: str) -> list[DomainDataset]:
    """A group's domains from ``data.data_dir`` when set, otherwise freshly generated."""
    if data.data_dir is None:
        return generate_group(group, data)
    group_dir = Path(data.data_dir) / group
    files = {p.stem: p for p in group_dir.glob("*.csv")}
    if not files:
        raise DataError(f"No domain tables for group {group} under {group_dir}")
    return [
        load_csv(files[name], num_features=data.num_features)
        for name in _domain_order(group, list(files))
    ]


def write_client_shards(
    clients: Sequence[ClientDataset], root: Path, roster_path: Path | None = None
) -> Roster:
    """Write ``clients/<id>.csv`` per client plus a roster pointing at them."""
    root = Path(root)
    entries: list[RosterEntry] = []
    for client in sorted(clients, key=lambda c: c.client_id):
        path = save_csv(client.data, root / "clients" / f"{client.client_id}.csv")
        entries.append(
            RosterEntry(client_id=client.client_id, group=client.group, data_path=str(path))
        )
    roster = Roster(clients=entries)
    write_roster(roster, roster_path or root / ROSTER_NAME)
    return roster


def write_roster(roster: Roster, path: Path) -> Path:
    text = yaml.safe_dump(roster.model_dump(mode="json"), sort_keys=False)
    atomic_write_text(Path(path), text)
    return Path(path)


def read_roster(path: Path) -> Roster:
    """Read a YAML (or JSON) roster of ``client_id`` / ``group`` / ``data_path`` entries."""
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise DataError(f"Cannot read roster {path}: {exc}") from exc
    if isinstance(raw, list):
        raw = {"clients": raw}
    try:
        roster = Roster.model_validate(raw or {})
    except ValidationError as exc:
        raise DataError(f"Invalid roster {path}: {exc}") from exc
    ids = [entry.client_id for entry in roster.clients]
    if len(set(ids)) != len(ids):
        raise DataError(f"Roster {path} repeats client ids")
    return roster
