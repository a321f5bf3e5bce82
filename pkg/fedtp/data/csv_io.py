# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""CSV feature tables: ``f0..f{F-1},label,domain,group`` with class-name labels."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import numpy as np

from fedtp.core.writer import atomic_write_text
from fedtp.data.domains import NUM_FEATURES, DataError, DomainDataset, get_preset

META_COLUMNS = ("label", "domain", "group")


class CsvFormatError(DataError):
    """Raised for a malformed feature table; carries the 1-based file row."""

    def __init__(self, message: str, *, path: Path, row: int | None = None) -> None:
        where = f"{path}" if row is None else f"{path}, row {row}"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.row = row


def feature_columns(num_features: int = NUM_FEATURES) -> list[str]:
    return [f"f{i}" for i in range(num_features)]


def _resolve_class_names(
    group: str, class_names: Sequence[str] | None, path: Path
) -> tuple[str, ...]:
    if class_names is not None:
        return tuple(class_names)
    try:
        return get_preset(group).class_names
    except DataError:
        raise CsvFormatError(
            f"group {group!r} has no preset; pass class_names explicitly", path=path
        ) from None


def load_csv(
    path: Path,
    class_names: Sequence[str] | None = None,
    num_features: int = NUM_FEATURES,
) -> DomainDataset:
    """Parse one domain's feature table, preserving row order.

    Labels are class names, resolved against ``class_names`` or the group
    preset. Every row must carry the same domain and group.
    """
    path = Path(path)
    expected = feature_columns(num_features) + list(META_COLUMNS)
    try:
        handle = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise CsvFormatError(f"cannot open: {exc}", path=path) from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise CsvFormatError("file is empty", path=path)
        got = sum(1 for name in header if name not in META_COLUMNS)
        if header != expected:
            if got != num_features:
                raise CsvFormatError(
                    f"header has {got} feature columns, expected {num_features}",
                    path=path,
                    row=1,
                )
            raise CsvFormatError(
                f"header must be f0..f{num_features - 1} followed by label,domain,group",
                path=path,
                row=1,
            )

        features: list[list[float]] = []
        label_names: list[str] = []
        domain = group = None
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise CsvFormatError(
                    f"has {len(row)} columns, expected {len(expected)}",
                    path=path,
                    row=row_number,
                )
            try:
                values = [float(cell) for cell in row[:num_features]]
            except ValueError:
                bad = next(c for c in row[:num_features] if not _is_float(c))
                raise CsvFormatError(
                    f"non-numeric feature value {bad!r}", path=path, row=row_number
                ) from None
            label, row_domain, row_group = row[num_features:]
            if domain is None:
                domain, group = row_domain, row_group
            elif (row_domain, row_group) != (domain, group):
                raise CsvFormatError(
                    f"mixes domain/group {row_domain}/{row_group} into {domain}/{group}",
                    path=path,
                    row=row_number,
                )
            features.append(values)
            label_names.append(label)

    if not features:
        raise CsvFormatError("no data rows", path=path)

    assert group is not None and domain is not None
    names = _resolve_class_names(group, class_names, path)
    index = {name: i for i, name in enumerate(names)}
    labels: list[int] = []
    for offset, label in enumerate(label_names):
        if label not in index:
            raise CsvFormatError(
                f"unknown label {label!r}; expected one of {list(names)}",
                path=path,
                row=offset + 2,
            )
        labels.append(index[label])

    try:
        return DomainDataset(
            group=group,
            domain=domain,
            features=np.array(features, dtype=np.float64),
            labels=np.array(labels, dtype=np.int64),
            num_classes=len(names),
            class_names=names,
        )
    except DataError as exc:
        raise CsvFormatError(str(exc), path=path) from exc


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def save_csv(dataset: DomainDataset, path: Path) -> Path:
    """Write a dataset so that ``load_csv`` returns bit-identical features."""
    if len(dataset.class_names) != dataset.num_classes:
        raise DataError(f"{dataset.group}/{dataset.domain}: class names are required to save")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(feature_columns(dataset.num_features) + list(META_COLUMNS))
    for row, label in zip(dataset.features, dataset.labels):
        writer.writerow(
            [repr(float(v)) for v in row]
            + [dataset.class_names[int(label)], dataset.domain, dataset.group]
        )
    atomic_write_text(Path(path), buffer.getvalue())
    return Path(path)
