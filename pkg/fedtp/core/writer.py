# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Output file writing (JSON, CSV, binary) and run directories."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from pydantic import BaseModel

from fedtp.core.models import RoundMetrics, TrialRecord

METRICS_COLUMNS = [
    "round",
    "group",
    "train_loss",
    "target_accuracy",
    "validation_accuracy",
    "wall_clock_ms",
]
TRIAL_COLUMNS = [
    "method",
    "group",
    "target",
    "combination",
    "repeat",
    "seed",
    "accuracy",
    "fraction",
]


def make_run_dir(out_dir: Path, seed: int, run_dir: Path | None = None) -> Path:
    """Create ``<out>/<UTC timestamp>-seed<seed>`` (or the explicit ``run_dir``)."""
    if run_dir is None:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
        run_dir = Path(out_dir) / f"{stamp}-seed{seed}"
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def write_json(dest: Path, data: dict | list | BaseModel) -> Path:
    """Write JSON (pydantic models are dumped in JSON mode). Returns the path."""
    if isinstance(data, BaseModel):
        data = data.model_dump(mode="json")
    _atomic_write_json(Path(dest), data)
    return Path(dest)


def read_json(path: Path) -> dict | list:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(dest: Path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _csv_cell(row.get(k)) for k in columns})
    atomic_write_text(Path(dest), buffer.getvalue())
    return Path(dest)


def write_metrics_csv(metrics: Sequence[RoundMetrics], dest: Path) -> Path:
    """Write one row per (round, group)."""
    return write_csv(dest, METRICS_COLUMNS, (m.model_dump() for m in metrics))


def write_trials_csv(trials: Sequence[TrialRecord], dest: Path) -> Path:
    return write_csv(dest, TRIAL_COLUMNS, (t.model_dump() for t in trials))


def read_trials_csv(path: Path) -> list[TrialRecord]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    return [
        TrialRecord.model_validate({k: (v if v != "" else None) for k, v in row.items()})
        for row in rows
    ]


def _csv_cell(value: object) -> object:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def atomic_write_bytes(dest: Path, content: bytes) -> None:
    """Write bytes atomically: write to temp file, then rename."""
    dest.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=dest.parent, suffix=".tmp", prefix=".fedtp_")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(content)
        os.replace(tmp_path, dest)
    except BaseException:
        os.unlink(tmp_path)
        raise


def atomic_write_text(dest: Path, content: str) -> None:
    """Write text atomically: write to temp file, then rename."""
    atomic_write_bytes(dest, content.encode("utf-8"))


def _atomic_write_json(dest: Path, data: dict | list) -> None:
    """Write JSON atomically: write to temp file, then rename."""
    text = json.dumps(data, indent=2, default=str, ensure_ascii=False) + "\n"
    atomic_write_text(dest, text)
