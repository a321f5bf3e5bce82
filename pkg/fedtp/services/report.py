# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Per-target comparison tables recomputed from ``trials.csv`` files."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from rich.table import Table

from fedtp.core.models import ReportRow, TrialRecord
from fedtp.core.writer import read_trials_csv, write_csv
from fedtp.services.harness import aggregate_two_stage

logger = logging.getLogger("fedtp")

REPORT_COLUMNS = [
    "group",
    "target",
    "method",
    "fraction",
    "trials",
    "missing",
    "mean",
    "std",
    "pooled_std",
]


class ReportError(ValueError):
    """Raised when a results directory holds no trial records."""


@dataclass
class Report:
    rows: list[ReportRow]
    warnings: int

    @property
    def methods(self) -> list[str]:
        return sorted({r.method for r in self.rows})


def collect_trials(results_dir: Path) -> list[TrialRecord]:
    """Trial records from every ``trials.csv`` below ``results_dir``.

    A trial seen in several files is counted once (first file in path order).
    """
    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise ReportError(f"{results_dir} is not a directory")
    files = sorted(results_dir.rglob("trials.csv"))
    if not files:
        raise ReportError(f"No trials.csv under {results_dir}")
    seen: set[tuple] = set()
    trials: list[TrialRecord] = []
    for path in files:
        for trial in read_trials_csv(path):
            key = (
                trial.method, trial.group, trial.target, trial.combination, trial.repeat,
                trial.fraction,
            )
            if key in seen:
                continue
            seen.add(key)
            trials.append(trial)
    if not trials:
        raise ReportError(f"trials.csv files under {results_dir} hold no records")
    return trials


def build_report(trials: list[TrialRecord], repeats: int | None = None) -> Report:
    """One row per (group, target, method, fraction).

    The expected trials of a cell are every combination seen for its
    (group, target) times ``repeats`` (default: the most repeats seen). Cells
    missing any of them, or holding trials without accuracy, are marked absent
    and counted as warnings.
    """
    repeats = repeats or max(t.repeat for t in trials) + 1
    combos: dict[tuple[str, str], set[str]] = {}
    cells: dict[tuple[str, str, str, float | None], list[TrialRecord]] = {}
    for trial in trials:
        combos.setdefault((trial.group, trial.target), set()).add(trial.combination)
        key = (trial.group, trial.target, trial.method, trial.fraction)
        cells.setdefault(key, []).append(trial)

    rows: list[ReportRow] = []
    warnings = 0
    for (group, target, method, fraction), cell in sorted(cells.items(), key=_cell_order):
        done = {(t.combination, t.repeat) for t in cell if t.accuracy is not None}
        expected = {(c, r) for c in combos[(group, target)] for r in range(repeats)}
        missing = len(expected - done)
        row = ReportRow(
            group=group,
            target=target,
            method=method,
            fraction=fraction,
            trials=len(done),
            missing=missing,
        )
        if missing:
            warnings += missing
            logger.warning(
                "%s %s/%s%s: %d of %d trials missing",
                method, group, target, _fraction_label(fraction), missing, len(expected),
            )
        else:
            _, mean, std, pooled = aggregate_two_stage(cell)
            row = row.model_copy(update={"mean": mean, "std": std, "pooled_std": pooled})
        rows.append(row)
    return Report(rows=rows, warnings=warnings)


def report(results_dir: Path, out_csv: Path | None = None, repeats: int | None = None) -> Report:
    """Build the comparison report and optionally write it as CSV."""
    result = build_report(collect_trials(results_dir), repeats)
    if out_csv is not None:
        write_csv(out_csv, REPORT_COLUMNS, (r.model_dump() for r in result.rows))
    return result


def _cell_order(item: tuple[tuple[str, str, str, float | None], list]) -> tuple:
    group, target, method, fraction = item[0]
    return group, target, fraction is not None, fraction or 0.0, method


def _fraction_label(fraction: float | None) -> str:
    return "" if fraction is None else f" C={fraction:.2f}"


def render_table(result: Report) -> Table:
    """Targets as rows, methods as columns, cells ``mean ± std``.

    Trials from fraction sweeps get one row per client fraction.
    """
    methods = result.methods
    swept = any(r.fraction is not None for r in result.rows)
    table = Table(title="Target accuracy (mean ± std over combinations)")
    table.add_column("Group")
    table.add_column("Target")
    if swept:
        table.add_column("C", justify="right")
    for method in methods:
        table.add_column(method, justify="right")

    lookup = {(r.group, r.target, r.fraction, r.method): r for r in result.rows}
    keys = {(r.group, r.target, r.fraction) for r in result.rows}
    for group, target, fraction in sorted(
        keys, key=lambda k: (k[0], k[1], k[2] is not None, k[2] or 0.0)
    ):
        cells = []
        for method in methods:
            row = lookup.get((group, target, fraction, method))
            if row is None or row.absent:
                cells.append("absent")
            else:
                cells.append(f"{row.mean:.4f} ± {row.std:.4f}")
        if swept:
            cells.insert(0, "" if fraction is None else f"{fraction:.2f}")
        table.add_row(group, target, *cells)
    return table
