# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Logging for federation runs: rich console output plus a per-run ``events.jsonl``.

Every JSONL line carries the timestamp, level and message, the run it belongs
to, and whichever federation fields (round, group, client, event) were set.
"""

from __future__ import annotations

import json
import logging
from datetime import datetime, timezone
from pathlib import Path

from rich.console import Console
from rich.logging import RichHandler

LOGGER_NAME = "fedtp"

_console = Console(stderr=True)

EVENT_FIELDS = ("round", "group", "client_id", "event", "details", "error")


class RunFilter(logging.Filter):
    """Tags records with the run they were logged in."""

    def __init__(self, run: str) -> None:
        super().__init__()
        self.run = run

    def filter(self, record: logging.LogRecord) -> bool:
        record.run = self.run
        return True


class JsonlFormatter(logging.Formatter):
    """One JSON object per record; federation fields that are unset are omitted."""

    def format(self, record: logging.LogRecord) -> str:
        entry: dict = {
            "timestamp": datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
            "level": record.levelname,
            "message": record.getMessage(),
        }
        run = getattr(record, "run", None)
        if run is not None:
            entry["run"] = run
        for name in EVENT_FIELDS:
            value = getattr(record, name, None)
            if value is not None:
                entry[name] = value
        if record.exc_info:
            entry["traceback"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)


class JsonlFileHandler(logging.FileHandler):
    def __init__(self, path: Path, run: str | None = None) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        super().__init__(str(path), mode="a", encoding="utf-8")
        self.setFormatter(JsonlFormatter())
        if run is not None:
            self.addFilter(RunFilter(run))


def setup_logging(
    *, verbose: bool = False, jsonl_path: Path | None = None, run: str | None = None
) -> logging.Logger:
    """Configure the fedtp logger for one command.

    Console output goes through rich at INFO (DEBUG when ``verbose``). With
    ``jsonl_path`` every record, DEBUG included, is also appended there as JSON,
    tagged with ``run`` (default: the name of the file's directory).
    """
    logger = logging.getLogger(LOGGER_NAME)
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)

    console = RichHandler(
        console=_console,
        show_time=verbose,
        show_path=verbose,
        rich_tracebacks=True,
        markup=False,
    )
    console.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.addHandler(console)

    if jsonl_path is not None:
        jsonl_path = Path(jsonl_path)
        events = JsonlFileHandler(jsonl_path, run or jsonl_path.parent.name)
        events.setLevel(logging.DEBUG)
        logger.addHandler(events)
        # JSONL keeps DEBUG events even when the console shows INFO only.
        logger.setLevel(logging.DEBUG)

    return logger


def get_logger() -> logging.Logger:
    return logging.getLogger(LOGGER_NAME)


def log_event(
    level: int,
    message: str,
    *,
    round: int | None = None,
    group: str | None = None,
    client_id: int | None = None,
    event: str | None = None,
    details: str | None = None,
    error: str | None = None,
) -> None:
    """Log a federation event; only the fields given end up on the record."""
    fields = {
        "round": round,
        "group": group,
        "client_id": client_id,
        "event": event,
        "details": details,
        "error": error,
    }
    get_logger().log(level, message, extra={k: v for k, v in fields.items() if v is not None})
