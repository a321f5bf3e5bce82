# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Backoff for nodes that start before the broker is listening."""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass
from typing import Callable, TypeVar

from fedtp.core.logging import log_event

T = TypeVar("T")

# Socket-level failures only; a broker that answers and refuses is final.
CONNECT_ERRORS: tuple[type[Exception], ...] = (ConnectionError, TimeoutError, OSError)


@dataclass(frozen=True)
class Backoff:
    base_delay: float = 0.5
    multiplier: float = 2.0
    max_delay: float = 10.0
    jitter: float = 0.25

    def delay(self, attempt: int, rng: random.Random | None = None) -> float:
        """Seconds to wait after failed attempt ``attempt`` (0-based), capped at ``max_delay``."""
        delay = min(self.base_delay * self.multiplier**attempt, self.max_delay)
        if self.jitter:
            spread = delay * self.jitter
            delay += (rng or random).uniform(-spread, spread)
        return max(0.0, delay)


def connect_with_retry(
    open_session: Callable[[], T],
    *,
    retries: int,
    target: str,
    backoff: Backoff = Backoff(),
    client_id: int | None = None,
) -> T:
    """Call ``open_session`` until it succeeds or ``retries`` extra attempts are spent.

    Only ``CONNECT_ERRORS`` are retried; the last one is re-raised once the
    attempts run out.
    """
    for attempt in range(retries + 1):
        try:
            return open_session()
        except CONNECT_ERRORS as exc:
            if attempt >= retries:
                log_event(
                    logging.ERROR,
                    f"Could not reach broker at {target} after {attempt + 1} attempts",
                    client_id=client_id,
                    event="connect_failed",
                    error=str(exc),
                )
                raise
            delay = backoff.delay(attempt)
            log_event(
                logging.WARNING,
                f"Broker at {target} unreachable, retry {attempt + 1}/{retries} in {delay:.2f}s",
                client_id=client_id,
                event="connect_retry",
                error=str(exc),
            )
            time.sleep(delay)
    raise AssertionError("unreachable")  # pragma: no cover
