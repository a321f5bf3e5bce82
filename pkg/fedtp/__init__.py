# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""fedtp — federated transfer learning with task personalization."""

__version__ = "0.1.0"

from pathlib import Path

from fedtp.core.models import RoundMetrics, RunSummary, SweepResult, TrialRecord
from fedtp.core.options import ExperimentConfig, StrategyConfig, load_config


def run_simulation(
    config: ExperimentConfig | None = None, run_dir: Path | None = None
) -> RunSummary:
    """Run one federation (or baseline) at the configured targets.

    This is the primary library entry point for single runs.

    Args:
        config: Experiment configuration. Uses defaults if not provided.
        run_dir: Output directory. Defaults to ``<out>/<timestamp>-seed<seed>``.

    Returns:
        RunSummary with per-group target accuracy and checkpoint names.
    """
    from fedtp.core.writer import make_run_dir
    from fedtp.services.harness import run_experiment

    if config is None:
        config = ExperimentConfig()
    return run_experiment(config, make_run_dir(config.out, config.seed, run_dir))


def run_sweep(
    config: ExperimentConfig | None = None, run_dir: Path | None = None
) -> list[SweepResult]:
    """Run every target combination ``config.repeats`` times for the configured method.

    Returns:
        One SweepResult per group-A target.
    """
    from fedtp.core.writer import make_run_dir
    from fedtp.services.harness import run_sweeps

    if config is None:
        config = ExperimentConfig()
    results, _ = run_sweeps(config, make_run_dir(config.out, config.seed, run_dir))
    return results


__all__ = [
    "__version__",
    "run_simulation",
    "run_sweep",
    "load_config",
    "ExperimentConfig",
    "StrategyConfig",
    "RoundMetrics",
    "RunSummary",
    "SweepResult",
    "TrialRecord",
]
