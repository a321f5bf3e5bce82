# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""CLI entry point for fedtp."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import NoReturn

import click
from rich.console import Console

from fedtp import __version__
from fedtp.core.federation import FederationError
from fedtp.core.logging import get_logger, setup_logging
from fedtp.core.options import (
    STRATEGIES,
    ConfigError,
    ExperimentConfig,
    StrategyConfig,
    dump_config,
    load_config,
)
from fedtp.core.writer import make_run_dir, write_json
from fedtp.data.domains import DataError, get_preset
from fedtp.net.broker import BrokerError
from fedtp.nn.params import ModelError

# Exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

_console = Console()


def _config_options(fn):
    """Shared options that build the ExperimentConfig."""
    decorators = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False,
                     path_type=Path), default=None, help="JSON or YAML config file."),
        click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                     help="Override a config field, e.g. strategy.rounds=10 (repeatable)."),
        click.option("--seed", type=int, default=None, help="Master seed."),
        click.option("--out", type=click.Path(path_type=Path), default=None,
                     help="Output root; runs go to <out>/<timestamp>-seed<seed>."),
        click.option("--run-dir", type=click.Path(path_type=Path), default=None,
                     help="Explicit run directory (overrides --out naming)."),
        click.option("--verbose", is_flag=True, default=None, help="Verbose console output."),
    ]
    for decorator in reversed(decorators):
        fn = decorator(fn)
    return fn


def _load(config_path: Path | None, overrides: tuple[str, ...], **extra) -> ExperimentConfig:
    """Build the config or exit with EXIT_CONFIG."""
    try:
        return load_config(config_path, overrides, **extra)
    except ConfigError as exc:
        click.echo(f"Error: invalid configuration: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _start_run(cfg: ExperimentConfig, run_dir: Path | None) -> Path:
    """Create the run directory, route logs to its ``events.jsonl``, save the config."""
    run_dir = make_run_dir(cfg.out, cfg.seed, run_dir)
    setup_logging(verbose=cfg.verbose, jsonl_path=run_dir / "events.jsonl")
    write_json(run_dir / "config.json", dump_config(cfg))
    get_logger().info("Run directory: %s", run_dir)
    return run_dir


def _fail(exc: Exception) -> NoReturn:
    get_logger().error("%s", exc)
    sys.exit(EXIT_FAILURE)


def _strategy(cfg: ExperimentConfig) -> StrategyConfig:
    if cfg.method not in STRATEGIES:
        click.echo(f"Error: method {cfg.method!r} is not a federated strategy", err=True)
        sys.exit(EXIT_CONFIG)
    from fedtp.services.harness import strategy_for

    return strategy_for(cfg, cfg.method)


def _deployment_targets(cfg: ExperimentConfig) -> tuple[str, str]:
    """Configured targets, defaulting to each group's first domain like ``simulate``."""
    target_a = cfg.target_a or get_preset(cfg.group_a).domains[0]
    target_b = cfg.target_b or get_preset(cfg.group_b).domains[0]
    return target_a, target_b


def _deployment_seed(cfg: ExperimentConfig) -> int:
    from fedtp.services.harness import trial_seed

    return trial_seed(cfg.seed, *_deployment_targets(cfg), 0)


@click.group()
@click.version_option(version=__version__, prog_name="fedtp")
def cli() -> None:
    """Federated transfer learning with task personalization (FTL-TP)."""


# --- Data ---


@cli.command("gen-data")
@_config_options
@click.option("--dest", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Dataset root (default <out>/data).")
@click.option("--partition/--no-partition", "write_shards", default=False,
              help="Also write per-client shards and a roster for networked runs.")
def gen_data(config_path, overrides, run_dir, dest, write_shards, **kwargs):
    """Generate the synthetic domain tables for both groups.

    ``--seed`` also seeds the tables unless ``--set data.seed=...`` is given.
    """
    if kwargs.get("seed") is not None:
        overrides = (f"data.seed={kwargs['seed']}", *overrides)
    cfg = _load(config_path, overrides, **kwargs)
    setup_logging(verbose=cfg.verbose)
    log = get_logger()
    dest = Path(dest or run_dir or cfg.out / "data")

    from fedtp.data.store import write_client_shards, write_group_datasets
    from fedtp.data.synthetic import generate_group
    from fedtp.services.harness import split_group

    try:
        datasets = {g: generate_group(g, cfg.data) for g in (cfg.group_a, cfg.group_b)}
        manifest = write_group_datasets(datasets, dest, cfg.data.seed)
        log.info("Wrote %d groups to %s", len(manifest.groups), dest)
        if write_shards:
            target_a, target_b = _deployment_targets(cfg)
            seed = _deployment_seed(cfg)
            split_a = split_group(cfg, datasets[cfg.group_a], target_a, seed, 0)
            split_b = split_group(
                cfg, datasets[cfg.group_b], target_b, seed, 0, len(split_a.clients)
            )
            roster = write_client_shards(split_a.clients + split_b.clients, dest)
            log.info("Wrote %d client shards and a roster", len(roster.clients))
    except (DataError, OSError) as exc:
        _fail(exc)
    sys.exit(EXIT_OK)


# --- Experiments ---


@cli.command()
@_config_options
@click.option("--method", type=click.Choice(STRATEGIES), default=None,
              help="Federated strategy to simulate.")
@click.option("--workers", type=int, default=None, help="Parallel client training threads.")
def simulate(config_path, overrides, run_dir, **kwargs):
    """Run one in-process federation at the configured targets."""
    cfg = _load(config_path, overrides, **kwargs)
    run_dir = _start_run(cfg, run_dir)

    from fedtp.services.harness import SweepError, run_experiment

    try:
        summary = run_experiment(cfg, run_dir)
    except (FederationError, SweepError, DataError, ModelError) as exc:
        _fail(exc)
    for group, accuracy in summary.target_accuracy.items():
        get_logger().info("%s target %s: accuracy %.4f", group, summary.targets[group], accuracy)
    sys.exit(EXIT_OK)


@cli.command()
@_config_options
@click.option("--paradigm", type=click.Choice(["il", "cl", "ctl"]), default=None,
              help="Baseline paradigm (default: baseline.paradigm).")
def baseline(config_path, overrides, run_dir, paradigm, **kwargs):
    """Train an IL, CL, or CTL baseline at the configured targets."""
    if paradigm is not None:
        overrides = (*overrides, f"baseline.paradigm={paradigm}")
    cfg = _load(config_path, overrides, **kwargs)
    cfg = _load(config_path, overrides, method=cfg.baseline.paradigm, **kwargs)
    run_dir = _start_run(cfg, run_dir)

    from fedtp.services.baselines import BaselineError
    from fedtp.services.harness import SweepError, run_experiment

    try:
        summary = run_experiment(cfg, run_dir)
    except (BaselineError, SweepError, DataError, ModelError) as exc:
        _fail(exc)
    for group, accuracy in summary.target_accuracy.items():
        get_logger().info("%s target %s: accuracy %.4f", group, summary.targets[group], accuracy)
    sys.exit(EXIT_OK)


def _fraction_value(text: str) -> float:
    """``"1/3"`` or ``"0.5"`` as a float."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_fractions(value: str | None) -> list[float] | None:
    if value is None:
        return None
    try:
        fractions = [_fraction_value(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--fractions") from exc
    if not fractions or any(not 0.0 < f <= 1.0 for f in fractions):
        raise click.BadParameter("fractions must lie in (0, 1]", param_hint="--fractions")
    return fractions


@cli.command()
@_config_options
@click.option("--method", type=click.Choice(STRATEGIES + ("il", "cl", "ctl")), default=None,
              help="Method to sweep.")
@click.option("--workers", type=int, default=None, help="Trials in flight at once.")
@click.option("--fractions", default=None,
              help="Comma-separated client fractions (e.g. 1/3,2/3,1) for a fraction sweep.")
def sweep(config_path, overrides, run_dir, fractions, **kwargs):
    """All target combinations times repeats; writes trials.csv and summary.json."""
    cfg = _load(config_path, overrides, **kwargs)
    try:
        fraction_list = _parse_fractions(fractions)
    except click.BadParameter as exc:
        click.echo(f"Error: {exc.format_message()}", err=True)
        sys.exit(EXIT_CONFIG)
    run_dir = _start_run(cfg, run_dir)

    from fedtp.services.harness import SweepError, run_fraction_sweep, run_sweeps
    from fedtp.services.report import render_table, report

    try:
        if fraction_list is not None:
            run_fraction_sweep(cfg, fraction_list, run_dir)
        else:
            run_sweeps(cfg, run_dir)
    except (SweepError, DataError, ModelError) as exc:
        _fail(exc)
    _console.print(render_table(report(run_dir, repeats=cfg.repeats)))
    sys.exit(EXIT_OK)


@cli.command()
@_config_options
@click.option("--rounds", type=int, default=10, show_default=True, help="Server rounds per run.")
@click.option("--clients-per-device", type=int, default=3, show_default=True,
              help="Clients hosted by each edge device.")
def timing(config_path, overrides, run_dir, rounds, clients_per_device, **kwargs):
    """Wall-clock of FTL-TP versus two single-group runs per baseline strategy."""
    cfg = _load(config_path, overrides, **kwargs)
    run_dir = _start_run(cfg, run_dir)

    from fedtp.services.harness import SweepError, run_timing

    try:
        result = run_timing(cfg, rounds, run_dir, clients_per_device=clients_per_device)
    except (FederationError, SweepError, DataError, ModelError) as exc:
        _fail(exc)
    for row in result.rows:
        click.echo(
            f"{row.label:<16} {row.elapsed_ms:10.1f} ms  compute={row.compute_ms:.1f} ms  "
            f"runs={row.runs}  devices={row.devices}"
        )
    sys.exit(EXIT_OK)


@cli.command("report")
@click.argument("results_dir", type=click.Path(path_type=Path))
@click.option("--csv", "out_csv", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Also write the table as CSV.")
@click.option("--repeats", type=int, default=None,
              help="Expected repeats per combination (default: the most seen).")
def report_cmd(results_dir, out_csv, repeats):
    """Per-target mean ± std tables across methods from trials.csv files."""
    setup_logging()

    from fedtp.services.report import ReportError, render_table, report

    try:
        result = report(results_dir, out_csv, repeats)
    except ReportError as exc:
        _fail(exc)
    _console.print(render_table(result))
    if result.warnings:
        click.echo(f"{result.warnings} trial(s) missing", err=True)
    sys.exit(EXIT_OK)


# --- Networked deployment ---


@cli.command()
@_config_options
@click.option("--host", default=None, help="Listen address (default broker.host).")
@click.option("--port", type=int, default=None, help="Listen port (default broker.port).")
@click.option("--credentials", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help="YAML users file (default: broker.username/password).")
def broker(config_path, overrides, run_dir, host, port, credentials, **kwargs):
    """Run the message broker."""
    cfg = _load(config_path, overrides, **kwargs)
    setup_logging(verbose=cfg.verbose)

    from fedtp.net.broker import broker_serve, load_credentials

    try:
        users = (
            load_credentials(credentials)
            if credentials is not None
            else {cfg.broker.username: cfg.broker.password}
        )
        broker_serve(users, host or cfg.broker.host, cfg.broker.port if port is None else port)
    except (BrokerError, OSError) as exc:
        _fail(exc)
    sys.exit(EXIT_OK)


@cli.command()
@_config_options
@click.option("--roster", "roster_path", type=click.Path(exists=True, dir_okay=False,
              path_type=Path), required=True, help="Roster of client ids and groups.")
def server(config_path, overrides, run_dir, roster_path, **kwargs):
    """Run the server node against the broker; writes metrics and checkpoints."""
    cfg = _load(config_path, overrides, **kwargs)
    strategy = _strategy(cfg)
    run_dir = _start_run(cfg, run_dir)

    from fedtp.data.store import read_roster
    from fedtp.net.server_node import run_server_node

    try:
        roster = read_roster(roster_path)
        shapes = {
            group: (cfg.data.num_features, get_preset(group).num_classes)
            for group in roster.by_group()
        }
        result = run_server_node(
            strategy, roster, _deployment_seed(cfg), cfg.broker, shapes=shapes, run_dir=run_dir
        )
    except (FederationError, BrokerError, DataError, OSError) as exc:
        _fail(exc)
    write_json(
        run_dir / "summary.json",
        {
            "method": cfg.method,
            "seed": cfg.seed,
            "rounds": strategy.rounds,
            "groups": sorted(result.models),
            "checkpoints": {g: p.name for g, p in result.checkpoints.items()},
        },
    )
    sys.exit(EXIT_OK)


@cli.command()
@_config_options
@click.option("--client-id", type=int, required=True, help="This client's roster id.")
@click.option("--group", required=True, help="Domain group tag (routing key).")
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False,
              path_type=Path), required=True, help="The client's CSV shard.")
@click.option("--idle-timeout", type=float, default=None,
              help="Give up after this many seconds without a message.")
def client(config_path, overrides, run_dir, client_id, group, data_path, idle_timeout, **kwargs):
    """Run a client node until the server sends stop."""
    cfg = _load(config_path, overrides, **kwargs)
    setup_logging(verbose=cfg.verbose)

    from fedtp.net.client_node import NodeError, run_client_node

    try:
        stats = run_client_node(
            client_id,
            group,
            data_path,
            cfg.broker,
            num_features=cfg.data.num_features,
            idle_timeout=idle_timeout,
        )
    except (NodeError, BrokerError, DataError, OSError) as exc:
        _fail(exc)
    get_logger().info("Client %d published %d updates", client_id, stats.published)
    sys.exit(EXIT_OK)
