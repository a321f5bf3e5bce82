# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Experiment orchestration: single runs, target sweeps, fraction sweeps, timing."""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from fedtp.core.federation import run_federation
from fedtp.core.logging import log_event
from fedtp.core.models import (
    CombinationStat,
    FractionRow,
    RoundMetrics,
    RunSummary,
    SweepResult,
    TimingReport,
    TimingRow,
    TrialRecord,
)
from fedtp.core.options import STRATEGIES, ExperimentConfig, StrategyConfig
from fedtp.core.writer import write_json, write_metrics_csv, write_trials_csv
from fedtp.data.domains import ClientDataset, DomainDataset, by_domain
from fedtp.data.partition import Partition, kfold_splits, partition
from fedtp.data.store import load_group
from fedtp.fl.client import ClientUpdate
from fedtp.nn.checkpoint import fingerprint, save_checkpoint
from fedtp.nn.network import evaluate
from fedtp.nn.params import ModelParams
from fedtp.services.baselines import pooled_source, train_cl, train_ctl, train_il
from fedtp.utils.seeds import derive_seed

logger = logging.getLogger("fedtp")

DEFAULT_FRACTIONS = (1 / 3, 2 / 3, 1.0)


class SweepError(RuntimeError):
    """A trial failed; ``partial`` holds the records of the trials that finished."""

    def __init__(self, message: str, partial: Sequence[TrialRecord] = ()):
        super().__init__(message)
        self.partial = list(partial)


@dataclass
class TrialOutcome:
    records: list[TrialRecord]
    metrics: list[RoundMetrics] = field(default_factory=list)
    models: dict[str, ModelParams] = field(default_factory=dict)


@dataclass(frozen=True)
class GroupSplit:
    """One group's client shards, held-out target, and monitoring fold."""

    group: str
    target: DomainDataset
    partition: Partition
    validation: DomainDataset

    @property
    def clients(self) -> list[ClientDataset]:
        return self.partition.clients


# --- Data preparation ---


def load_datasets(cfg: ExperimentConfig) -> dict[str, list[DomainDataset]]:
    return {group: load_group(cfg.data, group) for group in (cfg.group_a, cfg.group_b)}


def trial_seed(master_seed: int, target_a: str, target_b: str, repeat: int) -> int:
    return derive_seed(master_seed, target_a, target_b, repeat)


def combination_label(group: str, target: str) -> str:
    return f"{group}/{target}"


def split_group(
    cfg: ExperimentConfig,
    datasets: Sequence[DomainDataset],
    target: str,
    seed: int,
    repeat: int,
    start_client_id: int = 0,
) -> GroupSplit:
    """Partition the sources among clients and pick fold ``repeat`` for monitoring.

    The validation fold is drawn from the pooled source data and only feeds the
    per-round validation accuracy; the clients keep their full shards.
    """
    domains = by_domain(datasets)
    if target not in domains:
        raise SweepError(f"Unknown target domain {target!r}; known: {sorted(domains)}")
    shards = partition(
        datasets,
        target,
        cfg.partition_mode,
        derive_seed(seed, "partition"),
        start_client_id=start_client_id,
        unbalanced_domain=cfg.unbalanced_domain,
    )
    pooled = pooled_source(shards.clients)
    folds = kfold_splits(pooled, cfg.folds, derive_seed(seed, "folds"))
    _, validation_idx = folds[repeat % cfg.folds]
    return GroupSplit(
        group=datasets[0].group,
        target=domains[target],
        partition=shards,
        validation=pooled.subset(validation_idx),
    )


def strategy_for(cfg: ExperimentConfig, strategy: str, **changes: object) -> StrategyConfig:
    """``cfg.strategy`` with another strategy's terms (or explicit ``changes``)."""
    data = cfg.strategy.model_dump()
    if strategy != data["strategy"]:
        data.update(StrategyConfig.preset(strategy).model_dump(include={"mu", "alpha_l2r"}))
    data.update(strategy=strategy, **changes)
    return StrategyConfig(**data)


# --- Trials ---


def run_trial(
    cfg: ExperimentConfig,
    datasets: dict[str, list[DomainDataset]],
    target_a: str,
    target_b: str,
    repeat: int,
    *,
    method: str | None = None,
    workers: int = 1,
) -> TrialOutcome:
    """One (target_a, target_b, repeat) trial; records accuracy for both groups."""
    method = method or cfg.method
    seed = trial_seed(cfg.seed, target_a, target_b, repeat)
    split_a = split_group(cfg, datasets[cfg.group_a], target_a, seed, repeat)
    split_b = split_group(
        cfg, datasets[cfg.group_b], target_b, seed, repeat, len(split_a.clients)
    )
    splits = {cfg.group_a: split_a, cfg.group_b: split_b}
    others = {cfg.group_a: (cfg.group_b, target_b), cfg.group_b: (cfg.group_a, target_a)}

    models: dict[str, ModelParams] = {}
    metrics: list[RoundMetrics] = []
    accuracy: dict[str, float] = {}

    if method in STRATEGIES:
        history = run_federation(
            strategy_for(cfg, method),
            split_a.clients + split_b.clients,
            seed,
            eval_sets={g: s.target for g, s in splits.items()},
            validation_sets={g: s.validation for g, s in splits.items()},
            workers=workers,
            keep_states=False,
        )
        models = history.final.models
        metrics = history.metrics
        for group, split in splits.items():
            accuracy[group] = evaluate(models[group], split.target)
    else:
        hidden = cfg.strategy.hidden_dims
        for group, split in splits.items():
            if method == "il":
                result = train_il(split.clients, cfg.baseline, seed, split.target, hidden)
            elif method == "cl":
                result = train_cl(
                    pooled_source(split.clients), cfg.baseline, seed, split.target, hidden
                )
            elif method == "ctl":
                source = splits[others[group][0]]
                result = train_ctl(
                    pooled_source(source.clients),
                    pooled_source(split.clients),
                    cfg.baseline,
                    seed,
                    split.target,
                    hidden,
                )
            else:
                raise SweepError(f"Unknown method {method!r}")
            models[group] = result.model
            metrics.extend(result.metrics)
            accuracy[group] = result.target_accuracy

    records = [
        TrialRecord(
            method=method,
            group=group,
            target=splits[group].target.domain,
            combination=combination_label(*others[group]),
            repeat=repeat,
            seed=seed,
            accuracy=accuracy[group],
        )
        for group in (cfg.group_a, cfg.group_b)
    ]
    return TrialOutcome(records=records, metrics=metrics, models=models)


# --- Aggregation ---


def aggregate_two_stage(
    trials: Sequence[TrialRecord],
) -> tuple[list[CombinationStat], float, float, float]:
    """Mean and population std per combination, then the mean of each across combinations.

    Returns ``(per_combination, mean_of_means, mean_of_stds, pooled_std)`` where
    the pooled std is the square root of the mean per-combination variance.
    Trials without an accuracy are ignored.
    """
    by_combination: dict[str, list[float]] = {}
    for trial in trials:
        if trial.accuracy is not None:
            by_combination.setdefault(trial.combination, []).append(trial.accuracy)
    if not by_combination:
        raise SweepError("No completed trials to aggregate")
    stats: list[CombinationStat] = []
    for combination in sorted(by_combination):
        values = np.array(by_combination[combination], dtype=np.float64)
        stats.append(
            CombinationStat(
                combination=combination,
                n=int(values.size),
                mean=float(values.mean()),
                std=float(values.std()),
                variance=float(values.var()),
            )
        )
    mean = float(np.mean([s.mean for s in stats]))
    std = float(np.mean([s.std for s in stats]))
    pooled = float(np.sqrt(np.mean([s.variance for s in stats])))
    return stats, mean, std, pooled


def summarize(
    method: str,
    group: str,
    target: str,
    trials: Sequence[TrialRecord],
    fraction: float | None = None,
) -> SweepResult:
    selected = [t for t in trials if t.group == group and t.target == target]
    stats, mean, std, pooled = aggregate_two_stage(selected)
    return SweepResult(
        method=method,
        group=group,
        target=target,
        fraction=fraction,
        trials=selected,
        combinations=stats,
        mean=mean,
        std=std,
        pooled_std=pooled,
    )


# --- Sweeps ---


async def _run_trials(
    cfg: ExperimentConfig,
    datasets: dict[str, list[DomainDataset]],
    jobs: list[tuple[str, str, int]],
) -> tuple[list[TrialOutcome | None], list[tuple[tuple[str, str, int], Exception]]]:
    """Run trials with at most ``cfg.workers`` in flight; each fills its own slot."""
    semaphore = asyncio.Semaphore(cfg.workers)
    slots: list[TrialOutcome | None] = [None] * len(jobs)
    failures: list[tuple[tuple[str, str, int], Exception]] = []
    failed = False

    async def _worker(index: int, job: tuple[str, str, int]) -> None:
        nonlocal failed
        if failed:
            return
        async with semaphore:
            if failed:
                return
            loop = asyncio.get_running_loop()
            try:
                slots[index] = await loop.run_in_executor(
                    None, run_trial, cfg, datasets, *job
                )
            except Exception as exc:
                failed = True
                failures.append((job, exc))
                log_event(
                    logging.ERROR,
                    f"Trial {job} failed",
                    event="trial_failed",
                    details=f"target_a={job[0]} target_b={job[1]} repeat={job[2]}",
                    error=str(exc),
                )

    await asyncio.gather(*(_worker(i, job) for i, job in enumerate(jobs)))
    return slots, failures


def _sweep_trials(
    cfg: ExperimentConfig,
    target_a: str,
    datasets: dict[str, list[DomainDataset]],
    fraction: float | None = None,
) -> list[TrialRecord]:
    """Records of every trial for one group-A target; raises SweepError on failure.

    A swept ``fraction`` is stamped on every record.
    """
    targets_b = [cfg.target_b] if cfg.target_b else [d.domain for d in datasets[cfg.group_b]]
    jobs = [(target_a, tb, r) for tb in targets_b for r in range(cfg.repeats)]
    logger.info(
        "Sweep %s: %s target %s, %d trials", cfg.method, cfg.group_a, target_a, len(jobs)
    )
    slots, failures = asyncio.run(_run_trials(cfg, datasets, jobs))
    records = [rec for slot in slots if slot is not None for rec in slot.records]
    if fraction is not None:
        records = [rec.model_copy(update={"fraction": fraction}) for rec in records]
    if failures:
        job, exc = failures[0]
        raise SweepError(f"Trial {job} failed: {exc}", partial=records) from exc
    return records


def run_target_sweep(
    cfg: ExperimentConfig,
    target_a: str | None = None,
    *,
    datasets: dict[str, list[DomainDataset]] | None = None,
    run_dir: Path | None = None,
    fraction: float | None = None,
) -> SweepResult:
    """All group-B targets times ``cfg.repeats`` for one group-A target.

    Records for both groups go to ``trials.csv`` in ``run_dir``; after a
    failure the finished trials are still written before ``SweepError``.
    """
    datasets = datasets or load_datasets(cfg)
    target_a = target_a or cfg.target_a or datasets[cfg.group_a][0].domain
    try:
        records = _sweep_trials(cfg, target_a, datasets)
    except SweepError as exc:
        if run_dir is not None:
            write_trials_csv(exc.partial, Path(run_dir) / "trials.csv")
        raise
    if run_dir is not None:
        write_trials_csv(records, Path(run_dir) / "trials.csv")
    return summarize(cfg.method, cfg.group_a, target_a, records, fraction)


def _group_a_targets(
    cfg: ExperimentConfig, datasets: dict[str, list[DomainDataset]]
) -> list[str]:
    return [cfg.target_a] if cfg.target_a else [d.domain for d in datasets[cfg.group_a]]


def run_sweeps(
    cfg: ExperimentConfig,
    run_dir: Path | None = None,
    fractions: Sequence[float | None] = (None,),
) -> tuple[list[SweepResult], list[TrialRecord]]:
    """A target sweep per group-A target (or just ``cfg.target_a``) and per fraction.

    ``None`` as a fraction keeps the configured per-group fractions; any other
    value is applied to both groups. Writes ``trials.csv`` and ``summary.json``.
    """
    datasets = load_datasets(cfg)
    results: list[SweepResult] = []
    trials: list[TrialRecord] = []
    for fraction in fractions:
        sweep_cfg = cfg
        if fraction is not None:
            strategy = cfg.strategy.model_copy(
                update={"fractions": {cfg.group_a: fraction, cfg.group_b: fraction}}
            )
            sweep_cfg = cfg.model_copy(update={"strategy": strategy})
        for target in _group_a_targets(cfg, datasets):
            try:
                records = _sweep_trials(sweep_cfg, target, datasets, fraction)
            except SweepError as exc:
                if run_dir is not None:
                    write_trials_csv(trials + exc.partial, Path(run_dir) / "trials.csv")
                raise SweepError(str(exc), partial=trials + exc.partial) from exc
            trials.extend(records)
            results.append(summarize(cfg.method, cfg.group_a, target, records, fraction))

    if run_dir is not None:
        write_trials_csv(trials, Path(run_dir) / "trials.csv")
        write_json(
            Path(run_dir) / "summary.json",
            {"method": cfg.method, "sweeps": [r.model_dump(mode="json") for r in results]},
        )
    return results, trials


def run_fraction_sweep(
    cfg: ExperimentConfig,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    run_dir: Path | None = None,
) -> list[FractionRow]:
    """Target sweeps per client fraction; one table row per (fraction, group-A target)."""
    results, _ = run_sweeps(cfg, run_dir, fractions)
    rows = [
        FractionRow(
            fraction=r.fraction if r.fraction is not None else 1.0,
            target=r.target,
            mean=r.mean,
            std=r.std,
            pooled_std=r.pooled_std,
        )
        for r in results
    ]
    if run_dir is not None:
        write_json(
            Path(run_dir) / "fractions.json", [row.model_dump(mode="json") for row in rows]
        )
    return rows


# --- Single runs ---


def run_experiment(
    cfg: ExperimentConfig, run_dir: Path, *, workers: int | None = None
) -> RunSummary:
    """One trial at the configured targets; writes metrics, checkpoints, and a summary."""
    run_dir = Path(run_dir)
    datasets = load_datasets(cfg)
    target_a = cfg.target_a or datasets[cfg.group_a][0].domain
    target_b = cfg.target_b or datasets[cfg.group_b][0].domain
    started = time.perf_counter()
    outcome = run_trial(
        cfg, datasets, target_a, target_b, 0, workers=workers or cfg.workers
    )
    elapsed_ms = (time.perf_counter() - started) * 1000.0

    write_metrics_csv(outcome.metrics, run_dir / "metrics.csv")
    write_trials_csv(outcome.records, run_dir / "trials.csv")
    checkpoints: dict[str, str] = {}
    for group, params in sorted(outcome.models.items()):
        path = save_checkpoint(params, run_dir / f"model-{group}.ckpt")
        checkpoints[group] = path.name

    summary = RunSummary(
        method=cfg.method,
        seed=cfg.seed,
        rounds=cfg.strategy.rounds if cfg.method in STRATEGIES else cfg.baseline.epochs,
        groups=[cfg.group_a, cfg.group_b],
        targets={r.group: r.target for r in outcome.records},
        target_accuracy={r.group: r.accuracy for r in outcome.records if r.accuracy is not None},
        checkpoints=checkpoints,
        elapsed_ms=elapsed_ms,
    )
    write_json(run_dir / "summary.json", summary)
    return summary


# --- Timing ---

TIMING_ROWS: tuple[tuple[str, str, dict[str, float]], ...] = (
    ("FedAvg-sum", "fedavg", {}),
    ("FedProx-sum", "fedprox", {}),
    ("FedProx+L2R-sum", "fedl2r", {"mu": 0.1, "alpha_l2r": 0.01}),
)
# Edge devices host three clients each: groups M and S run on 3 and 2 devices.
CLIENTS_PER_DEVICE = 3


def device_layout(client_ids: Sequence[int], clients_per_device: int) -> dict[int, int]:
    """Map each client to an edge device, filling devices in roster order."""
    if clients_per_device < 1:
        raise SweepError(f"clients_per_device must be >= 1, got {clients_per_device}")
    return {cid: i // clients_per_device for i, cid in enumerate(client_ids)}


def critical_path_ms(updates: Sequence[ClientUpdate], layout: Mapping[int, int]) -> float:
    """Training time of one round when devices run concurrently.

    A device trains its sampled clients one after another, so the round waits
    for the most loaded device.
    """
    loads: dict[int, float] = {}
    for update in updates:
        device = layout[update.client_id]
        loads[device] = loads.get(device, 0.0) + update.train_ms
    return max(loads.values(), default=0.0)


@dataclass
class _RunClock:
    deployed_ms: float
    compute_ms: float
    devices: int
    models: dict[str, ModelParams]


def _timed_run(
    cfg: StrategyConfig, clients: Sequence[ClientDataset], seed: int, clients_per_device: int
) -> _RunClock:
    """One federation timed from initial weights to the last aggregation.

    Server phases count in full. Client training counts at each round's
    critical path over the devices instead of its sequential sum.
    """
    layout = device_layout([c.client_id for c in clients], clients_per_device)
    sequential_ms = 0.0
    critical_ms = 0.0

    def _on_updates(round: int, updates: list[ClientUpdate]) -> None:
        nonlocal sequential_ms, critical_ms
        sequential_ms += sum(u.train_ms for u in updates)
        critical_ms += critical_path_ms(updates, layout)

    started = time.perf_counter()
    history = run_federation(cfg, clients, seed, keep_states=False, on_updates=_on_updates)
    compute_ms = (time.perf_counter() - started) * 1000.0
    return _RunClock(
        deployed_ms=compute_ms - sequential_ms + critical_ms,
        compute_ms=compute_ms,
        devices=len(set(layout.values())),
        models=history.final.models,
    )


def run_timing(
    cfg: ExperimentConfig,
    rounds: int = 10,
    run_dir: Path | None = None,
    *,
    clients_per_device: int = CLIENTS_PER_DEVICE,
) -> TimingReport:
    """Wall-clock of two single-group runs per baseline strategy versus one FTL-TP run.

    ``elapsed_ms`` is the deployed time: every device trains its clients while
    the others do, and the server waits each round for the slowest one.
    ``compute_ms`` is the same run's plain in-process time. Every run uses full
    participation. Each row's fingerprints identify the produced models so
    repeated timings can be checked for identical learning.
    """
    datasets = load_datasets(cfg)
    target_a = cfg.target_a or datasets[cfg.group_a][0].domain
    target_b = cfg.target_b or datasets[cfg.group_b][0].domain
    seed = trial_seed(cfg.seed, target_a, target_b, 0)
    split_a = split_group(cfg, datasets[cfg.group_a], target_a, seed, 0)
    split_b = split_group(
        cfg, datasets[cfg.group_b], target_b, seed, 0, len(split_a.clients)
    )
    common = {"rounds": rounds, "fractions": {}}

    rows: list[TimingRow] = []
    for label, strategy, terms in TIMING_ROWS:
        strategy_cfg = strategy_for(cfg, strategy, **common, **terms)
        clocks = {
            split.group: _timed_run(strategy_cfg, split.clients, seed, clients_per_device)
            for split in (split_a, split_b)
        }
        rows.append(
            TimingRow(
                label=label,
                elapsed_ms=sum(c.deployed_ms for c in clocks.values()),
                compute_ms=sum(c.compute_ms for c in clocks.values()),
                runs=2,
                devices=sum(c.devices for c in clocks.values()),
                fingerprints={g: fingerprint(c.models[g]) for g, c in clocks.items()},
            )
        )

    clock = _timed_run(
        strategy_for(cfg, "ftl-tp", **common),
        split_a.clients + split_b.clients,
        seed,
        clients_per_device,
    )
    rows.append(
        TimingRow(
            label="FTL-TP",
            elapsed_ms=clock.deployed_ms,
            compute_ms=clock.compute_ms,
            runs=1,
            devices=clock.devices,
            fingerprints={g: fingerprint(m) for g, m in clock.models.items()},
        )
    )
    for row in rows:
        logger.info(
            "%-16s %10.1f ms deployed %10.1f ms compute (%d runs, %d devices)",
            row.label, row.elapsed_ms, row.compute_ms, row.runs, row.devices,
        )

    report = TimingReport(
        rounds=rounds,
        clients_per_device=clients_per_device,
        group_a=cfg.group_a,
        group_b=cfg.group_b,
        rows=rows,
    )
    if run_dir is not None:
        write_json(Path(run_dir) / "timing.json", report)
    return report
