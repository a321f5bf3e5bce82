# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Tests for fedtp.services.harness."""

import json
import time
from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pytest

from fedtp.core.models import TrialRecord
from fedtp.core.writer import read_trials_csv
from fedtp.fl import client as client_module
from fedtp.nn.checkpoint import load_checkpoint
from fedtp.nn.params import shared_base_equal
from fedtp.services.harness import (
    TIMING_ROWS,
    SweepError,
    TrialOutcome,
    aggregate_two_stage,
    combination_label,
    critical_path_ms,
    device_layout,
    load_datasets,
    run_experiment,
    run_fraction_sweep,
    run_sweeps,
    run_target_sweep,
    run_timing,
    run_trial,
    split_group,
    strategy_for,
    summarize,
    trial_seed,
)
from fedtp.services.report import report
from tests.conftest import make_params, make_update, small_experiment


def _record(combination, accuracy, repeat=0, group="M", target="Al-Cu"):
    return TrialRecord(method="ftl-tp", group=group, target=target, combination=combination,
                       repeat=repeat, seed=0, accuracy=accuracy)


class TestTwoStageAggregation:
    def test_example(self):
        trials = [
            _record("S/Clean", 0.78), _record("S/Clean", 0.82, 1),
            _record("S/Contam", 0.86), _record("S/Contam", 0.94, 1),
        ]
        stats, mean, std, pooled = aggregate_two_stage(trials)
        assert [s.combination for s in stats] == ["S/Clean", "S/Contam"]
        assert mean == pytest.approx(0.85)
        assert std == pytest.approx(0.03)
        assert pooled == pytest.approx(np.sqrt((0.02**2 + 0.04**2) / 2))

    def test_single_repeat_zero_std(self):
        _, mean, std, pooled = aggregate_two_stage([_record("S/Clean", 0.5)])
        assert (mean, std, pooled) == (0.5, 0.0, 0.0)

    def test_missing_accuracy_ignored(self):
        stats, mean, _, _ = aggregate_two_stage(
            [_record("S/Clean", 0.6), _record("S/Clean", None, 1)]
        )
        assert stats[0].n == 1 and mean == 0.6

    def test_nothing_to_aggregate(self):
        with pytest.raises(SweepError, match="No completed trials"):
            aggregate_two_stage([_record("S/Clean", None)])

    def test_summarize_filters_group_and_target(self):
        trials = [_record("S/Clean", 0.6), _record("M/Al-Cu", 0.1, group="S", target="Clean")]
        result = summarize("ftl-tp", "M", "Al-Cu", trials)
        assert result.mean == 0.6
        assert len(result.trials) == 1


class TestSeedsAndSplits:
    def test_trial_seed_varies(self):
        seeds = {trial_seed(0, a, b, r) for a in "xy" for b in "uv" for r in range(3)}
        assert len(seeds) == 12

    def test_combination_label(self):
        assert combination_label("S", "Clean") == "S/Clean"

    def test_split_group(self, experiment):
        datasets = load_datasets(experiment)
        split = split_group(experiment, datasets["S"], "Clean", seed=1, repeat=0,
                            start_client_id=9)
        assert split.target.domain == "Clean"
        assert [c.client_id for c in split.clients] == list(range(9, 15))
        assert len(split.validation) == 36 // experiment.folds

    def test_split_unknown_target(self, experiment):
        datasets = load_datasets(experiment)
        with pytest.raises(SweepError, match="Unknown target"):
            split_group(experiment, datasets["S"], "Steel", seed=1, repeat=0)

    def test_strategy_for_swaps_terms(self, experiment):
        cfg = strategy_for(experiment, "fedprox")
        assert (cfg.strategy, cfg.mu, cfg.alpha_l2r) == ("fedprox", 0.1, 0.0)
        assert cfg.hidden_dims == experiment.strategy.hidden_dims
        assert strategy_for(experiment, "ftl-tp", rounds=7).rounds == 7


class TestRunTrial:
    def test_ftl_tp_records_both_groups(self, experiment):
        outcome = run_trial(experiment, load_datasets(experiment), "Al-Cu", "Clean", 0)
        assert [(r.group, r.target, r.combination) for r in outcome.records] == [
            ("M", "Al-Cu", "S/Clean"),
            ("S", "Clean", "M/Al-Cu"),
        ]
        assert len(outcome.metrics) == experiment.strategy.rounds * 2
        assert shared_base_equal(outcome.models)

    def test_deterministic(self, experiment):
        datasets = load_datasets(experiment)
        a = run_trial(experiment, datasets, "Cu-Cu", "Polished", 1)
        b = run_trial(experiment, datasets, "Cu-Cu", "Polished", 1)
        assert [r.accuracy for r in a.records] == [r.accuracy for r in b.records]
        assert a.models["M"].equals(b.models["M"])

    @pytest.mark.parametrize("method", ["il", "cl", "ctl"])
    def test_baselines(self, tmp_path, method):
        cfg = small_experiment(tmp_path, method=method)
        outcome = run_trial(cfg, load_datasets(cfg), "Al-Cu", "Clean", 0)
        assert {r.method for r in outcome.records} == {method}
        assert all(0.0 <= r.accuracy <= 1.0 for r in outcome.records)
        assert outcome.models["S"].num_classes == 3
        assert outcome.models["M"].num_classes == 4

    def test_fedavg_groups_trained_separately(self, tmp_path):
        cfg = small_experiment(tmp_path, method="fedavg")
        outcome = run_trial(cfg, load_datasets(cfg), "Al-Cu", "Clean", 0)
        assert not shared_base_equal(outcome.models)


class TestSweeps:
    def test_trial_count(self, experiment):
        result = run_target_sweep(experiment, "Al-Cu")
        # 3 group-S targets x 2 repeats, group-M records only
        assert len(result.trials) == 6
        assert len(result.combinations) == 3
        assert all(s.n == 2 for s in result.combinations)

    def test_writes_trials_csv(self, experiment, tmp_path):
        cfg = experiment.model_copy(update={"target_b": "Clean"})
        run_target_sweep(cfg, "Al-Cu", run_dir=tmp_path)
        records = read_trials_csv(tmp_path / "trials.csv")
        assert len(records) == 4
        assert {r.group for r in records} == {"M", "S"}

    def test_failure_keeps_partial(self, experiment, tmp_path):
        def flaky(cfg, datasets, target_a, target_b, repeat):
            if target_b == "Polished":
                raise RuntimeError("diverged")
            return TrialOutcome(records=[_record(combination_label("S", target_b), 0.5, repeat)])

        with patch("fedtp.services.harness.run_trial", side_effect=flaky):
            with pytest.raises(SweepError, match="diverged") as excinfo:
                run_target_sweep(experiment, "Al-Cu", run_dir=tmp_path)
        assert excinfo.value.partial
        assert all(r.combination != "S/Polished" for r in excinfo.value.partial)
        assert len(read_trials_csv(tmp_path / "trials.csv")) == len(excinfo.value.partial)

    def test_run_sweeps_summary(self, experiment, tmp_path):
        cfg = experiment.model_copy(update={"target_a": "Cu-Al", "target_b": "Contam"})
        results, trials = run_sweeps(cfg, tmp_path)
        assert [r.target for r in results] == ["Cu-Al"]
        assert len(trials) == 4
        summary = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
        assert summary["sweeps"][0]["target"] == "Cu-Al"

    def test_full_fraction_matches_plain_sweep(self, experiment, tmp_path):
        cfg = experiment.model_copy(update={"target_a": "Al-Cu", "target_b": "Clean"})
        plain, _ = run_sweeps(cfg)
        rows = run_fraction_sweep(cfg, [1.0], tmp_path)
        assert len(rows) == 1
        assert rows[0].fraction == 1.0
        assert rows[0].mean == plain[0].mean
        assert (tmp_path / "fractions.json").exists()

    def test_fraction_rows(self, experiment):
        cfg = experiment.model_copy(update={"target_a": "Al-Cu", "target_b": "Clean"})
        rows = run_fraction_sweep(cfg, [1 / 3, 1.0])
        assert [r.fraction for r in rows] == [1 / 3, 1.0]

    def test_report_keeps_every_fraction(self, experiment, tmp_path):
        cfg = experiment.model_copy(update={"target_a": "Al-Cu", "target_b": "Clean"})
        rows = run_fraction_sweep(cfg, [1 / 3, 1.0], tmp_path)
        trials = read_trials_csv(tmp_path / "trials.csv")
        assert sorted({t.fraction for t in trials}) == [1 / 3, 1.0]

        result = report(tmp_path, repeats=cfg.repeats)
        group_a = [r for r in result.rows if r.group == "M"]
        assert [r.fraction for r in group_a] == [1 / 3, 1.0]
        assert all(r.trials == cfg.repeats and not r.absent for r in group_a)
        assert [r.mean for r in group_a] == [pytest.approx(row.mean) for row in rows]
        assert result.warnings == 0


class TestRunExperiment:
    def test_outputs(self, experiment, tmp_path):
        summary = run_experiment(experiment, tmp_path)
        assert summary.targets == {"M": "Al-Cu", "S": "Clean"}
        for name in ("metrics.csv", "trials.csv", "summary.json", "model-M.ckpt", "model-S.ckpt"):
            assert (tmp_path / name).exists()
        models = {g: load_checkpoint(tmp_path / f"model-{g}.ckpt") for g in ("M", "S")}
        assert shared_base_equal(models)
        lines = (tmp_path / "metrics.csv").read_text(encoding="utf-8").strip().splitlines()
        assert len(lines) == 1 + experiment.strategy.rounds * 2

    def test_workers_do_not_change_models(self, experiment, tmp_path):
        run_experiment(experiment, tmp_path / "one", workers=1)
        run_experiment(experiment, tmp_path / "two", workers=2)
        for group in ("M", "S"):
            a = load_checkpoint(tmp_path / "one" / f"model-{group}.ckpt")
            b = load_checkpoint(tmp_path / "two" / f"model-{group}.ckpt")
            assert a.equals(b)


class TestTiming:
    def test_rows(self, experiment, tmp_path):
        report = run_timing(experiment, rounds=2, run_dir=tmp_path)
        assert [r.label for r in report.rows] == [label for label, _, _ in TIMING_ROWS] + [
            "FTL-TP"
        ]
        assert [r.runs for r in report.rows] == [2, 2, 2, 1]
        assert all(set(r.fingerprints) == {"M", "S"} for r in report.rows)
        assert (tmp_path / "timing.json").exists()

    def test_repeatable_fingerprints(self, experiment):
        a = run_timing(experiment, rounds=1)
        b = run_timing(experiment, rounds=1)
        assert [r.fingerprints for r in a.rows] == [r.fingerprints for r in b.rows]

    def test_deployed_time_within_compute(self, experiment):
        report = run_timing(experiment, rounds=1)
        assert report.clients_per_device == 3
        # 9 group-M clients on 3 devices, 6 group-S clients on 2.
        assert [r.devices for r in report.rows] == [5, 5, 5, 5]
        for row in report.rows:
            assert 0 < row.elapsed_ms <= row.compute_ms + 1e-6

    def test_one_federation_beats_two_when_training_dominates(self, experiment, monkeypatch):
        real_fit = client_module.fit

        def _slow_fit(*args, **kwargs):
            time.sleep(0.01)
            return real_fit(*args, **kwargs)

        monkeypatch.setattr(client_module, "fit", _slow_fit)
        report = run_timing(experiment, rounds=2)
        rows = {r.label: r for r in report.rows}
        for label, _, _ in TIMING_ROWS:
            assert rows["FTL-TP"].elapsed_ms < rows[label].elapsed_ms
        # Two runs wait on a full device twice per round, FTL-TP once.
        assert rows["FTL-TP"].elapsed_ms < 0.75 * rows["FedProx+L2R-sum"].elapsed_ms


class TestDeviceClock:
    def test_layout_fills_devices_in_roster_order(self):
        assert device_layout([5, 6, 7, 8], 3) == {5: 0, 6: 0, 7: 0, 8: 1}

    def test_layout_rejects_empty_devices(self):
        with pytest.raises(SweepError, match="clients_per_device"):
            device_layout([0, 1], 0)

    def test_critical_path_is_busiest_device(self):
        params = make_params()
        updates = [
            replace(make_update(i, params), train_ms=ms)
            for i, ms in enumerate([10.0, 20.0, 25.0])
        ]
        assert critical_path_ms(updates, device_layout([0, 1, 2], 2)) == 30.0
        assert critical_path_ms(updates, device_layout([0, 1, 2], 1)) == 25.0

    def test_no_updates(self):
        assert critical_path_ms([], {}) == 0.0
