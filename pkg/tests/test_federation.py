# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Tests for fedtp.core.federation.run_federation."""

from unittest.mock import patch

import numpy as np
import pytest

from fedtp.core.federation import (
    FederationError,
    group_rosters,
    group_shapes,
    initial_models,
    round_seed,
    run_federation,
)
from fedtp.data.domains import ClientDataset
from fedtp.nn.network import Minibatch, loss_and_grad
from fedtp.nn.optim import sgd_step
from fedtp.nn.params import shared_base_equal
from tests.conftest import make_client, make_domain, small_strategy


def _two_groups(per_group=3, n=12):
    clients = [make_client(i, "M", n=n) for i in range(per_group)]
    clients += [
        ClientDataset(client_id=per_group + i,
                      data=make_domain(group="S", domain="D", n=n, num_classes=2, seed=50 + i))
        for i in range(per_group)
    ]
    return clients


class TestRosters:
    def test_group_rosters(self):
        assert group_rosters(_two_groups(2)) == {"M": [0, 1], "S": [2, 3]}

    def test_duplicate_client_id(self):
        with pytest.raises(FederationError, match="Duplicate"):
            group_rosters([make_client(0), make_client(0)])

    def test_group_shapes(self):
        assert group_shapes(_two_groups(1)) == {"M": (12, 3), "S": (12, 2)}

    def test_inconsistent_shapes(self):
        clients = [make_client(0), make_client(1, num_classes=4)]
        with pytest.raises(FederationError, match="client 1"):
            group_shapes(clients)


class TestInitialModels:
    def test_shared_base(self):
        models = initial_models(small_strategy(), {"M": (12, 3), "S": (12, 2)}, seed=0)
        assert shared_base_equal(models)
        assert models["M"].num_classes == 3 and models["S"].num_classes == 2

    def test_deterministic(self):
        a = initial_models(small_strategy(), {"M": (12, 3)}, seed=4)
        b = initial_models(small_strategy(), {"M": (12, 3)}, seed=4)
        assert a["M"].equals(b["M"])

    def test_round_seed_distinct(self):
        assert len({round_seed(0, t) for t in range(1, 50)}) == 49


class TestRunFederation:
    def test_zero_rounds(self):
        history = run_federation(small_strategy(rounds=0), _two_groups(), seed=0)
        assert len(history.states) == 1
        assert history.final.round == 0
        assert history.metrics == []

    def test_metric_rows_per_round_and_group(self):
        history = run_federation(small_strategy(rounds=3), _two_groups(), seed=0)
        assert len(history.metrics) == 6
        assert [(m.round, m.group) for m in history.metrics[:2]] == [(1, "M"), (1, "S")]
        assert len(history.states) == 4

    def test_base_shared_every_round(self):
        seen = []

        def check(state, rows):
            assert shared_base_equal(state.models)
            seen.append(state.round)

        run_federation(small_strategy(rounds=4), _two_groups(), seed=1, on_round=check)
        assert seen == [1, 2, 3, 4]

    def test_deterministic(self):
        a = run_federation(small_strategy(), _two_groups(), seed=3)
        b = run_federation(small_strategy(), _two_groups(), seed=3)
        for group in ("M", "S"):
            assert a.final.models[group].equals(b.final.models[group])

    def test_workers_do_not_change_result(self):
        cfg = small_strategy(fractions={"M": 2 / 3, "S": 2 / 3})
        serial = run_federation(cfg, _two_groups(), seed=5, workers=1)
        parallel = run_federation(cfg, _two_groups(), seed=5, workers=2)
        for group in ("M", "S"):
            assert serial.final.models[group].equals(parallel.final.models[group])

    def test_keep_states_false(self):
        history = run_federation(small_strategy(rounds=3), _two_groups(), seed=0,
                                 keep_states=False)
        assert [s.round for s in history.states] == [0, 3]

    def test_eval_sets_fill_accuracy(self):
        eval_sets = {"M": make_domain(n=9, seed=99)}
        history = run_federation(small_strategy(rounds=1), _two_groups(), seed=0,
                                 eval_sets=eval_sets)
        by_group = {m.group: m for m in history.metrics}
        assert 0.0 <= by_group["M"].target_accuracy <= 1.0
        assert by_group["S"].target_accuracy is None

    def test_fedavg_groups_have_independent_bases(self):
        history = run_federation(small_strategy("fedavg", rounds=2), _two_groups(), seed=0)
        assert not shared_base_equal(history.final.models)

    def test_client_error_carries_client_id(self):
        with patch("fedtp.core.federation.client_update", side_effect=RuntimeError("boom")):
            with pytest.raises(FederationError, match="boom") as excinfo:
                run_federation(small_strategy(), _two_groups(), seed=0)
        assert excinfo.value.client_id == 0
        assert excinfo.value.round == 1

    def test_missing_initial_model(self):
        models = initial_models(small_strategy(), {"M": (12, 3)}, seed=0)
        with pytest.raises(FederationError, match="No initial model"):
            run_federation(small_strategy(), _two_groups(), seed=0, models=models)

    def test_no_clients(self):
        with pytest.raises(FederationError, match="No clients"):
            run_federation(small_strategy(), [], seed=0)


class TestOneStepEquivalence:
    def test_fedavg_round_equals_centralized_step(self):
        for instance in range(100):
            rng = np.random.default_rng(instance)
            k = int(rng.integers(2, 5))
            n = int(rng.integers(3, 8))
            clients = [make_client(i, "M", n=n, seed=instance * 10 + i) for i in range(k)]
            cfg = small_strategy("fedavg", rounds=1, optimizer="sgd", learning_rate=0.05,
                                 batch_size=n, local_epochs=1)
            start = initial_models(cfg, group_shapes(clients), instance)["M"]

            history = run_federation(cfg, clients, seed=instance)

            pooled = Minibatch(
                np.concatenate([c.data.features for c in clients]),
                np.concatenate([c.data.labels for c in clients]),
            )
            _, grad = loss_and_grad(start, start, pooled)
            expected = sgd_step(start, grad, 0.05)
            result = history.final.models["M"]
            assert np.allclose(result.flatten(), expected.flatten(), rtol=0, atol=1e-10)
