# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Tests for fedtp.nn.optim."""

import numpy as np
import pytest

from fedtp.nn.optim import AdamState, adam_step, sgd_step, zeros_like
from fedtp.nn.params import ModelError
from tests.conftest import make_params


def _grad(params, seed=1):
    rng = np.random.default_rng(seed)
    return tuple((rng.normal(size=w.shape), rng.normal(size=b.shape)) for w, b in params.layers)


class TestSgd:
    def test_exact_step(self):
        params = make_params()
        grad = _grad(params)
        stepped = sgd_step(params, grad, 0.1)
        for (w, b), (gw, gb), (nw, nb) in zip(params.layers, grad, stepped.layers):
            assert np.array_equal(nw, w - 0.1 * gw)
            assert np.array_equal(nb, b - 0.1 * gb)

    def test_original_untouched(self):
        params = make_params()
        before = params.flatten().copy()
        sgd_step(params, _grad(params), 0.5)
        assert np.array_equal(params.flatten(), before)

    def test_negative_learning_rate(self):
        params = make_params()
        with pytest.raises(ModelError, match="learning rate"):
            sgd_step(params, _grad(params), -0.1)

    def test_shape_mismatch(self):
        params = make_params()
        other = make_params((4, 6, 3))
        with pytest.raises(ModelError, match="shape mismatch"):
            sgd_step(params, _grad(other), 0.1)

    def test_non_finite_gradient(self):
        params = make_params()
        grad = list(_grad(params))
        grad[0] = (grad[0][0] * np.nan, grad[0][1])
        with pytest.raises(ModelError, match="Non-finite"):
            sgd_step(params, tuple(grad), 0.1)


class TestAdam:
    def test_first_step_is_signed_learning_rate(self):
        params = make_params()
        grad = _grad(params)
        state = AdamState.fresh(params, learning_rate=0.001)
        stepped, new_state = adam_step(params, grad, state)
        assert new_state.t == 1
        for (w, _), (gw, _), (nw, _) in zip(params.layers, grad, stepped.layers):
            assert np.allclose(nw - w, -0.001 * np.sign(gw), atol=1e-6)

    def test_state_is_new_object(self):
        params = make_params()
        state = AdamState.fresh(params, learning_rate=0.01)
        _, new_state = adam_step(params, _grad(params), state)
        assert state.t == 0
        assert np.array_equal(state.m[0][0], np.zeros_like(params.layers[0][0]))
        assert not np.array_equal(new_state.m[0][0], state.m[0][0])

    def test_moments_accumulate(self):
        params = make_params()
        grad = _grad(params)
        state = AdamState.fresh(params, learning_rate=0.01, beta1=0.5, beta2=0.5)
        _, s1 = adam_step(params, grad, state)
        _, s2 = adam_step(params, grad, s1)
        assert s2.t == 2
        assert np.allclose(s2.m[0][0], 0.75 * grad[0][0])
        assert np.allclose(s2.v[0][0], 0.75 * grad[0][0] ** 2)

    def test_zero_gradient_is_no_op(self):
        params = make_params()
        state = AdamState.fresh(params, learning_rate=0.01)
        stepped, _ = adam_step(params, zeros_like(params), state)
        assert stepped.equals(params)

    @pytest.mark.parametrize("beta1,beta2", [(1.0, 0.999), (0.9, 1.0), (-0.1, 0.9)])
    def test_bad_betas(self, beta1, beta2):
        with pytest.raises(ModelError, match="betas"):
            AdamState.fresh(make_params(), learning_rate=0.01, beta1=beta1, beta2=beta2)

    def test_bad_learning_rate(self):
        with pytest.raises(ModelError):
            AdamState.fresh(make_params(), learning_rate=0.0)

    def test_state_layout_mismatch(self):
        params = make_params()
        state = AdamState.fresh(make_params((4, 3)), learning_rate=0.01)
        with pytest.raises(ModelError, match="mirror"):
            adam_step(params, _grad(params), state)
