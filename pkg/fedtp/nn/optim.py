# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Adam and plain SGD parameter updates (pure functions)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedtp.nn.params import LayerArrays, ModelError, ModelParams


def _check_grad(params: ModelParams, grad: LayerArrays) -> None:
    if len(grad) != len(params):
        raise ModelError(f"Gradient has {len(grad)} layers, params have {len(params)}")
    for i, ((w, b), (gw, gb)) in enumerate(zip(params.layers, grad)):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ModelError(f"Gradient shape mismatch at layer {i}")
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise ModelError(f"Non-finite gradient at layer {i}")


def zeros_like(params: ModelParams) -> LayerArrays:
    return tuple((np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers)


@dataclass(frozen=True)
class AdamState:
    m: LayerArrays
    v: LayerArrays
    t: int = 0
    learning_rate: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ModelError("Adam step counter must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ModelError("Adam betas must lie in [0, 1)")
        if self.eps <= 0 or self.learning_rate <= 0:
            raise ModelError("Adam eps and learning rate must be > 0")

    @classmethod
    def fresh(
        cls,
        params: ModelParams,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> AdamState:
        return cls(
            m=zeros_like(params),
            v=zeros_like(params),
            t=0,
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(
    params: ModelParams, grad: LayerArrays, state: AdamState
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update. Returns new params and a new state."""
    _check_grad(params, grad)
    if len(state.m) != len(params):
        raise ModelError("Adam state does not mirror the parameter layout")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t

    layers, ms, vs = [], [], []
    for (w, b), (gw, gb), (mw, mb), (vw, vb) in zip(params.layers, grad, state.m, state.v):
        new_pair = []
        for p, g, m, v in ((w, gw, mw, vw), (b, gb, mb, vb)):
            m_new = b1 * m + (1.0 - b1) * g
            v_new = b2 * v + (1.0 - b2) * (g * g)
            m_hat = m_new / correction1
            v_hat = v_new / correction2
            step = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
            new_pair.append((p - step, m_new, v_new))
        (nw, mw_new, vw_new), (nb, mb_new, vb_new) = new_pair
        layers.append((nw, nb))
        ms.append((mw_new, mb_new))
        vs.append((vw_new, vb_new))

    new_state = AdamState(
        m=tuple(ms),
        v=tuple(vs),
        t=t,
        learning_rate=state.learning_rate,
        beta1=b1,
        beta2=b2,
        eps=state.eps,
    )
    return params.with_layers(layers), new_state


def sgd_step(params: ModelParams, grad: LayerArrays, learning_rate: float) -> ModelParams:
    """Plain gradient step ``theta - eta * grad``."""
    _check_grad(params, grad)
    if learning_rate < 0:
        raise ModelError(f"learning rate must be >= 0, got {learning_rate}")
    return params.with_layers(
        [
            (w - learning_rate * gw, b - learning_rate * gb)
            for (w, b), (gw, gb) in zip(params.layers, grad)
        ]
    )
