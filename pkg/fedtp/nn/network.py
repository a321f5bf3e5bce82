# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Forward pass, composite loss, and exact backward pass for the MLP.

The loss minimized by every client is

    cross_entropy + alpha_l2r * mean_n ||z_n||^2 + (mu / 2) * ||theta - theta_t||^2

where ``z_n`` is the post-activation output of the last base layer. FedAvg sets
both coefficients to zero, FedProx uses ``mu`` only, FedL2R uses ``alpha_l2r``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from fedtp.nn.params import LayerArrays, ModelError, ModelParams


class LabeledData(Protocol):
    features: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class Minibatch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ModelError(f"Minibatch inputs must be a non-empty 2-D array, got {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise ModelError(
                f"Minibatch has {inputs.shape[0]} rows but {labels.shape} labels"
            )
        if not np.isfinite(inputs).all():
            raise ModelError("Minibatch inputs contain NaN or Inf")
        if labels.size and labels.min() < 0:
            raise ModelError("Minibatch labels must be non-negative class indices")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class LossTerms:
    data_loss: float
    l2r: float
    prox: float
    total: float


def _check_input(params: ModelParams, inputs: np.ndarray) -> None:
    expected = params.dims[0]
    if inputs.shape[1] != expected:
        raise ModelError(f"Input dimension {inputs.shape[1]} does not match model input {expected}")


def _forward_cache(
    params: ModelParams, inputs: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Return pre-activations and activations; ``acts[0]`` is the input."""
    pre: list[np.ndarray] = []
    acts: list[np.ndarray] = [inputs]
    last = len(params) - 1
    a = inputs
    for i, (w, b) in enumerate(params.layers):
        z = a @ w.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i < last else z
        acts.append(a)
    return pre, acts


def forward(params: ModelParams, batch: Minibatch) -> tuple[np.ndarray, np.ndarray]:
    """Return pre-softmax logits and the base representation for a batch."""
    _check_input(params, batch.inputs)
    _, acts = _forward_cache(params, batch.inputs)
    return acts[-1], acts[params.base_cut]


def predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    features = np.asarray(features, dtype=np.float64)
    _check_input(params, features)
    _, acts = _forward_cache(params, features)
    return np.argmax(acts[-1], axis=1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _validate_coefficients(mu: float, alpha_l2r: float) -> None:
    if not (np.isfinite(mu) and np.isfinite(alpha_l2r)):
        raise ModelError("mu and alpha_l2r must be finite")
    if mu < 0:
        raise ModelError(f"mu must be >= 0, got {mu}")
    if alpha_l2r < 0:
        raise ModelError(f"alpha_l2r must be >= 0, got {alpha_l2r}")


def loss_and_grad(
    params: ModelParams,
    anchor: ModelParams,
    batch: Minibatch,
    mu: float = 0.0,
    alpha_l2r: float = 0.0,
) -> tuple[LossTerms, LayerArrays]:
    """Evaluate the composite client loss and its exact gradient.

    The L2R term is averaged over the minibatch and only reaches the base layers
    through the base representation. The proximal term covers every parameter.
    """
    _validate_coefficients(mu, alpha_l2r)
    if params.shapes() != anchor.shapes():
        raise ModelError("Anchor shape does not match params shape")
    _check_input(params, batch.inputs)
    num_classes = params.num_classes
    if batch.labels.max() >= num_classes:
        raise ModelError(f"Label {int(batch.labels.max())} out of range for {num_classes} classes")

    pre, acts = _forward_cache(params, batch.inputs)
    size = batch.size
    rows = np.arange(size)
    logp = log_softmax(acts[-1])
    data_loss = float(-logp[rows, batch.labels].mean())

    z = acts[params.base_cut]
    l2r = float((z * z).sum(axis=1).mean())

    prox = 0.0
    diffs: list[tuple[np.ndarray, np.ndarray]] = []
    for (w, b), (wa, ba) in zip(params.layers, anchor.layers):
        dw, db = w - wa, b - ba
        diffs.append((dw, db))
        prox += float((dw * dw).sum() + (db * db).sum())
    prox *= mu / 2.0

    delta = np.exp(logp)
    delta[rows, batch.labels] -= 1.0
    delta /= size

    num_layers = len(params)
    if params.base_cut == num_layers:
        delta = delta + (2.0 * alpha_l2r / size) * z

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * num_layers  # type: ignore[list-item]
    for i in range(num_layers - 1, -1, -1):
        w, _ = params.layers[i]
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i == 0:
            break
        upstream = delta @ w
        if i == params.base_cut:
            upstream = upstream + (2.0 * alpha_l2r / size) * acts[i]
        delta = upstream * (pre[i - 1] > 0.0)

    if mu:
        grads = [(gw + mu * dw, gb + mu * db) for (gw, gb), (dw, db) in zip(grads, diffs)]

    total = data_loss + alpha_l2r * l2r + prox
    terms = LossTerms(data_loss=data_loss, l2r=l2r, prox=prox, total=total)
    return terms, tuple(grads)


def evaluate(params: ModelParams, dataset: LabeledData) -> float:
    """Fraction of samples whose argmax prediction equals the label."""
    labels = np.asarray(dataset.labels)
    if labels.size == 0:
        raise ModelError("Cannot evaluate on an empty dataset")
    return float((predict(params, dataset.features) == labels).mean())
