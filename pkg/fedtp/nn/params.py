# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Layer specs, model parameters, and Kaiming initialization."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Mapping, Sequence

import numpy as np

from fedtp.utils.seeds import derive_seed

# One (weight[out, in], bias[out]) pair per layer.
LayerArrays = tuple[tuple[np.ndarray, np.ndarray], ...]


class ModelError(ValueError):
    """Raised for malformed layer specs, parameter shapes, or non-finite values."""


class Activation(str, Enum):
    RELU = "relu"
    SOFTMAX = "softmax"


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: Activation = Activation.RELU

    def __post_init__(self) -> None:
        if self.in_dim < 1 or self.out_dim < 1:
            raise ModelError(
                f"Layer dimensions must be >= 1, got {self.in_dim}->{self.out_dim}"
            )


def build_layer_specs(
    num_features: int, hidden_dims: Sequence[int], num_classes: int
) -> list[LayerSpec]:
    """Build the ReLU MLP used by every paradigm, ending in a softmax layer."""
    dims = [num_features, *hidden_dims, num_classes]
    specs = [LayerSpec(dims[i], dims[i + 1]) for i in range(len(dims) - 2)]
    specs.append(LayerSpec(dims[-2], dims[-1], Activation.SOFTMAX))
    return specs


def validate_specs(specs: Sequence[LayerSpec]) -> None:
    """Check that a spec list chains and only the last layer is softmax."""
    if not specs:
        raise ModelError("Layer spec list is empty")
    for i, spec in enumerate(specs):
        if spec.activation is Activation.SOFTMAX and i != len(specs) - 1:
            raise ModelError(f"Softmax activation is only allowed on the final layer (layer {i})")
        if i > 0 and specs[i - 1].out_dim != spec.in_dim:
            raise ModelError(
                f"Dimension mismatch between layer {i - 1} (out {specs[i - 1].out_dim}) "
                f"and layer {i} (in {spec.in_dim})"
            )


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Immutable MLP parameters split at ``base_cut`` into base and personalized layers.

    Layers ``[0, base_cut)`` form the base segment, ``[base_cut, L)`` the personalized
    segment. A single-layer network is allowed for unit-level use and is all base.
    """

    layers: LayerArrays
    base_cut: int

    def __post_init__(self) -> None:
        layers = tuple((_frozen(w), _frozen(b)) for w, b in self.layers)
        object.__setattr__(self, "layers", layers)
        n = len(layers)
        if n == 0:
            raise ModelError("ModelParams needs at least one layer")
        if n == 1:
            if self.base_cut != 1:
                raise ModelError("A single-layer network must use base_cut=1")
        elif not 1 <= self.base_cut < n:
            raise ModelError(f"base_cut must satisfy 1 <= K_B < {n}, got {self.base_cut}")
        for i, (w, b) in enumerate(layers):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ModelError(
                    f"Layer {i} has inconsistent shapes: weight {w.shape}, bias {b.shape}"
                )
            if i > 0 and layers[i - 1][0].shape[0] != w.shape[1]:
                raise ModelError(
                    f"Layer {i} input dim {w.shape[1]} does not match "
                    f"layer {i - 1} output dim {layers[i - 1][0].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ModelError(f"Layer {i} contains non-finite values")

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def base(self) -> LayerArrays:
        return self.layers[: self.base_cut]

    @property
    def personal(self) -> LayerArrays:
        return self.layers[self.base_cut :]

    def shapes(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        return [(w.shape, b.shape) for w, b in self.layers]

    def flatten(self) -> np.ndarray:
        """All parameters as one vector, layer-ordered and row-major."""
        parts: list[np.ndarray] = []
        for w, b in self.layers:
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_layers(self, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> ModelParams:
        return ModelParams(layers=tuple(layers), base_cut=self.base_cut)

    def with_personal(self, personal: Sequence[tuple[np.ndarray, np.ndarray]]) -> ModelParams:
        return ModelParams(layers=self.base + tuple(personal), base_cut=self.base_cut)

    def with_base(self, base: Sequence[tuple[np.ndarray, np.ndarray]]) -> ModelParams:
        return ModelParams(layers=tuple(base) + self.personal, base_cut=self.base_cut)

    def equals(self, other: ModelParams) -> bool:
        """Bit-level equality of every array and the base cut."""
        if self.base_cut != other.base_cut or len(self) != len(other):
            return False
        return all(
            np.array_equal(w1, w2) and np.array_equal(b1, b2)
            for (w1, b1), (w2, b2) in zip(self.layers, other.layers)
        )


def shared_base_equal(models: Mapping[str, ModelParams]) -> bool:
    """True when every model carries a bit-identical base segment."""
    items = list(models.values())
    first = items[0]
    for other in items[1:]:
        if other.base_cut != first.base_cut:
            return False
        for (w1, b1), (w2, b2) in zip(first.base, other.base):
            if not (np.array_equal(w1, w2) and np.array_equal(b1, b2)):
                return False
    return True


def _kaiming_layer(spec: LayerSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    std = np.sqrt(2.0 / spec.in_dim)
    weight = rng.normal(0.0, std, size=(spec.out_dim, spec.in_dim))
    return weight, np.zeros(spec.out_dim)


def init_kaiming(specs: Sequence[LayerSpec], seed: int, base_cut: int = 1) -> ModelParams:
    """Kaiming-normal weights (fan_in, ReLU gain) and zero biases, deterministic per seed."""
    validate_specs(specs)
    rng = np.random.default_rng(seed)
    layers = tuple(_kaiming_layer(spec, rng) for spec in specs)
    return ModelParams(layers=layers, base_cut=base_cut)


def reinit_head(params: ModelParams, num_classes: int, seed: int) -> ModelParams:
    """Replace the final layer with a fresh Kaiming layer sized for ``num_classes``."""
    in_dim = params.layers[-1][0].shape[1]
    head = _kaiming_layer(
        LayerSpec(in_dim, num_classes, Activation.SOFTMAX), np.random.default_rng(seed)
    )
    return params.with_layers(params.layers[:-1] + (head,))


def init_group_models(
    specs_by_group: Mapping[str, Sequence[LayerSpec]],
    base_cut: int,
    seed: int,
) -> dict[str, ModelParams]:
    """Initialize one model per group with a single shared base segment.

    The base is drawn once from ``seed``; each group's personalized layers are
    drawn from a seed derived from the group id.
    """
    groups = sorted(specs_by_group)
    if not groups:
        raise ModelError("No groups to initialize")
    reference = list(specs_by_group[groups[0]])
    for group in groups:
        specs = list(specs_by_group[group])
        validate_specs(specs)
        if specs[:base_cut] != reference[:base_cut]:
            raise ModelError(f"Group {group!r} base layers differ from group {groups[0]!r}")

    base = init_kaiming(reference[:base_cut], seed, base_cut=1).layers
    models: dict[str, ModelParams] = {}
    for group in groups:
        specs = list(specs_by_group[group])
        head_rng = np.random.default_rng(derive_seed(seed, "head", group))
        personal = tuple(_kaiming_layer(spec, head_rng) for spec in specs[base_cut:])
        models[group] = ModelParams(layers=base + personal, base_cut=base_cut)
    return models
