# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""JSON encoding of model parameters and the weight-exchange envelope."""

from __future__ import annotations

from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from fedtp.net.framing import FrameError, dumps, loads
from fedtp.nn.params import ModelError, ModelParams


class CodecError(ValueError):
    """Raised for payloads that do not decode to valid parameters or messages."""


def params_to_payload(params: ModelParams) -> dict[str, Any]:
    """``{"base_cut", "dims", "layers": [{"weights", "bias"}]}``, row-major weights."""
    return {
        "base_cut": params.base_cut,
        "dims": params.dims,
        "layers": [{"weights": w.tolist(), "bias": b.tolist()} for w, b in params.layers],
    }


def payload_to_params(payload: Any) -> ModelParams:
    if not isinstance(payload, dict):
        raise CodecError("Parameter payload must be a JSON object")
    try:
        layers_raw = payload["layers"]
        base_cut = payload["base_cut"]
        dims = payload["dims"]
    except KeyError as exc:
        raise CodecError(f"Parameter payload is missing {exc.args[0]!r}") from None
    if not isinstance(layers_raw, list) or not layers_raw:
        raise CodecError("Parameter payload has no layers")
    if not isinstance(base_cut, int) or isinstance(base_cut, bool):
        raise CodecError("base_cut must be an integer")

    layers: list[tuple[np.ndarray, np.ndarray]] = []
    for i, layer in enumerate(layers_raw):
        try:
            weights = np.array(layer["weights"], dtype=np.float64)
            bias = np.array(layer["bias"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise CodecError(f"Layer {i} is malformed: {exc}") from exc
        layers.append((weights, bias))
    try:
        params = ModelParams(layers=tuple(layers), base_cut=base_cut)
    except ModelError as exc:
        raise CodecError(str(exc)) from exc
    if params.dims != dims:
        raise CodecError(f"dims {dims} do not match layer shapes {params.dims}")
    return params


def serialize_params(params: ModelParams) -> bytes:
    return dumps(params_to_payload(params))


def deserialize_params(data: bytes) -> ModelParams:
    try:
        payload = loads(data)
    except FrameError as exc:
        raise CodecError(str(exc)) from exc
    return payload_to_params(payload)


MessageKind = Literal["ready", "model", "update", "stop"]


class WeightMessage(BaseModel):
    """Envelope for every message between the server and client nodes.

    ``model`` goes server to clients on the group's routing key and lists the
    round's participants; ``update`` goes back with the client's ``n_k``.
    ``attempt`` increases when the server re-broadcasts a round.
    """

    kind: MessageKind
    round: int = Field(default=0, ge=0)
    routing_key: str = Field(min_length=1)
    sender: str = Field(min_length=1)
    client_id: int | None = None
    n_k: int | None = None
    train_loss: float | None = None
    attempt: int = Field(default=1, ge=1)
    payload: dict[str, Any] | None = None
    hyperparams: dict[str, Any] | None = None
    participants: list[int] = []
    seed: int | None = None

    @model_validator(mode="after")
    def _check_kind(self) -> WeightMessage:
        if self.kind in ("model", "update") and self.payload is None:
            raise ValueError(f"{self.kind} messages carry a payload")
        if self.kind == "update" and (self.client_id is None or not self.n_k or self.n_k < 1):
            raise ValueError("update messages need client_id and n_k >= 1")
        if self.kind == "ready" and self.client_id is None:
            raise ValueError("ready messages need client_id")
        return self

    def params(self) -> ModelParams:
        if self.payload is None:
            raise CodecError(f"{self.kind} message has no payload")
        return payload_to_params(self.payload)

    def to_body(self) -> dict[str, Any]:
        return self.model_dump(mode="json", exclude_none=True)

    @classmethod
    def from_body(cls, body: Any) -> WeightMessage:
        try:
            return cls.model_validate(body)
        except ValidationError as exc:
            raise CodecError(f"Invalid weight message: {exc}") from exc
