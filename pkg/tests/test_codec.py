# Copyright (c) 2026 Pointmatic
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""Tests for fedtp.net.codec."""

import json

import pytest

from fedtp.net.codec import (
    CodecError,
    WeightMessage,
    deserialize_params,
    params_to_payload,
    payload_to_params,
    serialize_params,
)
from tests.conftest import make_params


class TestParamsPayload:
    def test_bit_identical_after_wire(self):
        params = make_params((12, 8, 6, 3), base_cut=2, seed=4)
        restored = deserialize_params(serialize_params(params))
        assert restored.equals(params)
        assert restored.base_cut == 2

    def test_payload_layout(self):
        payload = params_to_payload(make_params((4, 5, 3)))
        assert payload["dims"] == [4, 5, 3]
        assert len(payload["layers"]) == 2
        assert len(payload["layers"][0]["weights"]) == 5
        assert len(payload["layers"][0]["weights"][0]) == 4

    def test_missing_key(self):
        payload = params_to_payload(make_params())
        del payload["base_cut"]
        with pytest.raises(CodecError, match="base_cut"):
            payload_to_params(payload)

    def test_no_layers(self):
        with pytest.raises(CodecError, match="no layers"):
            payload_to_params({"layers": [], "base_cut": 1, "dims": []})

    def test_base_cut_must_be_int(self):
        payload = params_to_payload(make_params())
        payload["base_cut"] = True
        with pytest.raises(CodecError, match="integer"):
            payload_to_params(payload)

    def test_dims_mismatch(self):
        payload = params_to_payload(make_params())
        payload["dims"] = [4, 6, 3]
        with pytest.raises(CodecError, match="do not match"):
            payload_to_params(payload)

    def test_malformed_layer(self):
        payload = params_to_payload(make_params())
        del payload["layers"][1]["bias"]
        with pytest.raises(CodecError, match="Layer 1"):
            payload_to_params(payload)

    def test_inconsistent_shapes(self):
        payload = params_to_payload(make_params())
        payload["layers"][1]["bias"] = [0.0]
        with pytest.raises(CodecError):
            payload_to_params(payload)

    def test_not_an_object(self):
        with pytest.raises(CodecError, match="JSON object"):
            payload_to_params([1, 2])

    def test_garbage_bytes(self):
        with pytest.raises(CodecError):
            deserialize_params(b"\xff\xfe")


class TestWeightMessage:
    def test_update_round_trip(self):
        params = make_params(seed=2)
        msg = WeightMessage(kind="update", round=3, routing_key="S", sender="client-4",
                            client_id=4, n_k=17, train_loss=0.25,
                            payload=params_to_payload(params))
        wire = json.loads(json.dumps(msg.to_body()))
        decoded = WeightMessage.from_body(wire)
        assert decoded == msg
        assert decoded.params().equals(params)

    def test_to_body_drops_none(self):
        body = WeightMessage(kind="stop", round=2, routing_key="M", sender="server").to_body()
        assert "payload" not in body and "client_id" not in body
        assert body["attempt"] == 1

    def test_model_needs_payload(self):
        with pytest.raises(CodecError, match="payload"):
            WeightMessage.from_body({"kind": "model", "routing_key": "M", "sender": "server"})

    def test_update_needs_n_k(self):
        body = {"kind": "update", "routing_key": "M", "sender": "client-0", "client_id": 0,
                "n_k": 0, "payload": params_to_payload(make_params())}
        with pytest.raises(CodecError, match="n_k"):
            WeightMessage.from_body(body)

    def test_ready_needs_client_id(self):
        with pytest.raises(CodecError, match="client_id"):
            WeightMessage.from_body({"kind": "ready", "routing_key": "M", "sender": "c"})

    def test_unknown_kind(self):
        with pytest.raises(CodecError):
            WeightMessage.from_body({"kind": "hello", "routing_key": "M", "sender": "c"})

    def test_empty_routing_key(self):
        with pytest.raises(CodecError):
            WeightMessage.from_body({"kind": "stop", "routing_key": "", "sender": "server"})

    def test_params_without_payload(self):
        msg = WeightMessage(kind="stop", routing_key="M", sender="server")
        with pytest.raises(CodecError, match="no payload"):
            msg.params()
