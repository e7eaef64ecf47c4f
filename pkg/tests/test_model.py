import json

import numpy as np
import pytest

from qeihan.errors import (DimsMismatch, EmptyDistribution, MissingTensor, NonFiniteValue,
                           ParseError, ShapeError)
from qeihan.model import (MAGIC, ElemKind, LayerDescriptor, LayerKind, Tensor, layer_weights,
                          load_network, load_tensor, network_to_json, network_from_json,
                          parse_tensor, quota_counts, shipped_distribution, store_tensor,
                          synth_activations, tensor_bytes)
from qeihan.quant import log2_quantize_hw_array

import struct


def fc_entry(name, ic, oc):
    return {"name": name, "kind": "FC", "in_channels": ic, "out_channels": oc}


def write_net(tmp_path, layers, **extra):
    p = tmp_path / "net.json"
    p.write_text(json.dumps({"name": "t", "layers": layers, **extra}))
    return p


def test_two_layer_fc_chain(tmp_path):
    net = load_network(write_net(tmp_path, [fc_entry("a", 4, 8), fc_entry("b", 8, 2)]))
    assert [l.name for l in net.layers] == ["a", "b"]
    assert net.input_dims == (4, 1, 1)


def test_chain_mismatch(tmp_path):
    with pytest.raises(ShapeError):
        load_network(write_net(tmp_path, [fc_entry("a", 4, 8), fc_entry("b", 9, 2)]))


def test_alexnet_shaped_builtin():
    from qeihan.cli import resolve_network
    net = resolve_network("alexnet_small")
    kinds = [l.kind for l in net.layers]
    assert kinds.count(LayerKind.CONV) == 5 and kinds.count(LayerKind.FC) == 3


def test_malformed_descriptor(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_network(p)
    with pytest.raises(ParseError):
        load_network(write_net(tmp_path, [{"name": "x", "kind": "RNN"}]))


def test_missing_weight_file(tmp_path):
    with pytest.raises(MissingTensor):
        load_network(write_net(tmp_path, [fc_entry("a", 4, 8)], weights={"a": "nope.qht"}))


def test_weight_file_is_used(tmp_path):
    w = Tensor.int8(np.arange(32).reshape(8, 4) - 16)
    store_tensor(tmp_path / "a.qht", w)
    net = load_network(write_net(tmp_path, [fc_entry("a", 4, 8)], weights={"a": "a.qht"}))
    assert layer_weights(net, net.layers[0]) == w


def test_synthetic_weights_are_seeded():
    net = network_from_json({"layers": [fc_entry("a", 4, 8)]})
    assert layer_weights(net, net.layers[0], 1) == layer_weights(net, net.layers[0], 1)
    assert layer_weights(net, net.layers[0], 1) != layer_weights(net, net.layers[0], 2)


def test_descriptor_round_trip():
    doc = {"name": "n", "layers": [
        {"name": "c", "kind": "CONV", "in_channels": 2, "out_channels": 4, "kernel_h": 3,
         "kernel_w": 3, "in_h": 6, "in_w": 6, "padding": 1, "activation_fn": {"LUT": "tanh"},
         "pool": {"kind": "Max", "size": 2}},
        fc_entry("f", 36, 3)]}
    net = network_from_json(doc)
    assert net.layers[0].activation_fn == "LUT:tanh"
    assert network_from_json(network_to_json(net)) == net


@pytest.mark.parametrize("kw", [
    dict(kind=LayerKind.FC, in_channels=4, out_channels=4, kernel_h=3),
    dict(kind=LayerKind.CONV, in_channels=1, out_channels=1, kernel_h=5, kernel_w=5, in_h=3, in_w=3),
    dict(kind=LayerKind.CONV, in_channels=1, out_channels=1, kernel_h=2, kernel_w=2, in_h=5, in_w=5,
         stride=2),
])
def test_invalid_layers(kw):
    with pytest.raises(ShapeError):
        LayerDescriptor("x", **kw)


def test_conv_dims():
    l = LayerDescriptor("c", LayerKind.CONV, 3, 8, 3, 3, 9, 9, 2, 1)
    assert (l.out_h, l.out_w) == (5, 5)
    assert l.weight_dims == (8, 3, 3, 3)


def test_tensor_int8_payload(tmp_path):
    raw = MAGIC + struct.pack("<BB2I", ElemKind.INT8, 2, 2, 3) + bytes(range(6))
    t = parse_tensor(raw)
    assert t.dims == (2, 3) and list(t.data) == list(range(6))


def test_tensor_short_payload():
    raw = MAGIC + struct.pack("<BB2I", ElemKind.INT8, 2, 2, 3) + bytes(5)
    with pytest.raises(ParseError):
        parse_tensor(raw)


def test_tensor_nan_payload():
    raw = MAGIC + struct.pack("<BB1I", ElemKind.REAL16, 1, 2) + struct.pack("<2H", 0x3C00, 0x7E00)
    with pytest.raises(NonFiniteValue):
        parse_tensor(raw)


def test_tensor_file_round_trip(tmp_path):
    t = Tensor.real16([[0.5, -2.0], [3.0, 0.0]])
    store_tensor(tmp_path / "t.qht", t)
    assert load_tensor(tmp_path / "t.qht", (2, 2)) == t
    assert parse_tensor(tensor_bytes(t)) == t
    with pytest.raises(DimsMismatch):
        load_tensor(tmp_path / "t.qht", (3, 2))
    with pytest.raises(MissingTensor):
        load_tensor(tmp_path / "absent.qht")


def test_tensor_is_immutable_copy():
    src = np.zeros(4, np.float16)
    t = Tensor.real16(src)
    src[0] = 1
    assert t.data[0] == 0
    with pytest.raises(ValueError):
        t.data[0] = 1


def test_synth_single_bin():
    t = synth_activations({0: 1.0}, 10, 0)
    pruned, _, e = log2_quantize_hw_array(t.data)
    assert not pruned.any() and set(e.tolist()) == {0}


def test_synth_zero_bin():
    assert not synth_activations({"zero": 1.0}, 5, 0).data.any()


def test_synth_ptblm_negative():
    t = synth_activations(shipped_distribution("ptblm"), 10_000, 0)
    pruned, _, e = log2_quantize_hw_array(t.data)
    live = e[~pruned]
    assert (live < 0).mean() >= 0.975


def test_synth_is_deterministic():
    d = shipped_distribution("bert_base")
    assert synth_activations(d, 500, 3) == synth_activations(d, 500, 3)


def test_empty_distribution():
    with pytest.raises(EmptyDistribution):
        synth_activations({}, 4, 0)
    with pytest.raises(EmptyDistribution):
        quota_counts({-1: 0.0}, 4)


def test_quota_counts_sum():
    counts = quota_counts({-1: 1, -2: 1, -3: 1}, 100)
    assert sum(counts.values()) == 100 and max(counts.values()) - min(counts.values()) <= 1
