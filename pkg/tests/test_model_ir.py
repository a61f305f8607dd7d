import json
import random

import pytest

from harflow.model_ir import (
    LayerDescriptor,
    ModelError,
    TensorShape,
    infer_output_shape,
    layer_workload_macs,
    parse_model,
    serialize_model,
    topological_order,
)


def _layer(kind="Conv3D", shape_in=(4, 8, 8, 3), **kw):
    s = TensorShape(*shape_in)
    params = dict(id=kw.pop("id", "l"), kind=kind, shape_in=(s,),
                  shape_out=TensorShape(1, 1, 1, 1))
    params.update(kw)
    probe = LayerDescriptor(**params)
    return LayerDescriptor(**{**params, "shape_out": infer_output_shape(probe)})


def _count_windows(x_in, k, j, ps, pe):
    # brute force: slide the window over the padded axis and count fits
    padded = x_in + ps + pe
    return sum(1 for o in range(padded) if o % j == 0 and o + k <= padded)


def test_output_shape_matches_window_enumeration():
    rng = random.Random(0)
    for _ in range(300):
        x = rng.randint(1, 20)
        k = rng.randint(1, min(5, x))
        j = rng.randint(1, 3)
        ps, pe = rng.randint(0, 2), rng.randint(0, 2)
        layer = _layer(
            kind="Conv3D", shape_in=(x, x, x, 2), filters=4,
            kernel=(k, k, k), stride=(j, j, j), padding=(ps, pe, ps, pe, ps, pe),
        )
        expect = _count_windows(x, k, j, ps, pe)
        assert layer.shape_out.d == expect
        assert layer.shape_out.h == expect
        assert layer.shape_out.w == expect
        assert layer.shape_out.c == 4


def test_conv_output_shape_example():
    layer = _layer(shape_in=(16, 112, 112, 3), filters=64, kernel=(3, 3, 3),
                   padding=(1, 1, 1, 1, 1, 1))
    assert layer.shape_out == TensorShape(16, 112, 112, 64)


def test_conv_workload_matches_mac_enumeration():
    rng = random.Random(1)
    for _ in range(50):
        c_in = rng.randint(1, 4)
        f = rng.randint(1, 4)
        k = rng.randint(1, 2)
        x = rng.randint(k, 5)
        layer = _layer(shape_in=(x, x, x, c_in), filters=f, kernel=(k, k, k))
        out = layer.shape_out
        # one MAC per (output position, input channel, filter, kernel tap)
        macs = 0
        for _pos in range(out.d * out.h * out.w):
            macs += c_in * f * k ** 3
        assert layer_workload_macs(layer) == macs


def test_grouped_conv_workload_scaled_down():
    full = _layer(shape_in=(2, 4, 4, 8), filters=8, kernel=(1, 1, 1))
    grouped = _layer(shape_in=(2, 4, 4, 8), filters=8, kernel=(1, 1, 1), groups=4)
    assert layer_workload_macs(grouped) * 4 == layer_workload_macs(full)


def test_fc_flattens_input():
    layer = _layer(kind="FullyConnected", shape_in=(1, 4, 4, 512), filters=4096)
    assert layer.fc_features == 4 * 4 * 512
    assert layer_workload_macs(layer) == 8192 * 4096
    assert layer.shape_out == TensorShape(1, 1, 1, 4096)


def _toy_doc():
    return {
        "name": "t",
        "layers": [
            {"id": "conv", "kind": "Conv3D", "shape_in": [4, 8, 8, 3],
             "shape_out": [4, 8, 8, 8], "filters": 8, "kernel": [3, 3, 3],
             "stride": [1, 1, 1], "padding": [1, 1, 1, 1, 1, 1]},
            {"id": "relu", "kind": "Activation", "type": "relu",
             "shape_in": [4, 8, 8, 8], "shape_out": [4, 8, 8, 8]},
        ],
        "edges": [["conv", "relu"]],
    }


def test_parse_serialize_round_trip():
    model = parse_model(json.dumps(_toy_doc()))
    again = parse_model(serialize_model(model))
    assert serialize_model(model) == serialize_model(again)
    assert list(again.layers) == ["conv", "relu"]


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda d: d["layers"].append(dict(d["layers"][0])), "duplicate layer id"),
        (lambda d: d["edges"].append(["relu", "conv"]), "cycle"),
        (lambda d: d["layers"][1].update(shape_in=[4, 8, 8, 9], shape_out=[4, 8, 8, 9]),
         "shape mismatch"),
        (lambda d: d["layers"][0].update(kind="Conv4D"), "unknown layer kind"),
        (lambda d: d["layers"][0].update(shape_out=[4, 8, 8, 9]), "does not match"),
        (lambda d: d["layers"][1].update(type="tanh"), "unknown activation"),
        (lambda d: d.update(edges=[]), "single input"),
    ],
)
def test_parse_rejects_malformed_documents(mutate, match):
    doc = _toy_doc()
    mutate(doc)
    with pytest.raises(ModelError, match=match):
        parse_model(json.dumps(doc))


def test_parse_rejects_disconnected_layer():
    doc = _toy_doc()
    doc["layers"].append({"id": "orphanA", "kind": "Activation", "type": "relu",
                          "shape_in": [1, 1, 1, 1], "shape_out": [1, 1, 1, 1]})
    doc["layers"].append({"id": "orphanB", "kind": "Activation", "type": "relu",
                          "shape_in": [1, 1, 1, 1], "shape_out": [1, 1, 1, 1]})
    doc["edges"].append(["orphanA", "orphanB"])
    with pytest.raises(ModelError, match="single input"):
        parse_model(json.dumps(doc))


def test_groups_must_divide_channels_and_filters():
    doc = _toy_doc()
    doc["layers"][0]["groups"] = 2
    with pytest.raises(ModelError, match="groups"):
        parse_model(json.dumps(doc))


def test_topological_order_is_deterministic_and_valid():
    doc = _toy_doc()
    doc["layers"].append({"id": "pool", "kind": "Pool3D", "type": "max",
                          "shape_in": [4, 8, 8, 8], "shape_out": [2, 4, 4, 8],
                          "kernel": [2, 2, 2], "stride": [2, 2, 2]})
    doc["layers"].append({"id": "act2", "kind": "Activation", "type": "sigmoid",
                          "shape_in": [4, 8, 8, 8], "shape_out": [4, 8, 8, 8]})
    doc["edges"] += [["relu", "pool"], ["relu", "act2"]]
    model = parse_model(json.dumps(doc))
    order = topological_order(model)
    assert set(order) == set(model.layers)
    pos = {lid: i for i, lid in enumerate(order)}
    for src, dst in model.edges:
        assert pos[src] < pos[dst]
    assert order == topological_order(parse_model(json.dumps(doc)))


def test_elementwise_broadcast_validation():
    doc = {
        "name": "ew",
        "layers": [
            {"id": "a", "kind": "Activation", "type": "relu",
             "shape_in": [2, 2, 2, 4], "shape_out": [2, 2, 2, 4]},
            {"id": "g", "kind": "GlobalAvgPool",
             "shape_in": [2, 2, 2, 4], "shape_out": [1, 1, 1, 4]},
            {"id": "mul", "kind": "ElementWise", "type": "mul", "broadcast": True,
             "shape_in": [[2, 2, 2, 4], [1, 1, 1, 4]], "shape_out": [2, 2, 2, 4]},
        ],
        "edges": [["a", "g"], ["a", "mul"], ["g", "mul"]],
    }
    model = parse_model(json.dumps(doc))
    assert model.layers["mul"].broadcast
    doc["layers"][2]["broadcast"] = False
    with pytest.raises(ModelError, match="differ without broadcast"):
        parse_model(json.dumps(doc))
