import math

import numpy as np
import pytest

from adinkra.core import Tensor, grad_check, softmax_cross_entropy
from adinkra.errors import ConfigurationError, PreconditionError, SpecError
from adinkra.model import (ModelSpec, build_model, extract_features, forward, parameter_shapes,
                           shape_trace)


def tiny_spec(**kw):
    base = dict(input_size=8, conv_channels=(2, 2, 3, 3, 4, 4), fc_widths=(6, 5, 4), num_classes=4)
    base.update(kw)
    return ModelSpec(**base)


def test_paper_trace_matches_layer_plan():
    spec = ModelSpec.paper()
    trace = dict(shape_trace(spec))
    assert trace["conv1"] == (1, 64, 128, 128)
    assert trace["pool1"] == (1, 128, 64, 64)
    assert trace["pool2"] == (1, 256, 32, 32)
    assert trace["conv6"] == (1, 512, 32, 32)
    assert trace["pool3"] == (1, 512, 16, 16)
    assert trace["flatten"] == (1, 131072)
    assert [trace[f"fc{j}"] for j in (1, 2, 3)] == [(1, 4096), (1, 4096), (1, 62)]


def test_paper_fc1_parameter_count():
    shapes = dict(parameter_shapes(ModelSpec.paper()))
    assert shapes["fc1.weight"] == (131072, 4096)
    assert math.prod(shapes["fc1.weight"]) == 536_870_912


def test_reduced_spec_widths():
    spec = ModelSpec.reduced()
    trace = dict(shape_trace(spec))
    assert spec.flatten_width == 512 * 8 * 8
    assert trace["fc2"] == (1, 512)


def test_spec_validation():
    with pytest.raises(SpecError):
        ModelSpec(input_size=100).validate()
    with pytest.raises(SpecError):
        tiny_spec(fc_widths=(6, 5, 3)).validate()
    with pytest.raises(SpecError):
        tiny_spec(dropout_p=1.0).validate()


def test_spec_dict_round_trip():
    spec = tiny_spec()
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_forward_shapes_follow_trace():
    spec = tiny_spec()
    model = build_model(spec, seed=0)
    trace = dict(shape_trace(spec, batch=2))
    store = {t: None for t in trace if t != "input"}
    x = np.random.default_rng(0).random((2, 3, 8, 8)).astype(np.float32)
    logits = forward(model, x, capture=store)
    assert logits.shape == (2, 4)
    for tag, arr in store.items():
        assert arr.shape == trace[tag], tag


def test_input_shape_checked():
    model = build_model(tiny_spec())
    with pytest.raises(PreconditionError):
        forward(model, np.zeros((1, 3, 16, 16), np.float32))
    with pytest.raises(PreconditionError):
        forward(model, np.zeros((1, 1, 8, 8), np.float32))


def test_untrained_model_predicts_uniform():
    model = build_model(tiny_spec(), seed=3)
    x = np.random.default_rng(1).random((5, 3, 8, 8)).astype(np.float32)
    loss = softmax_cross_entropy(forward(model, x), [0, 1, 2, 3, 0])
    assert abs(float(loss.data) - math.log(4)) < 1e-6


def test_he_init_statistics():
    model = build_model(ModelSpec.reduced(), seed=0)
    w = model.param("conv3.weight").data
    target = math.sqrt(2.0 / (128 * 9))
    assert abs(w.std() - target) < 0.02 * target
    assert not model.param("conv3.bias").data.any()


def test_build_is_deterministic():
    a = build_model(tiny_spec(), seed=5)
    b = build_model(tiny_spec(), seed=5)
    for p, q in zip(a.parameters, b.parameters):
        np.testing.assert_array_equal(p.data, q.data)


def test_capture_does_not_change_logits():
    model = build_model(tiny_spec(), seed=2)
    x = np.random.default_rng(2).random((3, 3, 8, 8)).astype(np.float32)
    plain = forward(model, x).data
    store = {"conv6": None, "relu2": None, "pool3": None}
    hooked = forward(model, x, capture=store).data
    assert plain.tobytes() == hooked.tobytes()


def test_dropout_only_in_training():
    model = build_model(tiny_spec(), seed=2)
    rng = np.random.default_rng(0)
    for p in model.parameters:
        p.data[...] = rng.standard_normal(p.shape) * 0.5
    x = rng.random((2, 3, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(forward(model, x).data, forward(model, x).data)
    a = forward(model, x, training=True, seed=1).data
    b = forward(model, x, training=True, seed=1).data
    c = forward(model, x, training=True, seed=2).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_extract_features_taps():
    model = build_model(tiny_spec(), seed=0)
    x = np.random.default_rng(0).random((5, 3, 8, 8)).astype(np.float32)
    assert extract_features(model, x, "fc2", batch=2).shape == (5, 5)
    assert extract_features(model, x, "flatten").shape == (5, 4 * 1 * 1)
    assert (extract_features(model, x, "fc1") >= 0).all()
    with pytest.raises(ConfigurationError):
        extract_features(model, x, "conv3")


def test_full_network_gradients_float64():
    spec = tiny_spec(dropout_p=0.5)
    model = build_model(spec, seed=1, dtype=np.float64)
    rng = np.random.default_rng(1)
    # the output layer starts at zero, which would hide upstream gradients
    model.param("fc3.weight").data[...] = rng.standard_normal((5, 4)) * 0.5
    for p in model.parameters:
        if p.name.endswith("bias"):
            p.data[...] = rng.standard_normal(p.shape) * 0.1
    x = Tensor(rng.random((2, 3, 8, 8)))
    y = np.array([1, 3])

    def loss_fn(*params):
        # grad_check perturbs the parameter tensors in place
        return softmax_cross_entropy(forward(model, x, training=True, seed=4), y)

    report = grad_check(loss_fn, model.parameters)
    assert report.max_error < 1e-5, report.errors
