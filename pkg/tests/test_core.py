import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adinkra.core import (GradientTape, ParamTensor, Tensor, adam_step, backward, conv2d,
                          conv2d_reference, dropout, grad_check, linear, maxpool2, relu,
                          softmax, softmax_cross_entropy, sum_all, tanh, zero_grad)
from adinkra.core import ops
from adinkra.core.tensor import record_op
from adinkra.errors import PreconditionError, UnsupportedConfigurationError, UsageError


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# --- conv2d -----------------------------------------------------------------

def test_conv2d_shape_paper_first_layer():
    x = np.zeros((1, 3, 128, 128), np.float32)
    w = np.zeros((64, 3, 3, 3), np.float32)
    assert conv2d(x, w, np.zeros(64, np.float32)).shape == (1, 64, 128, 128)


def test_conv2d_all_ones_kernel_on_2x2():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    w = np.ones((1, 1, 3, 3))
    expected = conv2d_reference(x, w, np.zeros(1), pad=1)
    np.testing.assert_array_equal(expected[0, 0], [[10, 10], [10, 10]])
    np.testing.assert_array_equal(conv2d(x, w, np.zeros(1)).data, expected)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 5, 7)).astype(np.float32)
    w = np.zeros((3, 3, 3, 3), np.float32)
    for c in range(3):
        w[c, c, 1, 1] = 1
    np.testing.assert_array_equal(conv2d(x, w, np.zeros(3, np.float32)).data, x)


@pytest.mark.parametrize("pad,stride", [(1, 1), (0, 1), (1, 2), (0, 2)])
def test_conv2d_matches_loop_reference(pad, stride):
    rng = np.random.default_rng(pad * 10 + stride)
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(conv2d(x, w, b, pad, stride).data,
                               conv2d_reference(x, w, b, pad, stride), rtol=1e-12, atol=1e-12)


def test_conv2d_errors():
    x = np.zeros((1, 2, 4, 4))
    with pytest.raises(PreconditionError):
        conv2d(x, np.zeros((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(UnsupportedConfigurationError):
        conv2d(x, np.zeros((1, 2, 5, 5)), np.zeros(1))
    with pytest.raises(UnsupportedConfigurationError):
        conv2d(x, np.zeros((1, 2, 3, 3)), np.zeros(1), pad=2)


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9))
def test_conv2d_preserves_spatial_extent(h, w):
    out = conv2d(np.ones((1, 2, h, w)), np.ones((3, 2, 3, 3)), np.zeros(3))
    assert out.shape == (1, 3, h, w)


def test_conv2d_linearity_float32():
    rng = np.random.default_rng(3)
    x, y = (rng.standard_normal((2, 3, 8, 8)).astype(np.float32) for _ in range(2))
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b0 = np.zeros(4, np.float32)
    a, c = np.float32(1.7), np.float32(-0.6)
    lhs = conv2d(a * x + c * y, w, b0).data
    rhs = a * conv2d(x, w, b0).data + c * conv2d(y, w, b0).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-4)


# --- relu / maxpool / linear / dropout ----------------------------------------

def test_relu_values_and_grad():
    np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    np.testing.assert_array_equal(relu(-np.ones((3, 2))).data, np.zeros((3, 2)))
    x = t64([-1.0, 2.0], grad=True)
    with GradientTape() as tape:
        loss = sum_all(relu(x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [0, 1])


def test_maxpool_values_and_grad():
    x = t64([[[[1.0, 2.0], [3.0, 4.0]]]], grad=True)
    with GradientTape() as tape:
        out = maxpool2(x)
        loss = sum_all(out)
    np.testing.assert_array_equal(out.data, [[[[4.0]]]])
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad[0, 0], [[0, 0], [0, 1]])


def test_maxpool_constant_and_tie_routing():
    x = t64(np.full((1, 2, 4, 4), 3.0), grad=True)
    with GradientTape() as tape:
        out = maxpool2(x)
        loss = sum_all(out)
    np.testing.assert_array_equal(out.data, np.full((1, 2, 2, 2), 3.0))
    tape.backward(loss)
    # ties route to the first element of each window in row-major order
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1
    np.testing.assert_array_equal(x.grad[0, 0], expected)


def test_maxpool_odd_size_rejected():
    with pytest.raises(PreconditionError):
        maxpool2(np.zeros((1, 1, 3, 4)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_maxpool_monotone(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((2, 3, 4, 6))
    b = a + rng.random(a.shape)
    assert np.all(maxpool2(b).data >= maxpool2(a).data)


def test_linear_examples():
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(linear(x, np.eye(2), np.zeros(2)).data, x)
    np.testing.assert_array_equal(linear(x, np.array([[1.0], [1.0]]), np.array([3.0])).data, [[6.0]])
    with pytest.raises(PreconditionError):
        linear(x, np.ones((3, 1)), np.zeros(1))


def test_linear_weight_grad_is_column_sums_of_input():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 3))
    w = t64(rng.standard_normal((3, 4)), grad=True)
    b = t64(np.zeros(4))
    with GradientTape() as tape:
        loss = sum_all(linear(x, w, b))
    tape.backward(loss)
    np.testing.assert_allclose(w.grad, np.repeat(x.sum(0)[:, None], 4, axis=1), rtol=1e-12)
    # and the finite-difference oracle agrees
    report = grad_check(lambda w_: sum_all(linear(x, w_, b)), [w])
    assert report.passed, report.errors


def test_dropout_modes():
    x = np.arange(12, dtype=np.float32).reshape(3, 4)
    np.testing.assert_array_equal(dropout(x, 0.0, True, seed=1).data, x)
    np.testing.assert_array_equal(dropout(x, 0.0, False, seed=1).data, x)
    np.testing.assert_array_equal(dropout(x, 0.7, False, seed=1).data, x)
    with pytest.raises(PreconditionError):
        dropout(x, 1.0, True, seed=1)


def test_dropout_mean_preserved():
    out = dropout(np.ones(10**6, np.float32), 0.5, True, seed=123).data
    assert 0.99 <= out.mean() <= 1.01
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_mask_reused_in_backward():
    x = t64(np.ones(50), grad=True)
    with GradientTape() as tape:
        out = dropout(x, 0.3, True, seed=9)
        loss = sum_all(out)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, out.data)


# --- softmax cross-entropy ----------------------------------------------------

def test_cross_entropy_uniform_is_ln_c():
    loss = softmax_cross_entropy(np.zeros((3, 62)), [0, 5, 61])
    assert abs(float(loss.data) - math.log(62)) < 1e-12
    assert abs(float(loss.data) - 4.1271) < 1e-4


def test_cross_entropy_stable_for_large_logits():
    z = np.zeros((2, 62))
    z[0, 3] = z[1, 40] = 1000.0
    loss = softmax_cross_entropy(z, [3, 40])
    assert np.isfinite(loss.data) and float(loss.data) < 1e-6
    np.testing.assert_allclose(loss.probs.sum(1), 1.0)


def test_cross_entropy_target_range():
    with pytest.raises(PreconditionError):
        softmax_cross_entropy(np.zeros((1, 4)), [4])
    with pytest.raises(PreconditionError):
        softmax_cross_entropy(np.zeros((1, 4)), [-1])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.sampled_from([1.0, 10.0, 1000.0]))
def test_softmax_rows_sum_to_one(seed, scale):
    z = np.random.default_rng(seed).standard_normal((4, 62)) * scale
    np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-6)


def test_cross_entropy_grad_matches_finite_differences():
    rng = np.random.default_rng(11)
    z = t64(rng.standard_normal((4, 62)))
    y = rng.integers(0, 62, 4)
    report = grad_check(lambda z_: softmax_cross_entropy(z_, y), [z])
    assert report.max_error < 1e-6


# --- tape mechanics -----------------------------------------------------------

def test_backward_of_sum_is_ones():
    x = t64(np.random.default_rng(0).standard_normal((2, 3, 4)), grad=True)
    with GradientTape() as tape:
        loss = sum_all(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_twice_accumulates_exactly():
    rng = np.random.default_rng(2)
    w = t64(rng.standard_normal((3, 2)), grad=True)
    b = t64(rng.standard_normal(2), grad=True)
    x = rng.standard_normal((4, 3))
    with GradientTape() as tape:
        loss = sum_all(relu(linear(x, w, b)))
    tape.backward(loss)
    once_w, once_b = w.grad.copy(), b.grad.copy()
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, 2 * once_w)
    np.testing.assert_array_equal(b.grad, 2 * once_b)


def test_backward_errors():
    x = t64(np.ones(3), grad=True)
    with GradientTape() as tape:
        y = relu(x)
    with pytest.raises(PreconditionError):
        tape.backward(y)
    other = GradientTape()
    with GradientTape():
        loss = sum_all(x)
    with pytest.raises(UsageError):
        backward(other, loss)


def test_ops_outside_tape_record_nothing():
    x = t64(np.ones(3), grad=True)
    out = sum_all(relu(x))
    assert out._node is None


def test_finished_tape_frees_intermediates_without_gc():
    import gc
    import weakref
    w = ParamTensor(np.random.default_rng(0).standard_normal((4, 3)), np.float64, "w")
    gc.disable()
    try:
        with GradientTape() as tape:
            hidden = relu(linear(t64(np.ones((2, 4))), w, t64(np.zeros(3))))
            loss = sum_all(hidden)
        tape.backward(loss)
        probe = weakref.ref(hidden)
        del tape, hidden, loss
        assert probe() is None
    finally:
        gc.enable()
    assert w.grad is not None


def test_relu_linear_grads_match_finite_differences():
    rng = np.random.default_rng(4)
    x = t64(rng.standard_normal((3, 5)))
    w = t64(rng.standard_normal((5, 4)))
    b = t64(rng.standard_normal(4))
    report = grad_check(lambda x_, w_, b_: sum_all(relu(linear(x_, w_, b_))), [x, w, b])
    assert report.max_error < 1e-6, report.errors


def test_tanh_grad_and_range():
    rng = np.random.default_rng(5)
    x = t64(rng.standard_normal((3, 4)) * 3)
    assert np.all(np.abs(tanh(x).data) <= 1)
    assert grad_check(lambda x_: sum_all(tanh(x_)), [x]).max_error < 1e-6


# --- Adam ---------------------------------------------------------------------

def test_adam_first_step():
    p = ParamTensor(np.zeros(3), name="p")
    p.grad = np.ones(3)
    adam_step([p], lr=1e-4)
    np.testing.assert_allclose(p.data, -1e-4 / (1 + 1e-8), rtol=1e-12)
    assert p.step_count == 1
    np.testing.assert_array_equal(p.grad, np.ones(3))


@settings(max_examples=20, deadline=None)
@given(steps=st.integers(1, 30), seed=st.integers(0, 1000))
def test_adam_zero_grad_is_identity(steps, seed):
    init = np.random.default_rng(seed).standard_normal((2, 3))
    p = ParamTensor(init.copy(), name="p")
    for _ in range(steps):
        p.grad = np.zeros_like(init)
        adam_step([p], lr=0.1)
    np.testing.assert_array_equal(p.data, init)


def test_adam_minimises_quadratic():
    x = ParamTensor(np.zeros(1), name="x")
    for _ in range(100):
        x.grad = 2 * (x.data - 3)
        adam_step([x], lr=0.1)
    assert abs(x.data[0] - 3) < 0.5


def test_adam_missing_grad():
    with pytest.raises(UsageError):
        adam_step([ParamTensor(np.zeros(2), name="w")], lr=0.1)


def test_param_tensor_initial_state():
    p = ParamTensor(np.ones((2, 2)), name="w")
    assert p.step_count == 0
    assert not p.adam_m.any() and not p.adam_v.any()
    assert p.adam_m.shape == p.adam_v.shape == p.shape


def test_zero_grad_resets():
    p = ParamTensor(np.ones(2), name="w")
    p.grad = np.ones(2)
    zero_grad([p])
    assert p.grad is None


# --- grad_check itself --------------------------------------------------------

def test_grad_check_conv_small():
    rng = np.random.default_rng(6)
    x = t64(rng.standard_normal((1, 2, 4, 4)))
    w = t64(rng.standard_normal((3, 2, 3, 3)))
    b = t64(rng.standard_normal(3))
    report = grad_check(lambda x_, w_, b_: sum_all(conv2d(x_, w_, b_)), [x, w, b])
    assert report.max_error < 1e-6, report.errors


def _bad_relu(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    mask = x.data > 0
    return record_op("bad_relu", (x,), np.maximum(x.data, 0), lambda g, n: (2 * g * mask,))


def test_grad_check_catches_corrupted_backward():
    x = t64(np.random.default_rng(7).standard_normal((3, 4)) + 0.1)
    report = grad_check(lambda x_: sum_all(_bad_relu(x_)), [x], tolerance=1e-5)
    assert not report.passed
    assert report.max_error > 0.4


def test_grad_check_requires_scalar_and_float64():
    x = t64(np.ones(3))
    with pytest.raises(PreconditionError):
        grad_check(lambda x_: relu(x_), [x])
    with pytest.raises(PreconditionError):
        grad_check(lambda x_: sum_all(x_), [Tensor(np.ones(3, np.float32))])


def test_float32_default_dtype():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert relu(np.ones(2, np.float64)).dtype == np.float64
    assert conv2d(np.ones((1, 1, 3, 3), np.float32), np.ones((1, 1, 3, 3), np.float32),
                  np.zeros(1, np.float32)).dtype == np.float32


def test_im2col_col2im_adjoint():
    # <im2col(x), c> == <x, col2im(c)> for any x, c
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3, 5, 4))
    for pad, stride in [(1, 1), (0, 1), (1, 2)]:
        cols = ops.im2col(x, pad, stride)
        c = rng.standard_normal(cols.shape)
        lhs = (cols * c).sum()
        rhs = (x * ops.col2im(c, x.shape, pad, stride)).sum()
        assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))
