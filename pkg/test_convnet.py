"""
Tests for the numpy convolution engine: forward values against direct loops and
every backward pass against central finite differences (float64).
"""

import math

import numpy as np
import pytest

from models.convnet import (
    Adadelta,
    ConvLayer,
    DeconvLayer,
    DenseLayer,
    Parameter,
    adadelta_step,
    avgpool_backward,
    avgpool_forward,
    conv2d_backward,
    conv2d_forward,
    deconv2d_backward,
    deconv2d_forward,
    maxpool_backward,
    maxpool_forward,
    mse,
    penalties,
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_crossentropy,
    upsample_backward,
    upsample_forward,
)
from models.errors import NonFiniteError, ShapeMismatchError
from models.schemas import AdadeltaParams


def numeric_grad(f, x, eps=1e-6):
    """Central differences of the scalar function f() with respect to array x (perturbed in place)."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        plus = f()
        x[idx] = old - eps
        minus = f()
        x[idx] = old
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def brute_conv(x, kernels, bias, p):
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    n, c, h, w = xp.shape
    o, _, kh, kw = kernels.shape
    out = np.zeros((n, o, h - kh + 1, w - kw + 1))
    for b in range(n):
        for m in range(o):
            for y in range(out.shape[2]):
                for z in range(out.shape[3]):
                    out[b, m, y, z] = np.sum(xp[b, :, y:y + kh, z:z + kw] * kernels[m]) + bias[m]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ==================== CONVOLUTION ====================

@pytest.mark.parametrize("padding", [0, 1, 2])
def test_conv_forward_matches_loops(rng, padding):
    layer = ConvLayer(2, 3, kernel_size=3, padding=padding, rng=rng, dtype=np.float64)
    layer.biases.value = rng.standard_normal(3)
    x = rng.standard_normal((2, 2, 6, 5))
    np.testing.assert_allclose(conv2d_forward(x, layer),
                               brute_conv(x, layer.kernels.value, layer.biases.value, padding), atol=1e-12)


def test_valid_five_by_five_shrinks_by_four(rng):
    layer = ConvLayer(1, 4, kernel_size=5, rng=rng, dtype=np.float64)
    assert conv2d_forward(np.zeros((1, 1, 28, 28)), layer).shape == (1, 4, 24, 24)
    padded = ConvLayer(1, 4, kernel_size=5, padding=2, rng=rng, dtype=np.float64)
    assert conv2d_forward(np.zeros((1, 1, 28, 28)), padded).shape == (1, 4, 28, 28)


def test_delta_kernel_is_identity(rng):
    layer = ConvLayer(1, 1, kernel_size=5, padding="same", rng=rng, dtype=np.float64)
    layer.kernels.value = np.zeros((1, 1, 5, 5))
    layer.kernels.value[0, 0, 2, 2] = 1.0
    x = rng.random((3, 1, 8, 8))
    np.testing.assert_allclose(conv2d_forward(x, layer), x)


def test_conv_rejects_wrong_channel_count(rng):
    layer = ConvLayer(2, 3, kernel_size=3, rng=rng, dtype=np.float64)
    with pytest.raises(ShapeMismatchError):
        conv2d_forward(np.zeros((1, 3, 6, 6)), layer)
    with pytest.raises(ShapeMismatchError):
        conv2d_forward(np.zeros((1, 2, 2, 2)), layer)


@pytest.mark.parametrize("padding", [0, 2])
def test_conv_backward_matches_finite_differences(rng, padding):
    layer = ConvLayer(2, 3, kernel_size=3, padding=padding, rng=rng, dtype=np.float64)
    layer.biases.value = rng.standard_normal(3)
    x = rng.standard_normal((2, 2, 5, 5))
    upstream = rng.standard_normal(conv2d_forward(x, layer).shape)

    def loss():
        return float(np.sum(conv2d_forward(x, layer) * upstream))

    dx, dk, db = conv2d_backward(x, layer, upstream)
    np.testing.assert_allclose(dx, numeric_grad(loss, x), atol=1e-6)
    np.testing.assert_allclose(dk, numeric_grad(loss, layer.kernels.value), atol=1e-6)
    np.testing.assert_allclose(db, numeric_grad(loss, layer.biases.value), atol=1e-6)


def test_layer_backward_accumulates_gradients(rng):
    layer = ConvLayer(1, 2, kernel_size=3, rng=rng, dtype=np.float64)
    x = rng.standard_normal((1, 1, 5, 5))
    upstream = np.ones((1, 2, 3, 3))
    layer.forward(x)
    layer.backward(upstream)
    once = layer.kernels.grad.copy()
    layer.backward(upstream)
    np.testing.assert_allclose(layer.kernels.grad, 2 * once)
    layer.kernels.zero_grad()
    assert not layer.kernels.grad.any()


# ==================== TRANSPOSED CONVOLUTION ====================

def test_deconv_grows_each_side(rng):
    layer = DeconvLayer(4, 1, kernel_size=5, rng=rng, dtype=np.float64)
    assert deconv2d_forward(np.zeros((2, 4, 24, 24)), layer).shape == (2, 1, 28, 28)


def test_deconv_is_the_adjoint_of_conv(rng):
    conv = ConvLayer(2, 3, kernel_size=3, rng=rng, dtype=np.float64)
    deconv = DeconvLayer(3, 2, kernel_size=3, rng=rng, dtype=np.float64)
    deconv.kernels.value = conv.kernels.value.copy()
    x = rng.standard_normal((1, 2, 6, 6))
    y = rng.standard_normal((1, 3, 4, 4))
    lhs = np.sum(conv2d_forward(x, conv) * y)
    rhs = np.sum(x * deconv2d_forward(y, deconv))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_deconv_backward_matches_finite_differences(rng):
    layer = DeconvLayer(2, 3, kernel_size=3, rng=rng, dtype=np.float64)
    layer.biases.value = rng.standard_normal(3)
    x = rng.standard_normal((2, 2, 3, 4))
    upstream = rng.standard_normal(deconv2d_forward(x, layer).shape)

    def loss():
        return float(np.sum(deconv2d_forward(x, layer) * upstream))

    dx, dk, db = deconv2d_backward(x, layer, upstream)
    np.testing.assert_allclose(dx, numeric_grad(loss, x), atol=1e-6)
    np.testing.assert_allclose(dk, numeric_grad(loss, layer.kernels.value), atol=1e-6)
    np.testing.assert_allclose(db, numeric_grad(loss, layer.biases.value), atol=1e-6)


def test_dense_backward_matches_finite_differences(rng):
    layer = DenseLayer(6, 4, rng=rng, dtype=np.float64)
    x = rng.standard_normal((3, 6))
    upstream = rng.standard_normal((3, 4))

    def loss():
        return float(np.sum(layer.forward(x) * upstream))

    layer.forward(x)
    dx = layer.backward(upstream)
    np.testing.assert_allclose(dx, numeric_grad(loss, x), atol=1e-6)
    np.testing.assert_allclose(layer.weights.grad, numeric_grad(loss, layer.weights.value), atol=1e-6)


# ==================== POOLING & UP-SAMPLING ====================

def test_maxpool_forward_and_backward(rng):
    # distinct values keep every argmax stable under the finite-difference step
    x = (rng.permutation(2 * 3 * 10 * 10) * 0.01).reshape(2, 3, 10, 10)
    out, argmax = maxpool_forward(x, 5, 5)
    assert out.shape == (2, 3, 2, 2)
    assert out[1, 2, 1, 0] == x[1, 2, 5:10, 0:5].max()
    upstream = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(maxpool_forward(x, 5, 5)[0] * upstream))

    dx = maxpool_backward(upstream, argmax, x.shape, 5, 5)
    np.testing.assert_allclose(dx, numeric_grad(loss, x), atol=1e-6)


def test_maxpool_overlapping_windows(rng):
    x = (rng.permutation(49) * 0.1).reshape(1, 1, 7, 7)
    out, argmax = maxpool_forward(x, 3, 2)
    assert out.shape == (1, 1, 3, 3)
    upstream = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(maxpool_forward(x, 3, 2)[0] * upstream))

    np.testing.assert_allclose(maxpool_backward(upstream, argmax, x.shape, 3, 2),
                               numeric_grad(loss, x), atol=1e-6)


def test_maxpool_ties_route_to_first_maximum():
    x = np.ones((1, 1, 2, 2))
    out, argmax = maxpool_forward(x, 2, 2)
    dx = maxpool_backward(np.ones_like(out), argmax, x.shape, 2, 2)
    np.testing.assert_array_equal(dx[0, 0], [[1, 0], [0, 0]])


def test_avgpool_backward_matches_finite_differences(rng):
    x = rng.standard_normal((1, 2, 6, 6))
    upstream = rng.standard_normal((1, 2, 2, 2))

    def loss():
        return float(np.sum(avgpool_forward(x, 3, 3) * upstream))

    np.testing.assert_allclose(avgpool_backward(upstream, x.shape, 3, 3), numeric_grad(loss, x), atol=1e-6)


def test_upsample_forward_and_backward(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    up = upsample_forward(x, 5)
    assert up.shape == (1, 2, 20, 20)
    np.testing.assert_array_equal(up[0, 1, 5:10, 10:15], np.full((5, 5), x[0, 1, 1, 2]))
    upstream = rng.standard_normal(up.shape)

    def loss():
        return float(np.sum(upsample_forward(x, 5) * upstream))

    np.testing.assert_allclose(upsample_backward(upstream, 5), numeric_grad(loss, x), atol=1e-6)
    with pytest.raises(ValueError):
        upsample_forward(x, 0)


# ==================== RANDOM SHAPES ====================

def _random_shape(r):
    n, c, o = (int(v) for v in r.integers(1, 4, size=3))
    k = int(r.integers(1, 5))
    h, w = (int(v) for v in r.integers(k, k + 4, size=2))
    return n, c, o, k, h, w


@pytest.mark.parametrize("seed", range(24))
def test_conv_and_deconv_gradients_on_random_shapes(seed):
    r = np.random.default_rng(seed)
    n, c, o, k, h, w = _random_shape(r)
    conv = ConvLayer(c, o, kernel_size=k, padding=int(r.integers(0, 3)), rng=r, dtype=np.float64)
    conv.biases.value = r.standard_normal(o)
    x = r.standard_normal((n, c, h, w))
    up = r.standard_normal(conv2d_forward(x, conv).shape)
    dx, dk, db = conv2d_backward(x, conv, up)
    conv_loss = lambda: float(np.sum(conv2d_forward(x, conv) * up))  # noqa: E731
    np.testing.assert_allclose(dx, numeric_grad(conv_loss, x), atol=1e-6)
    np.testing.assert_allclose(dk, numeric_grad(conv_loss, conv.kernels.value), atol=1e-6)
    np.testing.assert_allclose(db, numeric_grad(conv_loss, conv.biases.value), atol=1e-6)

    deconv = DeconvLayer(c, o, kernel_size=k, rng=r, dtype=np.float64)
    out = deconv2d_forward(x, deconv)
    assert out.shape == (n, o, h + k - 1, w + k - 1)
    up = r.standard_normal(out.shape)
    dx, dk, db = deconv2d_backward(x, deconv, up)
    deconv_loss = lambda: float(np.sum(deconv2d_forward(x, deconv) * up))  # noqa: E731
    np.testing.assert_allclose(dx, numeric_grad(deconv_loss, x), atol=1e-6)
    np.testing.assert_allclose(dk, numeric_grad(deconv_loss, deconv.kernels.value), atol=1e-6)
    np.testing.assert_allclose(db, numeric_grad(deconv_loss, deconv.biases.value), atol=1e-6)


@pytest.mark.parametrize("seed", range(24))
def test_pool_and_upsample_gradients_on_random_shapes(seed):
    r = np.random.default_rng(100 + seed)
    n, c, _, k, h, w = _random_shape(r)
    s = int(r.integers(1, k + 1))
    # distinct values keep every argmax stable under the finite-difference step
    x = (r.permutation(n * c * h * w) * 0.01).reshape(n, c, h, w)
    out, argmax = maxpool_forward(x, k, s)
    assert out.shape == (n, c, (h - k) // s + 1, (w - k) // s + 1)
    up = r.standard_normal(out.shape)
    pool_loss = lambda: float(np.sum(maxpool_forward(x, k, s)[0] * up))  # noqa: E731
    np.testing.assert_allclose(maxpool_backward(up, argmax, x.shape, k, s), numeric_grad(pool_loss, x), atol=1e-6)

    f = int(r.integers(1, 4))
    grown = upsample_forward(x, f)
    assert grown.shape == (n, c, h * f, w * f)
    up = r.standard_normal(grown.shape)
    up_loss = lambda: float(np.sum(upsample_forward(x, f) * up))  # noqa: E731
    np.testing.assert_allclose(upsample_backward(up, f), numeric_grad(up_loss, x), atol=1e-6)


# ==================== ACTIVATIONS & LOSSES ====================

def test_sigmoid_is_stable_and_differentiable(rng):
    y = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0])
    x = rng.standard_normal((3, 4))
    upstream = rng.standard_normal((3, 4))

    def loss():
        return float(np.sum(sigmoid(x) * upstream))

    np.testing.assert_allclose(sigmoid_backward(upstream, sigmoid(x)), numeric_grad(loss, x), atol=1e-6)


def test_mse_value_and_gradient(rng):
    out, target = rng.random((2, 1, 3, 3)), rng.random((2, 1, 3, 3))
    value, grad = mse(out, target)
    assert value == pytest.approx(np.mean((out - target) ** 2))
    np.testing.assert_allclose(grad, numeric_grad(lambda: mse(out, target)[0], out), atol=1e-7)
    with pytest.raises(ShapeMismatchError):
        mse(out, target[:1])


def test_softmax_rows_sum_to_one(rng):
    p = softmax(rng.standard_normal((5, 10)) * 50)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    assert np.all(p >= 0)


def test_crossentropy_of_uniform_logits_is_log_ten():
    loss, grad = softmax_crossentropy(np.zeros(10), 3)
    assert loss == pytest.approx(math.log(10))
    assert grad.shape == (10,)
    assert grad[3] == pytest.approx(0.1 - 1.0)


def test_crossentropy_gradient_matches_finite_differences(rng):
    logits = rng.standard_normal((4, 10))
    classes = np.array([0, 9, 3, 3])
    _, grad = softmax_crossentropy(logits, classes)
    np.testing.assert_allclose(grad, numeric_grad(lambda: softmax_crossentropy(logits, classes)[0], logits),
                               atol=1e-7)


def test_crossentropy_rejects_unknown_class():
    with pytest.raises(ValueError):
        softmax_crossentropy(np.zeros((1, 10)), [10])


def test_penalties_example():
    loss, weight_grads, activation_grad = penalties([np.array([1.0, -2.0])], np.array([0.0, -3.0, 2.0]),
                                                    1e-4, 1e-4)
    assert loss == pytest.approx(5e-4 + 5e-4)
    np.testing.assert_allclose(weight_grads[0], [2e-4, -4e-4])
    np.testing.assert_allclose(activation_grad, [0.0, -1e-4, 1e-4])


def test_zero_penalties_contribute_nothing():
    loss, weight_grads, activation_grad = penalties([np.ones(3)], None, 0.0, 0.0)
    assert loss == 0.0
    assert not weight_grads[0].any()
    assert activation_grad is None


# ==================== ADADELTA ====================

def test_adadelta_first_step():
    param, grad = np.array([0.0]), np.array([1.0])
    new, sq, dsq = adadelta_step(param, grad, np.zeros(1), np.zeros(1), AdadeltaParams())
    expected = -math.sqrt(1e-7 / (0.05 + 1e-7))
    assert new[0] == pytest.approx(expected, rel=1e-9)
    assert sq[0] == pytest.approx(0.05)
    assert dsq[0] == pytest.approx(0.05 * expected ** 2)


def test_adadelta_rejects_non_finite_gradients():
    with pytest.raises(NonFiniteError):
        adadelta_step(np.zeros(2), np.array([1.0, np.nan]), np.zeros(2), np.zeros(2), AdadeltaParams())
    with pytest.raises(ShapeMismatchError):
        adadelta_step(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), AdadeltaParams())


def test_adadelta_minimizes_a_quadratic():
    p = Parameter(np.array([3.0, -2.0]))
    opt = Adadelta([p], AdadeltaParams(learning_rate=1.0))
    for _ in range(2000):
        opt.zero_grad()
        p.grad += 2 * p.value
        opt.step()
    assert np.all(np.abs(p.value) < np.array([3.0, 2.0]))
