import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from probprune.errors import ConfigError, ShapeError
from probprune.layers import (
    ConvLayer,
    FcLayer,
    MaxPoolLayer,
    ReluLayer,
    col2im_batch,
    conv_output_size,
    im2col,
    im2col_batch,
    softmax_cross_entropy,
)


def direct_conv(x, weights, bias, stride, pad, column_mask=None):
    """Brute-force convolution oracle: explicit loops, no im2col."""
    n, c_in, h, w = x.shape
    c_out, _, kh, kw = weights.shape
    w_eff = weights.copy()
    if column_mask is not None:
        w_eff = w_eff.reshape(c_out, c_in * kh * kw) * column_mask
        w_eff = w_eff.reshape(weights.shape)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, c_out, h_out, w_out))
    for s in range(n):
        for f in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    patch = xp[s, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[s, f, i, j] = np.sum(patch * w_eff[f]) + bias[f]
    return out


class TestIm2col:
    def test_hand_enumerated_3x3(self):
        x = np.arange(1.0, 10.0).reshape(1, 3, 3)
        cols = im2col(x, 2, 2, stride=1, pad=0)
        expected = np.array(
            [
                [1, 2, 4, 5],
                [2, 3, 5, 6],
                [4, 5, 7, 8],
                [5, 6, 8, 9],
            ],
            dtype=np.float64,
        ).T
        assert_array_equal(cols, expected)

    def test_zero_input(self, rng):
        x = np.zeros((2, 5, 5))
        cols = im2col(x, 3, 3, stride=1, pad=1)
        assert cols.shape == (2 * 9, 25)
        assert not cols.any()

    def test_1x1_kernel_is_reshape(self, rng):
        x = rng.standard_normal((3, 4, 4))
        cols = im2col(x, 1, 1)
        assert_array_equal(cols, x.reshape(3, 16))

    def test_padding_contributes_zeros(self):
        x = np.ones((1, 2, 2))
        cols = im2col(x, 3, 3, stride=1, pad=1)
        # the center patch sees all four ones, corner patches see one
        assert cols.shape == (9, 4)
        assert cols.sum() == 16.0

    def test_bad_geometry_rejected(self):
        with pytest.raises(ConfigError):
            conv_output_size(5, 2, 2, 0)
        with pytest.raises(ConfigError):
            im2col(np.zeros((1, 3, 3)), 5, 5)

    def test_col2im_is_adjoint_of_im2col(self, rng):
        # <im2col(x), y> == <x, col2im(y)> pins the scatter-add inverse
        x = rng.standard_normal((2, 3, 6, 6))
        cols = im2col_batch(x, 3, 3, stride=1, pad=1)
        y = rng.standard_normal(cols.shape)
        lhs = np.sum(cols * y)
        back = col2im_batch(y, x.shape, 3, 3, stride=1, pad=1)
        rhs = np.sum(x * back)
        assert_allclose(lhs, rhs, rtol=1e-12)


class TestConvLayer:
    def make_layer(self, rng, c_out=3, c_in=2, k=3, stride=1, pad=1):
        w = rng.standard_normal((c_out, c_in, k, k))
        b = rng.standard_normal(c_out)
        return ConvLayer(w, b, stride, pad)

    def test_identity_mask_matches_direct_conv(self, rng):
        layer = self.make_layer(rng)
        x = rng.standard_normal((2, 2, 5, 5))
        got = layer.forward(x)
        want = direct_conv(x, layer.weights, layer.bias, 1, 1)
        assert_allclose(got, want, atol=1e-12)

    def test_masked_column_matches_zeroed_direct_conv(self, rng):
        layer = self.make_layer(rng, c_out=2, c_in=3, k=4, stride=1, pad=0)
        x = rng.standard_normal((2, 3, 4, 4))
        mask = np.ones(layer.n_columns)
        mask[rng.integers(0, layer.n_columns)] = 0
        layer.set_mask(mask)
        got = layer.forward(x)
        want = direct_conv(x, layer.weights, layer.bias, 1, 0, column_mask=mask)
        assert_allclose(got, want, atol=1e-12)

    def test_strided_conv_matches_direct(self, rng):
        layer = self.make_layer(rng, c_out=4, c_in=2, k=2, stride=2, pad=0)
        x = rng.standard_normal((3, 2, 6, 6))
        assert_allclose(
            layer.forward(x), direct_conv(x, layer.weights, layer.bias, 2, 0), atol=1e-12
        )

    def test_all_masked_leaves_bias(self, rng):
        layer = self.make_layer(rng)
        layer.set_mask(np.zeros(layer.n_columns))
        x = rng.standard_normal((1, 2, 5, 5))
        out = layer.forward(x)
        assert_allclose(out, np.broadcast_to(layer.bias[None, :, None, None], out.shape))

    def test_masked_columns_get_zero_weight_grad(self, rng):
        layer = self.make_layer(rng)
        mask = np.ones(layer.n_columns)
        mask[[1, 7, 11]] = 0
        layer.set_mask(mask)
        x = rng.standard_normal((2, 2, 5, 5))
        out = layer.forward(x)
        layer.backward(rng.standard_normal(out.shape))
        gw = layer.grad_weights.reshape(layer.c_out, layer.n_columns)
        assert_array_equal(gw[:, [1, 7, 11]], 0.0)
        assert np.any(gw[:, 0] != 0)

    def test_zero_grad_out_gives_zero_grads(self, rng):
        layer = self.make_layer(rng)
        x = rng.standard_normal((1, 2, 5, 5))
        out = layer.forward(x)
        gx = layer.backward(np.zeros_like(out))
        assert not layer.grad_weights.any()
        assert not layer.grad_bias.any()
        assert not gx.any()

    def test_mask_validation(self, rng):
        layer = self.make_layer(rng)
        with pytest.raises(ShapeError):
            layer.set_mask(np.ones(layer.n_columns + 1))
        with pytest.raises(ConfigError):
            layer.set_mask(np.full(layer.n_columns, 0.5))

    def test_input_shape_validation(self, rng):
        layer = self.make_layer(rng)
        with pytest.raises(ShapeError):
            layer.forward(np.zeros((1, 3, 5, 5)))


class TestPoolAndRelu:
    def test_maxpool_forward_known_values(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        out = MaxPoolLayer(2).forward(x)
        assert_array_equal(out[0, 0], [[5, 7], [13, 15]])

    def test_maxpool_backward_routes_to_argmax(self):
        pool = MaxPoolLayer(2)
        x = np.array([[[[1.0, 2.0], [4.0, 3.0]]]])
        pool.forward(x)
        gx = pool.backward(np.array([[[[7.0]]]]))
        assert_array_equal(gx, [[[[0, 0], [7, 0]]]])

    def test_overlapping_pool_rejected(self):
        with pytest.raises(ConfigError):
            MaxPoolLayer(3, stride=1)

    def test_relu_gradient_gates_on_sign(self, rng):
        relu = ReluLayer()
        x = rng.standard_normal((4, 7))
        out = relu.forward(x)
        g = rng.standard_normal(out.shape)
        gx = relu.backward(g)
        assert_array_equal(gx[x > 0], g[x > 0])
        assert_array_equal(gx[x <= 0], 0.0)


class TestSoftmaxXent:
    def test_perfect_prediction_loss_zero(self):
        logits = np.array([[100.0, 0.0, 0.0]])
        loss, _ = softmax_cross_entropy(logits, np.array([0]))
        assert_allclose(loss, 0.0, atol=1e-12)

    def test_uniform_ten_classes(self):
        logits = np.zeros((4, 10))
        loss, _ = softmax_cross_entropy(logits, np.array([0, 3, 5, 9]))
        assert_allclose(loss, np.log(10.0), rtol=1e-12)

    def test_large_logits_do_not_overflow(self):
        logits = np.array([[1e4, -1e4], [-1e4, 1e4]])
        loss, grad = softmax_cross_entropy(logits, np.array([0, 1]))
        assert np.isfinite(loss)
        assert np.all(np.isfinite(grad))

    def test_grad_matches_finite_difference(self, rng):
        logits = rng.standard_normal((3, 5))
        y = np.array([1, 4, 0])
        _, grad = softmax_cross_entropy(logits, y)
        eps = 1e-6
        for i in range(3):
            for j in range(5):
                lp = logits.copy()
                lp[i, j] += eps
                lm = logits.copy()
                lm[i, j] -= eps
                num = (softmax_cross_entropy(lp, y)[0] - softmax_cross_entropy(lm, y)[0]) / (
                    2 * eps
                )
                assert_allclose(grad[i, j], num, atol=1e-8)


class TestFcLayer:
    def test_forward_definition(self, rng):
        w = rng.standard_normal((4, 6))
        b = rng.standard_normal(4)
        layer = FcLayer(w, b)
        x = rng.standard_normal((2, 6))
        assert_allclose(layer.forward(x), x @ w.T + b, atol=1e-14)

    def test_backward_shapes_and_values(self, rng):
        w = rng.standard_normal((4, 6))
        layer = FcLayer(w, np.zeros(4))
        x = rng.standard_normal((3, 6))
        layer.forward(x)
        g = rng.standard_normal((3, 4))
        gx = layer.backward(g)
        assert_allclose(layer.grad_weights, g.T @ x, atol=1e-14)
        assert_allclose(layer.grad_bias, g.sum(axis=0), atol=1e-14)
        assert_allclose(gx, g @ w, atol=1e-14)
