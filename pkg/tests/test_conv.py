"""Convolution and pooling kernels against nested-loop oracles and finite
differences, on both backends."""

import numpy as np
import pytest

from lipembed import kernels, ops
from lipembed.gradcheck import numeric_gradient

from oracles import conv2d_direct, conv3d_direct


class TestConv2d:
    def test_identity_kernel(self, kernel_backend):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 6, 7))
        w = np.ones((1, 1, 1, 1))
        y, _ = ops.conv2d_forward(x, w, stride=1, pad=0)
        np.testing.assert_array_equal(y, x)

    def test_zero_kernel(self, kernel_backend):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 5, 5))
        w = np.zeros((2, 3, 3, 3))
        y, _ = ops.conv2d_forward(x, w, stride=1, pad=1)
        assert np.all(y == 0.0)

    @pytest.mark.parametrize("stride,pad", [((1, 1), (0, 0)), ((2, 1), (1, 2)), ((2, 2), (1, 1))])
    def test_matches_direct_oracle(self, kernel_backend, stride, pad):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 8, 9))
        w = rng.standard_normal((4, 3, 3, 3))
        y, _ = ops.conv2d_forward(x, w, stride=stride, pad=pad)
        expected = conv2d_direct(x, w, stride, pad)
        assert np.max(np.abs(y - expected)) < 1e-10

    def test_channel_mismatch_rejected(self, kernel_backend):
        x = np.zeros((3, 5, 5))
        w = np.zeros((2, 4, 3, 3))
        with pytest.raises(ValueError, match="channel"):
            ops.conv2d_forward(x, w)

    def test_gradients_match_finite_differences(self, kernel_backend):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        proj = rng.standard_normal((2, 3, 3, 3))  # fixed weights for scalar loss

        def loss_x(xv):
            y, _ = ops.conv2d_forward(xv, w, stride=2, pad=1)
            return float((y * proj).sum())

        def loss_w(wv):
            y, _ = ops.conv2d_forward(x, wv, stride=2, pad=1)
            return float((y * proj).sum())

        y, cache = ops.conv2d_forward(x, w, stride=2, pad=1)
        dx, dw = ops.conv2d_backward(proj, cache)
        np.testing.assert_allclose(dx, numeric_gradient(loss_x, x.copy()), rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(dw, numeric_gradient(loss_w, w.copy()), rtol=1e-6, atol=1e-8)


class TestConv3d:
    def test_identity_kernel(self, kernel_backend):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((1, 4, 5, 5))
        w = np.ones((1, 1, 1, 1, 1))
        y, _ = ops.conv3d_forward(x, w, stride=1, pad=0)
        np.testing.assert_array_equal(y, x)

    def test_zero_kernel(self, kernel_backend):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 4, 5, 5))
        w = np.zeros((3, 2, 3, 3, 3))
        y, _ = ops.conv3d_forward(x, w, stride=1, pad=1)
        assert np.all(y == 0.0)

    @pytest.mark.parametrize(
        "stride,pad",
        [((1, 1, 1), (0, 0, 0)), ((1, 2, 2), (2, 3, 3)), ((2, 2, 1), (1, 1, 2))],
    )
    def test_matches_direct_oracle(self, kernel_backend, stride, pad):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 4, 5, 5))
        w = rng.standard_normal((2, 1, 3, 3, 3))
        y, _ = ops.conv3d_forward(x, w, stride=stride, pad=pad)
        expected = conv3d_direct(x, w, stride, pad)
        assert np.max(np.abs(y - expected)) < 1e-10

    def test_front_end_config_preserves_time(self, kernel_backend):
        # temporal kernel 5, stride 1, pad 2: output T must equal input T
        rng = np.random.default_rng(7)
        for t in (3, 9, 29):
            x = rng.standard_normal((1, t, 16, 16))
            w = rng.standard_normal((4, 1, 5, 7, 7))
            y, _ = ops.conv3d_forward(x, w, stride=(1, 2, 2), pad=(2, 3, 3))
            assert y.shape[1] == t

    def test_gradients_match_finite_differences(self, kernel_backend):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((1, 2, 3, 5, 5))
        w = rng.standard_normal((2, 2, 3, 3, 3))
        proj = rng.standard_normal((1, 2, 3, 3, 3))

        def loss_x(xv):
            y, _ = ops.conv3d_forward(xv, w, stride=(1, 2, 2), pad=1)
            return float((y * proj).sum())

        def loss_w(wv):
            y, _ = ops.conv3d_forward(x, wv, stride=(1, 2, 2), pad=1)
            return float((y * proj).sum())

        _, cache = ops.conv3d_forward(x, w, stride=(1, 2, 2), pad=1)
        dx, dw = ops.conv3d_backward(proj, cache)
        np.testing.assert_allclose(dx, numeric_gradient(loss_x, x.copy()), rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(dw, numeric_gradient(loss_w, w.copy()), rtol=1e-6, atol=1e-8)


class TestMaxPool3d:
    def test_known_values(self, kernel_backend):
        x = np.arange(2 * 3 * 4 * 4, dtype=float).reshape(1, 2, 3, 4, 4)
        y, _ = ops.maxpool3d_forward(x, size=(1, 2, 2), stride=(1, 2, 2), pad=0)
        assert y.shape == (1, 2, 3, 2, 2)
        assert y[0, 0, 0, 0, 0] == 5.0  # max of the first 2x2 window

    def test_time_preserved_spatial_halved(self, kernel_backend):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((2, 3, 7, 12, 12))
        y, _ = ops.maxpool3d_forward(x, size=(1, 3, 3), stride=(1, 2, 2), pad=(0, 1, 1))
        assert y.shape == (2, 3, 7, 6, 6)

    def test_gradient_scatters_to_argmax(self, kernel_backend):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((1, 2, 3, 6, 6))
        proj = rng.standard_normal((1, 2, 3, 3, 3))

        def loss(xv):
            y, _ = ops.maxpool3d_forward(xv, size=(1, 3, 3), stride=(1, 2, 2), pad=(0, 1, 1))
            return float((y * proj).sum())

        y, cache = ops.maxpool3d_forward(x, size=(1, 3, 3), stride=(1, 2, 2), pad=(0, 1, 1))
        dx = ops.maxpool3d_backward(proj, cache)
        np.testing.assert_allclose(dx, numeric_gradient(loss, x.copy()), rtol=1e-6, atol=1e-8)


def test_backends_agree():
    """numpy and numba paths produce matching results on random cases."""
    if "numba" not in kernels.available_backends():
        pytest.skip("numba unavailable")
    rng = np.random.default_rng(11)
    x2 = rng.standard_normal((2, 3, 9, 8))
    w2 = rng.standard_normal((4, 3, 3, 3))
    x3 = rng.standard_normal((2, 2, 5, 9, 8))
    w3 = rng.standard_normal((3, 2, 3, 3, 3))
    dy2 = rng.standard_normal((2, 4, 5, 4))
    dy3 = rng.standard_normal((2, 3, 5, 5, 4))

    prev = kernels.set_backend("numpy")
    try:
        y2a = kernels.conv2d_forward(x2, w2, (2, 2), (1, 1))
        g2a = kernels.conv2d_backward(x2, w2, dy2, (2, 2), (1, 1))
        y3a = kernels.conv3d_forward(x3, w3, (1, 2, 2), (1, 1, 1))
        g3a = kernels.conv3d_backward(x3, w3, dy3, (1, 2, 2), (1, 1, 1))
        kernels.set_backend("numba")
        y2b = kernels.conv2d_forward(x2, w2, (2, 2), (1, 1))
        g2b = kernels.conv2d_backward(x2, w2, dy2, (2, 2), (1, 1))
        y3b = kernels.conv3d_forward(x3, w3, (1, 2, 2), (1, 1, 1))
        g3b = kernels.conv3d_backward(x3, w3, dy3, (1, 2, 2), (1, 1, 1))
    finally:
        kernels.set_backend(prev)

    np.testing.assert_allclose(y2a, y2b, atol=1e-12)
    np.testing.assert_allclose(y3a, y3b, atol=1e-12)
    for a, b in zip(g2a + g3a, g2b + g3b):
        np.testing.assert_allclose(a, b, atol=1e-12)
