"""Kernel correctness: loop oracles, finite differences, spec'd edge cases."""

import numpy as np
import pytest

from snnpkit.errors import InvalidArgumentError
from snnpkit.kernels import (
    LayerGrads,
    avgpool2d_backward,
    avgpool2d_forward,
    conv2d_backward,
    conv2d_forward,
    conv2d_input_backward,
    gaussian_blur3,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_ce,
)

rng = np.random.default_rng(20240511)


# ---------------------------------------------------------------- oracles

def conv2d_naive(x, w, b, stride, padding):
    """Six nested loops; the independent reference for cross-correlation."""
    n, ci, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for nn in range(n):
        for oo in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = b[oo]
                    for cc in range(ci):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (w[oo, cc, ki, kj]
                                        * xp[nn, cc, i * stride + ki, j * stride + kj])
                    out[nn, oo, i, j] = acc
    return out


def linear_naive(x, w, b):
    n, f = x.shape
    c = w.shape[0]
    out = np.zeros((n, c))
    for nn in range(n):
        for cc in range(c):
            acc = b[cc]
            for ff in range(f):
                acc += w[cc, ff] * x[nn, ff]
            out[nn, cc] = acc
    return out


def fd_grad(f, x, eps=1e-5):
    """Central finite differences of a scalar function over every entry of x."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def assert_close_rel(actual, expected, rtol, atol=1e-8):
    np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol)


# ---------------------------------------------------------------- conv2d

class TestConv2d:
    def test_scalar_scaling(self):
        x = np.ones((1, 1, 3, 3))
        w = np.full((1, 1, 1, 1), 2.0)
        out = conv2d_forward(x, w, np.zeros(1), stride=1, padding=0)
        np.testing.assert_array_equal(out, np.full((1, 1, 3, 3), 2.0))

    def test_zero_input_gives_bias(self):
        x = np.zeros((2, 3, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = conv2d_forward(x, w, b, stride=1, padding=1)
        expected = np.broadcast_to(b[None, :, None, None], out.shape)
        np.testing.assert_allclose(out, expected)

    def test_matches_naive_oracle(self):
        x = rng.normal(size=(1, 2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = conv2d_forward(x, w, b, stride=1, padding=1)
        ref = conv2d_naive(x, w, b, stride=1, padding=1)
        assert_close_rel(out, ref, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_strides_and_padding_against_oracle(self, stride, padding):
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = conv2d_forward(x, w, b, stride=stride, padding=padding)
        ref = conv2d_naive(x, w, b, stride=stride, padding=padding)
        assert_close_rel(out, ref, rtol=1e-12, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        x = np.zeros((1, 2, 4, 4))
        w = np.zeros((3, 5, 3, 3))
        with pytest.raises(InvalidArgumentError):
            conv2d_forward(x, w, np.zeros(3))

    def test_backward_zero_cotangent(self):
        x = rng.normal(size=(1, 2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        g = conv2d_backward(x, w, np.zeros((1, 3, 4, 4)), stride=1, padding=1)
        assert not g.d_weight.any() and not g.d_bias.any() and not g.d_input.any()

    def test_backward_ones_cotangent_1x1(self):
        # 1x1 kernel, d_output of ones: d_weight[o, c] = sum over input channel c
        x = rng.normal(size=(2, 3, 4, 4))
        w = rng.normal(size=(2, 3, 1, 1))
        g = conv2d_backward(x, w, np.ones((2, 2, 4, 4)))
        per_channel = x.sum(axis=(0, 2, 3))
        for oo in range(2):
            np.testing.assert_allclose(g.d_weight[oo, :, 0, 0], per_channel)

    @pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1)])
    def test_backward_matches_finite_difference(self, stride, padding):
        x = rng.normal(size=(1, 2, 4, 4))
        w = rng.normal(size=(2, 2, 3, 3))
        b = rng.normal(size=2)
        ho = (4 + 2 * padding - 3) // stride + 1
        cot = rng.normal(size=(1, 2, ho, ho))

        def loss():
            return float((cot * conv2d_forward(x, w, b, stride, padding)).sum())

        g = conv2d_backward(x, w, cot, stride, padding)
        assert_close_rel(g.d_weight, fd_grad(loss, w), rtol=1e-4, atol=1e-7)
        assert_close_rel(g.d_input, fd_grad(loss, x), rtol=1e-4, atol=1e-7)
        assert_close_rel(g.d_bias, fd_grad(loss, b), rtol=1e-4, atol=1e-7)

    def test_input_backward_matches_full_backward(self):
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        cot = rng.normal(size=(2, 4, 6, 6))
        g = conv2d_backward(x, w, cot, 1, 1)
        d_in = conv2d_input_backward(w, cot, x.shape, 1, 1)
        np.testing.assert_array_equal(g.d_input, d_in)

    def test_forward_is_pure(self):
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        a = conv2d_forward(x, w, b, 1, 1)
        bb = conv2d_forward(x, w, b, 1, 1)
        assert (a == bb).all()


# ---------------------------------------------------------------- linear

class TestLinear:
    def test_identity_weight(self):
        x = rng.normal(size=(3, 4))
        out = linear_forward(x, np.eye(4), np.zeros(4))
        np.testing.assert_array_equal(out, x)

    def test_zero_input_gives_bias(self):
        b = rng.normal(size=5)
        out = linear_forward(np.zeros((2, 3)), rng.normal(size=(5, 3)), b)
        np.testing.assert_allclose(out, np.broadcast_to(b, (2, 5)))

    def test_matches_naive_oracle(self):
        x = rng.normal(size=(2, 3))
        w = rng.normal(size=(4, 3))
        b = rng.normal(size=4)
        assert_close_rel(linear_forward(x, w, b), linear_naive(x, w, b),
                         rtol=1e-12, atol=1e-12)

    def test_backward_zero_cotangent(self):
        g = linear_backward(rng.normal(size=(2, 3)), rng.normal(size=(4, 3)),
                            np.zeros((2, 4)))
        assert not g.d_weight.any() and not g.d_input.any()

    def test_backward_one_hot_row(self):
        x = rng.normal(size=(1, 3))
        w = rng.normal(size=(4, 3))
        cot = np.zeros((1, 4))
        cot[0, 2] = 1.0
        g = linear_backward(x, w, cot)
        np.testing.assert_array_equal(g.d_weight[2], x[0])
        assert not g.d_weight[[0, 1, 3]].any()

    def test_backward_matches_finite_difference(self):
        x = rng.normal(size=(3, 5))
        w = rng.normal(size=(4, 5))
        b = rng.normal(size=4)
        cot = rng.normal(size=(3, 4))

        def loss():
            return float((cot * linear_forward(x, w, b)).sum())

        g = linear_backward(x, w, cot)
        assert_close_rel(g.d_weight, fd_grad(loss, w), rtol=1e-4, atol=1e-7)
        assert_close_rel(g.d_input, fd_grad(loss, x), rtol=1e-4, atol=1e-7)
        assert_close_rel(g.d_bias, fd_grad(loss, b), rtol=1e-4, atol=1e-7)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            linear_forward(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(4))


# ---------------------------------------------------------------- pooling

class TestAvgPool:
    def test_constant_input(self):
        out = avgpool2d_forward(np.full((1, 2, 4, 4), 3.25), 2)
        np.testing.assert_array_equal(out, np.full((1, 2, 2, 2), 3.25))

    def test_k1_identity(self):
        x = rng.normal(size=(1, 2, 4, 4))
        np.testing.assert_array_equal(avgpool2d_forward(x, 1), x)
        d = rng.normal(size=(1, 2, 4, 4))
        np.testing.assert_array_equal(avgpool2d_backward(d, 1), d)

    def test_ramp_window_means(self):
        x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        out = avgpool2d_forward(x, 2)
        # hand-computed window means of the 4x4 ramp
        expected = np.array([[[[2.5, 4.5], [10.5, 12.5]]]])
        np.testing.assert_array_equal(out, expected)

    def test_backward_spreads_uniformly(self):
        d = np.array([[[[4.0]]]])
        out = avgpool2d_backward(d, 2)
        np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 1.0))

    def test_non_divisible_rejected(self):
        with pytest.raises(InvalidArgumentError):
            avgpool2d_forward(np.zeros((1, 1, 5, 5)), 2)

    def test_backward_matches_finite_difference(self):
        x = rng.normal(size=(1, 2, 4, 4))
        cot = rng.normal(size=(1, 2, 2, 2))

        def loss():
            return float((cot * avgpool2d_forward(x, 2)).sum())

        assert_close_rel(avgpool2d_backward(cot, 2), fd_grad(loss, x),
                         rtol=1e-4, atol=1e-8)


# ---------------------------------------------------------------- relu

class TestRelu:
    def test_all_positive_identity(self):
        x = np.abs(rng.normal(size=(2, 3))) + 0.1
        np.testing.assert_array_equal(relu_forward(x), x)
        d = rng.normal(size=(2, 3))
        np.testing.assert_array_equal(relu_backward(x, d), d)

    def test_all_negative_zero(self):
        x = -np.abs(rng.normal(size=(2, 3))) - 0.1
        assert not relu_forward(x).any()
        assert not relu_backward(x, rng.normal(size=(2, 3))).any()

    def test_backward_matches_finite_difference_away_from_kink(self):
        x = rng.normal(size=(4, 6))
        x = x[np.abs(x) > 1e-3].reshape(1, -1)  # exclude the kink
        cot = rng.normal(size=x.shape)

        def loss():
            return float((cot * relu_forward(x)).sum())

        assert_close_rel(relu_backward(x, cot), fd_grad(loss, x),
                         rtol=1e-4, atol=1e-8)


# ---------------------------------------------------------------- softmax CE

class TestSoftmaxCe:
    def test_uniform_logits_one_hot(self):
        for c in (2, 5, 10):
            logits = np.zeros((1, c))
            targets = np.zeros((1, c))
            targets[0, 0] = 1.0
            loss, _ = softmax_ce(logits, targets)
            assert loss == pytest.approx(np.log(c), rel=1e-12)

    def test_saturated_correct_logit(self):
        targets = np.zeros((1, 4))
        targets[0, 1] = 1.0
        loss, _ = softmax_ce(targets * 50.0, targets)
        assert loss == pytest.approx(0.0, abs=1e-10)

    def test_gradient_matches_finite_difference(self):
        logits = rng.normal(size=(3, 5))
        targets = rng.dirichlet(np.ones(5), size=3)

        def loss():
            return softmax_ce(logits, targets)[0]

        _, d = softmax_ce(logits, targets)
        assert_close_rel(d, fd_grad(loss, logits, eps=1e-6), rtol=1e-6, atol=1e-9)

    def test_unnormalized_target_rejected(self):
        with pytest.raises(InvalidArgumentError):
            softmax_ce(np.zeros((1, 3)), np.array([[0.5, 0.1, 0.1]]))

    def test_softmax_rows_sum_to_one(self):
        p = softmax(rng.normal(size=(4, 7)) * 10)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------- blur

class TestGaussianBlur:
    def test_preserves_constant(self):
        x = np.full((1, 1, 5, 5), 0.37)
        np.testing.assert_allclose(gaussian_blur3(x), x, atol=1e-12)

    def test_mass_preserved_under_reflect(self):
        # reflect padding keeps the kernel a weighted average of in-range values
        x = rng.random((1, 1, 6, 6))
        out = gaussian_blur3(x)
        assert out.min() >= x.min() - 1e-12 and out.max() <= x.max() + 1e-12


# ------------------------------------------------- end-to-end composition

def test_two_layer_composition_gradcheck():
    """conv -> relu -> pool -> linear; end-to-end weight grads vs finite diff."""
    x = rng.normal(size=(2, 1, 4, 4))
    w1 = rng.normal(size=(2, 1, 3, 3)) * 0.5
    b1 = rng.normal(size=2) * 0.1
    w2 = rng.normal(size=(3, 8)) * 0.5
    b2 = rng.normal(size=3) * 0.1
    targets = rng.dirichlet(np.ones(3), size=2)

    def forward():
        a = conv2d_forward(x, w1, b1, 1, 1)
        r = relu_forward(a)
        p = avgpool2d_forward(r, 2)
        f = p.reshape(2, -1)
        z = linear_forward(f, w2, b2)
        return a, r, p, f, z

    def loss():
        return softmax_ce(forward()[-1], targets)[0]

    a, r, p, f, z = forward()
    _, dz = softmax_ce(z, targets)
    g2 = linear_backward(f, w2, dz)
    dp = g2.d_input.reshape(p.shape)
    dr = avgpool2d_backward(dp, 2)
    da = relu_backward(a, dr)
    g1 = conv2d_backward(x, w1, da, 1, 1)

    assert_close_rel(g2.d_weight, fd_grad(loss, w2), rtol=1e-3, atol=1e-8)
    assert_close_rel(g2.d_bias, fd_grad(loss, b2), rtol=1e-3, atol=1e-8)
    assert_close_rel(g1.d_weight, fd_grad(loss, w1), rtol=1e-3, atol=1e-8)
    assert_close_rel(g1.d_bias, fd_grad(loss, b1), rtol=1e-3, atol=1e-8)
