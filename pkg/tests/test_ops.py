"""Convolution / pooling / relu forward oracles and adjoint checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperseg.gradcheck import fd_grad, rel_error
from hyperseg.ops import ConvSpec, conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward


def conv2d_naive(x, w, b, spec):
    """Brute-force triple-loop cross-correlation oracle."""
    cin, h, wd = x.shape
    k, p, s = spec.kernel_size, spec.padding, spec.stride
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    ho = (h + 2 * p - k) // s + 1
    wo = (wd + 2 * p - k) // s + 1
    out = np.zeros((spec.out_channels, ho, wo))
    for o in range(spec.out_channels):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(cin):
                    for a in range(k):
                        for bb in range(k):
                            acc += w[o, c, a, bb] * xp[c, i * s + a, j * s + bb]
                out[o, i, j] = acc + b[o]
    return out


class TestConvForward:
    def test_identity_kernel(self):
        x = np.ones((1, 3, 3))
        w = np.ones((1, 1, 1, 1))
        b = np.zeros(1)
        out = conv2d(x, w, b, ConvSpec(1, 1, 1))
        np.testing.assert_array_equal(out, x)

    def test_affine_1x1(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out = conv2d(x, np.full((1, 1, 1, 1), 2.0), np.ones(1), ConvSpec(1, 1, 1))
        np.testing.assert_allclose(out, [[[3.0, 5.0], [7.0, 9.0]]])

    def test_matches_naive_loop(self, g):
        spec = ConvSpec(2, 3, 3, padding=1)
        x = g.normal(size=(2, 5, 5))
        w = g.normal(size=(3, 2, 3, 3))
        b = g.normal(size=3)
        np.testing.assert_allclose(conv2d(x, w, b, spec), conv2d_naive(x, w, b, spec), atol=1e-12)

    @pytest.mark.parametrize("pad,stride", [(0, 1), (1, 1), (2, 2), (0, 3)])
    def test_matches_naive_loop_strided(self, g, pad, stride):
        spec = ConvSpec(2, 2, 3, padding=pad, stride=stride)
        x = g.normal(size=(2, 9, 8))
        w = g.normal(size=(2, 2, 3, 3))
        b = g.normal(size=2)
        np.testing.assert_allclose(conv2d(x, w, b, spec), conv2d_naive(x, w, b, spec), atol=1e-12)

    def test_batched_matches_per_image(self, g):
        spec = ConvSpec(3, 2, 3, padding=1)
        x = g.normal(size=(4, 3, 6, 6))
        w = g.normal(size=(2, 3, 3, 3))
        b = g.normal(size=2)
        batched = conv2d(x, w, b, spec)
        for i in range(4):
            np.testing.assert_array_equal(batched[i], conv2d(x[i], w, b, spec))

    def test_linear_in_input_and_weights(self, g):
        spec = ConvSpec(2, 2, 3, padding=1)
        x1, x2 = g.normal(size=(2, 2, 5, 5))
        w1, w2 = g.normal(size=(2, 2, 2, 3, 3))
        b0 = np.zeros(2)
        lhs = conv2d(x1 + x2, w1, b0, spec)
        np.testing.assert_allclose(lhs, conv2d(x1, w1, b0, spec) + conv2d(x2, w1, b0, spec), atol=1e-12)
        lhs = conv2d(x1, w1 + w2, b0, spec)
        np.testing.assert_allclose(lhs, conv2d(x1, w1, b0, spec) + conv2d(x1, w2, b0, spec), atol=1e-12)

    def test_pure_bit_identical(self, g):
        spec = ConvSpec(2, 2, 3, padding=1)
        x = g.normal(size=(2, 6, 6))
        w = g.normal(size=(2, 2, 3, 3))
        b = g.normal(size=2)
        assert np.array_equal(conv2d(x, w, b, spec), conv2d(x, w, b, spec))

    def test_shape_mismatch_names_dimension(self):
        spec = ConvSpec(3, 2, 3, padding=1)
        with pytest.raises(ValueError, match="channel"):
            conv2d(np.zeros((2, 5, 5)), np.zeros((2, 3, 3, 3)), np.zeros(2), spec)
        with pytest.raises(ValueError, match="weights shape"):
            conv2d(np.zeros((3, 5, 5)), np.zeros((2, 3, 5, 5)), np.zeros(2), spec)
        with pytest.raises(ValueError, match="bias shape"):
            conv2d(np.zeros((3, 5, 5)), np.zeros((2, 3, 3, 3)), np.zeros(3), spec)


class TestConvBackward:
    def test_zero_grad_out(self, g):
        spec = ConvSpec(2, 2, 3, padding=1)
        x = g.normal(size=(2, 4, 4))
        w = g.normal(size=(2, 2, 3, 3))
        gx, gw, gb = conv2d_backward(np.zeros((2, 4, 4)), x, w, spec)
        assert not gx.any() and not gw.any() and not gb.any()

    def test_scalar_chain_rule(self):
        # out = w*x + b on a single pixel
        x = np.array([[[2.0]]])
        w = np.array([[[[3.0]]]])
        gout = np.array([[[5.0]]])
        gx, gw, gb = conv2d_backward(gout, x, w, ConvSpec(1, 1, 1))
        assert gx[0, 0, 0] == 5.0 * 3.0
        assert gw[0, 0, 0, 0] == 5.0 * 2.0
        assert gb[0] == 5.0

    def test_linear_in_grad_out(self, g):
        spec = ConvSpec(2, 2, 3, padding=1)
        x = g.normal(size=(2, 4, 4))
        w = g.normal(size=(2, 2, 3, 3))
        g1, g2 = g.normal(size=(2, 2, 4, 4))
        outs1 = conv2d_backward(g1, x, w, spec)
        outs2 = conv2d_backward(g2, x, w, spec)
        both = conv2d_backward(g1 + g2, x, w, spec)
        for a, b2, c in zip(outs1, outs2, both):
            np.testing.assert_allclose(a + b2, c, atol=1e-12)

    @pytest.mark.parametrize("pad,stride", [(1, 1), (0, 2)])
    def test_finite_differences(self, g, pad, stride):
        spec = ConvSpec(2, 2, 3, padding=pad, stride=stride)
        x = g.normal(size=(2, 5, 5))
        w = g.normal(size=(2, 2, 3, 3))
        b = g.normal(size=2)
        probe = g.normal(size=conv2d(x, w, b, spec).shape)
        gx, gw, gb = conv2d_backward(probe, x, w, spec)
        assert rel_error(gx, fd_grad(lambda v: float((conv2d(v, w, b, spec) * probe).sum()), x)) < 1e-6
        assert rel_error(gw, fd_grad(lambda v: float((conv2d(x, v, b, spec) * probe).sum()), w)) < 1e-6
        assert rel_error(gb, fd_grad(lambda v: float((conv2d(x, w, v, spec) * probe).sum()), b)) < 1e-6


class TestRelu:
    def test_values(self):
        np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_positive_identity(self, g):
        x = g.uniform(0.1, 2.0, size=(3, 4))
        np.testing.assert_array_equal(relu(x), x)

    def test_finite_differences_away_from_kink(self, g):
        x = g.uniform(0.2, 2.0, size=(2, 3, 3)) * g.choice([-1.0, 1.0], size=(2, 3, 3))
        probe = g.normal(size=x.shape)
        analytic = relu_backward(probe, x)
        assert rel_error(analytic, fd_grad(lambda v: float((relu(v) * probe).sum()), x)) < 1e-6


class TestMaxpool:
    def test_simple(self):
        out = maxpool2(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        np.testing.assert_array_equal(out, [[[4.0]]])

    def test_constant_tie_break_first_cell(self):
        x = np.ones((1, 4, 4))
        np.testing.assert_array_equal(maxpool2(x), np.ones((1, 2, 2)))
        gx = maxpool2_backward(np.ones((1, 2, 2)), x)
        # gradient lands on the top-left cell of each 2x2 window
        expected = np.zeros((1, 4, 4))
        expected[0, ::2, ::2] = 1.0
        np.testing.assert_array_equal(gx, expected)

    def test_matches_window_scan(self, g):
        x = g.normal(size=(3, 4, 4))
        out = maxpool2(x)
        for c in range(3):
            for i in range(2):
                for j in range(2):
                    assert out[c, i, j] == x[c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()

    def test_odd_extent_rejected(self):
        with pytest.raises(ValueError, match="even"):
            maxpool2(np.zeros((1, 3, 4)))

    def test_finite_differences(self, g):
        while True:  # ensure a clear argmax margin in every window
            x = g.normal(size=(2, 4, 4))
            win = x.reshape(2, 2, 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(2, 2, 2, 4)
            sw = np.sort(win, axis=-1)
            if np.min(sw[..., -1] - sw[..., -2]) > 1e-3:
                break
        probe = g.normal(size=(2, 2, 2))
        analytic = maxpool2_backward(probe, x)
        assert rel_error(analytic, fd_grad(lambda v: float((maxpool2(v) * probe).sum()), x)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_conv_superposition_property(seed):
    g = np.random.default_rng(seed)
    spec = ConvSpec(1, 1, 3, padding=1)
    x1 = g.normal(size=(1, 4, 4))
    x2 = g.normal(size=(1, 4, 4))
    w = g.normal(size=(1, 1, 3, 3))
    b0 = np.zeros(1)
    np.testing.assert_allclose(
        conv2d(x1 + x2, w, b0, spec),
        conv2d(x1, w, b0, spec) + conv2d(x2, w, b0, spec),
        atol=1e-12,
    )
