"""Activations, norms, projections, and convolutions against references."""

import math

import numpy as np
import pytest

import oracles
from multiconv.autodiff import Tape, Tensor, backward, tsum
from multiconv.errors import ConfigError, ShapeError
from multiconv.layers import (
    Conv2dDown,
    DepthwiseConv1d,
    FeedForward,
    GroupedConv1d,
    LayerNorm,
    Linear,
    Module,
    Subsampler,
    dropout,
    gelu,
    glu,
    sigmoid,
    sinusoid_table,
    softmax,
    swish,
)

RNG = np.random.default_rng(21)


# the erf-based unit: x * Phi(x) at pinned points (values from a
# high-precision normal CDF, truncated to double)
GELU_AT_ONE = 0.841344746068543
GELU_AT_MINUS_TEN = -7.61985302416053e-23


def test_gelu_pinned_values():
    x = Tensor(np.array([0.0, 1.0, -10.0]))
    y = gelu(x).data
    assert y[0] == 0.0
    assert y[1] == pytest.approx(GELU_AT_ONE, abs=1e-15)
    assert y[2] == pytest.approx(GELU_AT_MINUS_TEN, rel=1e-12)


def test_gelu_is_odd_about_half_x():
    # x*Phi(x) + (-x)*Phi(-x) = x*(Phi(x) - Phi(x)) + x... direct identity:
    # gelu(x) - gelu(-x) = x for every x, since Phi(x) + Phi(-x) = 1
    x = RNG.normal(size=64)
    diff = gelu(Tensor(x)).data - gelu(Tensor(-x)).data
    assert np.allclose(diff, x, atol=1e-14)


def test_sigmoid_and_swish_values():
    x = np.array([0.0, 2.0, -2.0])
    s = sigmoid(Tensor(x)).data
    expected = 1.0 / (1.0 + np.exp(-x))
    assert np.allclose(s, expected, atol=1e-15)
    assert np.allclose(swish(Tensor(x)).data, x * expected, atol=1e-15)


def test_softmax_rows_sum_to_one_and_match_reference():
    z = RNG.normal(size=(5, 7)) * 3
    y = softmax(Tensor(z)).data
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(y, oracles.softmax_rows(z), atol=1e-14)


def test_softmax_shift_invariance():
    z = RNG.normal(size=(4, 5))
    shifted = softmax(Tensor(z + 100.0)).data
    assert np.allclose(shifted, softmax(Tensor(z)).data, atol=1e-12)


def test_glu_gates_first_half_by_sigmoid_of_second():
    x = RNG.normal(size=(6, 8))
    y = glu(Tensor(x)).data
    expected = x[:, :4] / (1.0 + np.exp(-x[:, 4:]))
    assert np.allclose(y, expected, atol=1e-14)
    with pytest.raises(ShapeError):
        glu(Tensor(np.ones((2, 5))))


def test_dropout_identity_without_rng_or_p():
    x = Tensor(RNG.normal(size=(4, 4)))
    assert dropout(x, 0.0, np.random.default_rng(0)) is x
    assert dropout(x, 0.5, None) is x
    with pytest.raises(ConfigError):
        dropout(x, 1.0, np.random.default_rng(0))


def test_dropout_is_inverted_and_masks():
    x = Tensor(np.ones((200, 50), dtype=np.float32))
    y = dropout(x, 0.25, np.random.default_rng(3))
    kept = y.data != 0
    assert y.dtype == np.float32
    assert np.allclose(y.data[kept], 1.0 / 0.75)
    assert abs(kept.mean() - 0.75) < 0.02
    x64 = Tensor(np.ones((50, 40)), requires_grad=True)
    with Tape():
        y = dropout(x64, 0.5, np.random.default_rng(4))
        backward(tsum(y))
    assert np.array_equal(x64.grad, (y.data != 0) * 2.0)


def test_linear_matches_numpy_affine():
    lin = Linear(5, 3, np.random.default_rng(0), dtype=np.float64)
    x = RNG.normal(size=(7, 5))
    assert np.allclose(lin(Tensor(x)).data, x @ lin.weight.data + lin.bias.data,
                       atol=1e-14)
    nb = Linear(5, 3, np.random.default_rng(0), bias=False)
    assert nb.bias is None
    assert len(nb.parameters()) == 1


def test_layer_norm_normalizes_then_scales():
    norm = LayerNorm(6, dtype=np.float64)
    x = RNG.normal(size=(9, 6)) * 4 + 2
    y = norm(Tensor(x)).data
    assert np.allclose(y.mean(axis=1), 0.0, atol=1e-12)
    assert np.allclose(y.var(axis=1), 1.0, atol=1e-4)  # eps-shifted variance
    norm.gamma.data[:] = 3.0
    norm.beta.data[:] = -1.0
    y2 = norm(Tensor(x)).data
    assert np.allclose(y2, 3.0 * y - 1.0, atol=1e-12)
    with pytest.raises(ShapeError):
        norm(Tensor(np.ones((2, 5))))


@pytest.mark.parametrize("kernel", [1, 3, 7])
def test_depthwise_conv_matches_loop_oracle(kernel):
    conv = DepthwiseConv1d(5, kernel, np.random.default_rng(2), dtype=np.float64)
    x = RNG.normal(size=(11, 5))
    expected = oracles.depthwise_conv_loops(x, conv.weight.data, conv.bias.data)
    assert np.allclose(conv(Tensor(x)).data, expected, atol=1e-12)


def test_depthwise_rejects_even_kernel_and_bad_shapes():
    with pytest.raises(ConfigError):
        DepthwiseConv1d(4, 2, np.random.default_rng(0))
    conv = DepthwiseConv1d(4, 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        conv(Tensor(np.ones((5, 3), dtype=np.float32)))


@pytest.mark.parametrize("cin,cout,groups,kernel", [
    (8, 8, 4, 3),
    (8, 4, 4, 5),
    (6, 6, 2, 1),
    (6, 6, 6, 3),   # depthwise as a special case of grouping
    (4, 8, 2, 3),   # more outputs than inputs
])
def test_grouped_conv_matches_loop_oracle(cin, cout, groups, kernel):
    conv = GroupedConv1d(cin, cout, kernel, groups, np.random.default_rng(5),
                         dtype=np.float64)
    x = RNG.normal(size=(9, cin))
    expected = oracles.grouped_conv_loops(x, conv.weight.data, conv.bias.data, groups)
    assert np.allclose(conv(Tensor(x)).data, expected, atol=1e-12)


def test_grouped_conv_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        GroupedConv1d(6, 6, 4, 2, rng)  # even kernel
    with pytest.raises(ConfigError):
        GroupedConv1d(6, 6, 3, 4, rng)  # groups must divide channels
    with pytest.raises(ConfigError):
        GroupedConv1d(6, 4, 3, 3, rng)  # and the output channels


def test_conv2d_matches_loop_oracle():
    conv = Conv2dDown(2, 3, np.random.default_rng(8), dtype=np.float64)
    x = RNG.normal(size=(9, 11, 2))
    expected = oracles.conv2d_stride2_loops(x, conv.weight.data, conv.bias.data)
    got = conv(Tensor(x)).data
    assert got.shape == (4, 5, 3)
    assert np.allclose(got, expected, atol=1e-12)
    with pytest.raises(ShapeError):
        conv(Tensor(np.ones((2, 5, 2))))  # fewer rows than the kernel


@pytest.mark.parametrize("length,expected", [(7, 1), (8, 1), (11, 2), (16, 3),
                                             (50, 11), (100, 24)])
def test_subsampler_length_formula(length, expected):
    sub = Subsampler(80, 8, np.random.default_rng(1))
    assert sub.out_len(length) == expected
    out = sub(Tensor(RNG.normal(size=(length, 80)).astype(np.float32)))
    assert out.shape == (expected, 8)
    assert out.dtype == np.float32


def test_subsampler_rejects_short_input():
    sub = Subsampler(80, 8, np.random.default_rng(1))
    with pytest.raises(ShapeError):
        sub(Tensor(np.ones((6, 80), dtype=np.float32)))
    with pytest.raises(ShapeError):
        sub(Tensor(np.ones((20, 40), dtype=np.float32)))


def test_sinusoid_table_values():
    table = sinusoid_table(50, 8, dtype=np.float64)
    assert np.allclose(table[0, 0::2], 0.0)
    assert np.allclose(table[0, 1::2], 1.0)
    # column pair i oscillates at frequency 10000^(-2i/d)
    for t in (1, 7, 31):
        for i in range(4):
            freq = 10000.0 ** (-2 * i / 8)
            assert table[t, 2 * i] == pytest.approx(math.sin(t * freq), abs=1e-12)
            assert table[t, 2 * i + 1] == pytest.approx(math.cos(t * freq), abs=1e-12)
    with pytest.raises(ConfigError):
        sinusoid_table(10, 7)


def test_feed_forward_shapes_and_activation_choice():
    rng = np.random.default_rng(0)
    ffn = FeedForward(6, 24, rng, activation="gelu", dtype=np.float64)
    out = ffn(Tensor(RNG.normal(size=(5, 6))))
    assert out.shape == (5, 6)
    with pytest.raises(ConfigError):
        FeedForward(6, 24, rng, activation="relu")


def test_module_named_parameters_traversal():
    class Outer(Module):
        def __init__(self):
            rng = np.random.default_rng(0)
            self.lin = Linear(2, 3, rng)
            self.stack = [LayerNorm(3), LayerNorm(3)]
            self.loose = Tensor(np.zeros(4), requires_grad=True)
            self.plain = Tensor(np.zeros(9))  # untracked: no grad

    outer = Outer()
    names = [n for n, _ in outer.named_parameters()]
    assert names == ["lin.weight", "lin.bias", "stack.0.gamma", "stack.0.beta",
                     "stack.1.gamma", "stack.1.beta", "loose"]
    assert outer.param_count() == 2 * 3 + 3 + 4 * 3 + 4


def test_float32_flows_through_every_layer():
    rng = np.random.default_rng(0)
    x = Tensor(RNG.normal(size=(9, 6)).astype(np.float32), requires_grad=True)
    stages = [
        Linear(6, 6, rng),
        LayerNorm(6),
        DepthwiseConv1d(6, 3, rng),
        GroupedConv1d(6, 6, 3, 2, rng),
    ]
    with Tape():
        y = x
        for stage in stages:
            y = stage(y)
        y = gelu(swish(y))
        backward(tsum(y))
    assert y.dtype == np.float32
    assert x.grad.dtype == np.float32
    for stage in stages:
        for p in stage.parameters():
            assert p.grad.dtype == np.float32
