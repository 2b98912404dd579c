"""Neural-network building blocks: activations, norms, projections, convs.

Everything here is a pure function over :class:`~multiconv.autodiff.Tensor`
or a small :class:`Module` owning parameter tensors. Modules draw their
initial weights from a caller-supplied ``numpy.random.Generator`` in a fixed
order, so a seed pins the whole model.

Scalar constants are python floats throughout; numpy float64 scalars would
silently promote float32 activations under NumPy 2 promotion rules.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy import special

from .autodiff import Tensor, add_bias, matmul, mul, record, reshape
from .errors import ConfigError, ShapeError

INV_SQRT2 = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# activations


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form: x * Phi(x)."""
    phi_cum = 0.5 * (1.0 + special.erf(x.data * INV_SQRT2))
    out = Tensor(x.data * phi_cum)

    def bwd(g):
        density = np.exp(-0.5 * np.square(x.data)) * INV_SQRT_2PI
        return (g * (phi_cum + x.data * density),)

    return record(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    s = special.expit(x.data)
    out = Tensor(s)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return record(out, (x,), bwd)


def swish(x: Tensor) -> Tensor:
    """Sigmoid-weighted linear unit x * sigmoid(x)."""
    s = special.expit(x.data)
    out = Tensor(x.data * s)

    def bwd(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return record(out, (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return record(out, (x,), bwd)


def glu(x: Tensor) -> Tensor:
    """Gated linear unit: split channels in half, gate the first half by
    the sigmoid of the second."""
    c = x.shape[-1]
    if c % 2:
        raise ShapeError(f"glu needs an even channel count, got {c}")
    from .autodiff import split_channels

    a, b = split_channels(x, c // 2)
    return mul(a, sigmoid(b))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. Identity when ``rng`` is None (eval) or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None or p == 0.0:
        return x
    keep = 1.0 - p
    mask = (rng.random(x.shape) < keep).astype(x.data.dtype) / keep
    out = Tensor(x.data * mask)

    def bwd(g):
        return (g * mask,)

    return record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# parameter containers


def _uniform(rng: np.random.Generator, shape, bound: float, dtype) -> Tensor:
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Module:
    """Minimal parameter container with deterministic traversal order."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        found: list[tuple[str, Tensor]] = []
        for key, value in self.__dict__.items():
            path = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                found.append((path, value))
            elif isinstance(value, Module):
                found.extend(value.named_parameters(f"{path}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.extend(item.named_parameters(f"{path}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        found.append((f"{path}.{i}", item))
        return found

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()


class Linear(Module):
    """Affine map over the last axis: y = x @ W + b, W stored [d_in, d_out]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = _uniform(rng, (d_in, d_out), bound, dtype)
        self.bias = _uniform(rng, (d_out,), bound, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = add_bias(y, self.bias)
        return y


class LayerNorm(Module):
    """Normalize the last axis to zero mean / unit variance, then affine."""

    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-12):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = float(eps)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.gamma.shape[0]:
            raise ShapeError(
                f"layer norm over {self.gamma.shape[0]} channels got {x.shape}")
        mu = x.data.mean(axis=-1, keepdims=True)
        centered = x.data - mu
        var = np.square(centered).mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = centered * inv_std
        gamma, beta, eps = self.gamma, self.beta, self.eps
        out = Tensor(xhat * gamma.data + beta.data)
        n_inv = 1.0 / x.shape[-1]

        def bwd(g):
            lead = tuple(range(g.ndim - 1))
            d_gamma = (g * xhat).sum(axis=lead) if lead else g * xhat
            d_beta = g.sum(axis=lead) if lead else g.copy()
            gh = g * gamma.data
            m1 = gh.sum(axis=-1, keepdims=True) * n_inv
            m2 = (gh * xhat).sum(axis=-1, keepdims=True) * n_inv
            dx = (gh - m1 - xhat * m2) * inv_std
            return dx, d_gamma, d_beta

        return record(out, (x, gamma, beta), bwd)


class DepthwiseConv1d(Module):
    """Per-channel 1-d convolution over time with same-length zero padding.

    Input and output are [T, C]; channel c is filtered only by kernel row c.
    The kernel width must be odd so padding is symmetric.
    """

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigError(f"depthwise kernel must be odd and positive, got {kernel}")
        self.kernel = kernel
        self.channels = channels
        bound = 1.0 / math.sqrt(kernel)
        self.weight = _uniform(rng, (channels, kernel), bound, dtype)
        self.bias = _uniform(rng, (channels,), bound, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.channels:
            raise ShapeError(f"depthwise conv over {self.channels} channels got {x.shape}")
        t, c = x.shape
        k, half = self.kernel, self.kernel // 2
        w = self.weight
        xpad = np.zeros((t + k - 1, c), dtype=x.data.dtype)
        xpad[half:half + t] = x.data
        acc = np.zeros((t, c), dtype=x.data.dtype)
        for j in range(k):
            acc += xpad[j:j + t] * w.data[:, j]
        out = Tensor(acc)

        def bwd(g):
            dw = np.empty_like(w.data)
            for j in range(k):
                dw[:, j] = (xpad[j:j + t] * g).sum(axis=0)
            gpad = np.zeros_like(xpad)
            for j in range(k):
                gpad[j:j + t] += g * w.data[:, j]
            return gpad[half:half + t], dw

        y = record(out, (x, w), bwd)
        if self.bias is not None:
            y = add_bias(y, self.bias)
        return y


class GroupedConv1d(Module):
    """Grouped 1-d convolution over time, same-length zero padding.

    Channels are split into ``groups`` contiguous blocks; output block g is
    computed from input block g only. Weight layout is
    [groups, out_per_group, in_per_group, kernel].
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 groups: int, rng: np.random.Generator, bias: bool = True,
                 dtype=np.float32):
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigError(f"grouped conv kernel must be odd and positive, got {kernel}")
        if groups < 1 or in_channels % groups or out_channels % groups:
            raise ConfigError(
                f"groups={groups} must divide in={in_channels} and out={out_channels}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.groups = groups
        ipg = in_channels // groups
        opg = out_channels // groups
        bound = 1.0 / math.sqrt(ipg * kernel)
        self.weight = _uniform(rng, (groups, opg, ipg, kernel), bound, dtype)
        self.bias = _uniform(rng, (out_channels,), bound, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_channels:
            raise ShapeError(f"grouped conv over {self.in_channels} channels got {x.shape}")
        t = x.shape[0]
        k, half, groups = self.kernel, self.kernel // 2, self.groups
        ipg = self.in_channels // groups
        opg = self.out_channels // groups
        w = self.weight
        xpad = np.zeros((t + k - 1, self.in_channels), dtype=x.data.dtype)
        xpad[half:half + t] = x.data
        # windows[t, g, i, j] = padded input at time t+j, group g, lane i
        win = np.lib.stride_tricks.sliding_window_view(xpad, k, axis=0)
        win = win.reshape(t + k - 1 - (k - 1), groups, ipg, k)
        acc = np.einsum("tgij,goij->tgo", win, w.data, optimize=True)
        out = Tensor(np.ascontiguousarray(acc.reshape(t, self.out_channels)))

        def bwd(g_out):
            g3 = g_out.reshape(t, groups, opg)
            dw = np.einsum("tgij,tgo->goij", win, g3, optimize=True)
            gpad = np.zeros_like(xpad)
            gp3 = gpad.reshape(t + k - 1, groups, ipg)
            for j in range(k):
                gp3[j:j + t] += np.einsum("tgo,goi->tgi", g3, w.data[..., j], optimize=True)
            return gpad[half:half + t], dw

        y = record(out, (x, w), bwd)
        if self.bias is not None:
            y = add_bias(y, self.bias)
        return y


class Conv2dDown(Module):
    """3x3 convolution with stride 2 and no padding over a [T, F, C] map.

    Runs as patch-gather + matmul so the hot path stays inside BLAS.
    """

    KERNEL = 3
    STRIDE = 2

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator, dtype=np.float32):
        k = self.KERNEL
        bound = 1.0 / math.sqrt(in_channels * k * k)
        self.weight = _uniform(rng, (in_channels * k * k, out_channels), bound, dtype)
        self.bias = _uniform(rng, (out_channels,), bound, dtype)
        self.in_channels = in_channels
        self.out_channels = out_channels

    @staticmethod
    def out_len(n: int) -> int:
        return (n - 1) // 2

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeError(f"conv2d over {self.in_channels} channels got {x.shape}")
        t_in, f_in = x.shape[0], x.shape[1]
        k, s = self.KERNEL, self.STRIDE
        if t_in < k or f_in < k:
            raise ShapeError(f"conv2d input {x.shape} smaller than its {k}x{k} kernel")
        t_out, f_out = self.out_len(t_in), self.out_len(f_in)
        w, b = self.weight, self.bias
        win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(0, 1))
        win = win[::s, ::s]  # [t_out, f_out, C, k, k]
        patches = np.ascontiguousarray(win).reshape(t_out * f_out, -1)
        y = patches @ w.data + b.data
        out = Tensor(y.reshape(t_out, f_out, self.out_channels))

        def bwd(g):
            g2 = g.reshape(t_out * f_out, self.out_channels)
            dw = patches.T @ g2
            db = g2.sum(axis=0)
            gp = (g2 @ w.data.T).reshape(t_out, f_out, self.in_channels, k, k)
            dx = np.zeros_like(x.data)
            for di in range(k):
                for dj in range(k):
                    dx[di:di + s * t_out:s, dj:dj + s * f_out:s] += gp[:, :, :, di, dj]
            return dx, dw, db

        return record(out, (x, w, b), bwd)


class FeedForward(Module):
    """Two-layer position-wise network: expand, squash, project back."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator,
                 activation: str = "swish", dropout_p: float = 0.0,
                 dtype=np.float32):
        if activation not in ("swish", "gelu"):
            raise ConfigError(f"unknown feed-forward activation {activation!r}")
        self.up = Linear(dim, hidden, rng, dtype=dtype)
        self.down = Linear(hidden, dim, rng, dtype=dtype)
        self.activation = activation
        self.dropout_p = dropout_p

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        h = self.up(x)
        h = swish(h) if self.activation == "swish" else gelu(h)
        h = dropout(h, self.dropout_p, rng)
        return self.down(h)


def sinusoid_table(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Classic interleaved sine/cosine position table, shape [length, dim]."""
    if dim % 2:
        raise ConfigError(f"positional table needs an even dim, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-math.log(10000.0) / dim))
    table = np.empty((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table.astype(dtype)


class Subsampler(Module):
    """Front end: two stride-2 3x3 conv stages, then flatten to model width.

    Maps raw features [L, n_mels] to [T, dim] with T = ((L-1)//2 - 1)//2.
    The shortest admissible input is 7 frames.
    """

    def __init__(self, n_mels: int, dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.n_mels = n_mels
        self.dim = dim
        self.conv1 = Conv2dDown(1, dim, rng, dtype=dtype)
        self.conv2 = Conv2dDown(dim, dim, rng, dtype=dtype)
        f_out = Conv2dDown.out_len(Conv2dDown.out_len(n_mels))
        self.f_out = f_out
        self.proj = Linear(f_out * dim, dim, rng, dtype=dtype)

    def out_len(self, length: int) -> int:
        return Conv2dDown.out_len(Conv2dDown.out_len(length))

    def __call__(self, feats: Tensor) -> Tensor:
        if feats.ndim != 2 or feats.shape[1] != self.n_mels:
            raise ShapeError(f"subsampler expects [L, {self.n_mels}], got {feats.shape}")
        length = feats.shape[0]
        if self.out_len(length) < 1:
            raise ShapeError(f"input of {length} frames is too short to subsample")
        x = reshape(feats, (length, self.n_mels, 1))
        x = gelu(self.conv1(x))
        x = gelu(self.conv2(x))
        t_out = x.shape[0]
        x = reshape(x, (t_out, self.f_out * self.dim))
        return self.proj(x)
