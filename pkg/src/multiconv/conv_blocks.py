"""Gated convolution blocks: the multi-kernel unit, its fusions, and baselines.

The central module splits its input channels in half, normalizes the right
half, passes it through one or more temporal convolutions, fuses the branch
outputs, and uses the result to gate the untouched left half elementwise:

    a            [T, 2*h]   (post-expansion activations)
    z_l, z_r   = a[:, :h], layer_norm(a[:, h:])
    v_i        = conv_k_i(z_r)          for each kernel width k_i
    v          = fuse(v_1, ..., v_P)
    out        = z_l * v                [T, h]

Four fusion rules are provided:

* ``sum``       adds the branch outputs.
* ``weighted``  adds them with per-frame softmax weights from a linear gate
                over z_r. The gate starts at zero, so fusion begins as the
                uniform average and the learned weights are readable as
                kernel importances.
* ``concat``    gives each branch h/P output channels (grouped convolution
                over P-channel input blocks) and concatenates them.
* ``depth``     is ``concat`` followed by one extra depthwise convolution
                whose width is the largest branch kernel.

With a single kernel and ``sum`` fusion the unit reduces to the plain
convolutional spatial gating unit, implemented independently in
:class:`Csgu` as a cross-check target.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .autodiff import Tensor, add, concat_channels, mul, scale_rows, slice_channels, split_channels
from .errors import ConfigError, ShapeError
from .layers import (
    DepthwiseConv1d,
    GroupedConv1d,
    LayerNorm,
    Linear,
    Module,
    dropout,
    gelu,
    glu,
    softmax,
    swish,
)


class FusionKind(str, Enum):
    SUM = "sum"
    WEIGHTED = "weighted"
    CONCAT = "concat"
    DEPTH = "depth"


def parse_fusion(name: str) -> FusionKind:
    try:
        return FusionKind(name)
    except ValueError:
        options = ", ".join(k.value for k in FusionKind)
        raise ConfigError(f"unknown fusion {name!r}; expected one of {options}") from None


def _check_kernels(kernels: Sequence[int]) -> tuple[int, ...]:
    kernels = tuple(int(k) for k in kernels)
    if not kernels:
        raise ConfigError("at least one kernel width is required")
    for k in kernels:
        if k < 1 or k % 2 == 0:
            raise ConfigError(f"kernel widths must be odd and positive, got {k}")
    if any(b <= a for a, b in zip(kernels, kernels[1:])):
        raise ConfigError(f"kernel widths must be strictly increasing, got {kernels}")
    return kernels


def fusion_param_count(fusion: FusionKind, d_inter: int, kernels: Sequence[int]) -> int:
    """Closed-form parameter count of the gating unit's convolution/fusion part.

    Counts conv weights and biases plus, for ``weighted``, the gate
    projection; shared pieces (split, norm, elementwise gate) are excluded.
    """
    kernels = _check_kernels(kernels)
    half = d_inter // 2
    p = len(kernels)
    per_branch_depthwise = sum(half * k + half for k in kernels)
    if fusion is FusionKind.SUM:
        return per_branch_depthwise
    if fusion is FusionKind.WEIGHTED:
        return per_branch_depthwise + (half * p + p)
    grouped = sum(half * k for k in kernels) + half
    if fusion is FusionKind.CONCAT:
        return grouped
    if fusion is FusionKind.DEPTH:
        return grouped + (half * max(kernels) + half)
    raise ConfigError(f"unhandled fusion {fusion}")


@dataclass
class GateMap:
    """Per-frame kernel mixture weights of one layer, shape [T, P].

    Rows are softmax outputs, so each sums to one.
    """

    layer: int
    alpha: np.ndarray


class Mcsgu(Module):
    """Multi-kernel convolutional spatial gating unit, [T, d_inter] -> [T, d_inter/2]."""

    def __init__(self, d_inter: int, kernels: Sequence[int], fusion: FusionKind,
                 rng: np.random.Generator, dtype=np.float32):
        if d_inter % 2:
            raise ConfigError(f"gating unit width must be even, got {d_inter}")
        kernels = _check_kernels(kernels)
        half = d_inter // 2
        p = len(kernels)
        self.d_inter = d_inter
        self.half = half
        self.kernels = kernels
        self.fusion = fusion
        self.norm = LayerNorm(half, dtype=dtype)
        self.gate: Linear | None = None
        self.final_conv: DepthwiseConv1d | None = None
        if fusion in (FusionKind.SUM, FusionKind.WEIGHTED):
            self.branches = [DepthwiseConv1d(half, k, rng, dtype=dtype) for k in kernels]
            if fusion is FusionKind.WEIGHTED:
                # Zero start: the gate softmax opens at the uniform mixture and
                # its learned rows double as kernel-importance readouts.
                gate = Linear(half, p, rng, dtype=dtype)
                gate.weight.data[:] = 0.0
                gate.bias.data[:] = 0.0
                self.gate = gate
        elif fusion in (FusionKind.CONCAT, FusionKind.DEPTH):
            if half % p:
                raise ConfigError(
                    f"concat-style fusion needs P={p} to divide the gate width {half}")
            self.branches = [
                GroupedConv1d(half, half // p, k, groups=half // p, rng=rng, dtype=dtype)
                for k in kernels
            ]
            if fusion is FusionKind.DEPTH:
                self.final_conv = DepthwiseConv1d(half, max(kernels), rng, dtype=dtype)
        else:
            raise ConfigError(f"unhandled fusion {fusion}")

    def __call__(self, a: Tensor, gate_capture: list | None = None,
                 layer_index: int = 0) -> Tensor:
        if a.ndim != 2 or a.shape[1] != self.d_inter:
            raise ShapeError(f"gating unit expects [T, {self.d_inter}], got {a.shape}")
        z_l, z_r = split_channels(a, self.half)
        z_r = self.norm(z_r)
        branch_outs = [conv(z_r) for conv in self.branches]
        if self.fusion is FusionKind.SUM:
            fused = branch_outs[0]
            for v in branch_outs[1:]:
                fused = add(fused, v)
        elif self.fusion is FusionKind.WEIGHTED:
            alpha = softmax(self.gate(z_r))
            if gate_capture is not None:
                gate_capture.append(GateMap(layer=layer_index, alpha=alpha.data.copy()))
            fused = None
            for i, v in enumerate(branch_outs):
                term = scale_rows(v, slice_channels(alpha, i, i + 1))
                fused = term if fused is None else add(fused, term)
        else:
            fused = concat_channels(branch_outs)
            if self.final_conv is not None:
                fused = self.final_conv(fused)
        return mul(z_l, fused)


class Csgu(Module):
    """Single-kernel convolutional spatial gating unit (reduction baseline).

    Written independently of :class:`Mcsgu` on purpose: tests copy parameters
    across and compare outputs to confirm the multi-kernel unit collapses to
    this one when P = 1.
    """

    def __init__(self, d_inter: int, kernel: int, rng: np.random.Generator,
                 dtype=np.float32):
        if d_inter % 2:
            raise ConfigError(f"gating unit width must be even, got {d_inter}")
        self.d_inter = d_inter
        self.half = d_inter // 2
        self.norm = LayerNorm(self.half, dtype=dtype)
        self.conv = DepthwiseConv1d(self.half, kernel, rng, dtype=dtype)

    def __call__(self, a: Tensor) -> Tensor:
        if a.ndim != 2 or a.shape[1] != self.d_inter:
            raise ShapeError(f"gating unit expects [T, {self.d_inter}], got {a.shape}")
        z_l, z_r = split_channels(a, self.half)
        return mul(z_l, self.conv(self.norm(z_r)))


class MultiConvBlock(Module):
    """Convolution half-block for an encoder layer: expand, gate, project back.

    Input is the pre-normalized hidden state [T, dim]; output is the residual
    branch value of the same shape.
    """

    def __init__(self, dim: int, d_inter: int, kernels: Sequence[int],
                 fusion: FusionKind, rng: np.random.Generator,
                 dropout_p: float = 0.0, dtype=np.float32):
        self.up = Linear(dim, d_inter, rng, dtype=dtype)
        self.unit = Mcsgu(d_inter, kernels, fusion, rng, dtype=dtype)
        self.down = Linear(d_inter // 2, dim, rng, dtype=dtype)
        self.dropout_p = dropout_p

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None,
                 gate_capture: list | None = None, layer_index: int = 0) -> Tensor:
        a = gelu(self.up(x))
        h = self.unit(a, gate_capture=gate_capture, layer_index=layer_index)
        h = dropout(h, self.dropout_p, rng)
        return self.down(h)


class CsguBlock(Module):
    """Single-kernel gated-convolution half-block (baseline counterpart of
    :class:`MultiConvBlock`)."""

    def __init__(self, dim: int, d_inter: int, kernel: int,
                 rng: np.random.Generator, dropout_p: float = 0.0,
                 dtype=np.float32):
        self.up = Linear(dim, d_inter, rng, dtype=dtype)
        self.unit = Csgu(d_inter, kernel, rng, dtype=dtype)
        self.down = Linear(d_inter // 2, dim, rng, dtype=dtype)
        self.dropout_p = dropout_p

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None,
                 gate_capture: list | None = None, layer_index: int = 0) -> Tensor:
        h = self.unit(gelu(self.up(x)))
        h = dropout(h, self.dropout_p, rng)
        return self.down(h)


class ConformerConvBlock(Module):
    """Classic convolution half-block: pointwise expand + GLU, depthwise conv,
    norm, swish, pointwise project.

    Normalization after the depthwise convolution is a layer norm rather
    than a batch norm: sequences are processed one at a time here, so there
    are no batch statistics to track.
    """

    def __init__(self, dim: int, kernel: int, rng: np.random.Generator,
                 dropout_p: float = 0.0, dtype=np.float32):
        self.pw_in = Linear(dim, 2 * dim, rng, dtype=dtype)
        self.conv = DepthwiseConv1d(dim, kernel, rng, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)
        self.pw_out = Linear(dim, dim, rng, dtype=dtype)
        self.dropout_p = dropout_p

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None,
                 gate_capture: list | None = None, layer_index: int = 0) -> Tensor:
        h = glu(self.pw_in(x))
        h = swish(self.norm(self.conv(h)))
        h = dropout(h, self.dropout_p, rng)
        return self.pw_out(h)
