"""Speech encoder: subsampling front end plus a stack of macaron layers.

Each layer applies, with pre-norm residuals:

    x = x + 1/2 ffn(x)          (feed-forward, swish)
    x = x + self_attention(x)
    x = x + conv_block(x)       (gated multi-kernel conv, or a baseline)
    x = x + 1/2 ffn(x)
    x = final_norm(x)           (after the last layer only)

The convolution half-block is pluggable so the same stack hosts the
multi-kernel unit and both single-kernel baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionMap, MultiHeadAttention
from .autodiff import Tensor, add, scale
from .config import EncoderConfig
from .conv_blocks import (
    ConformerConvBlock,
    CsguBlock,
    GateMap,
    MultiConvBlock,
    parse_fusion,
)
from .errors import ConfigError
from .layers import FeedForward, LayerNorm, Linear, Module, Subsampler, dropout, sinusoid_table


@dataclass
class EncoderCaptures:
    """Side channel for per-layer diagnostics collected during a forward pass."""

    attention: list[AttentionMap] = field(default_factory=list)
    gates: list[GateMap] = field(default_factory=list)


def _make_conv_block(cfg: EncoderConfig, rng: np.random.Generator, dtype):
    widest = max(cfg.kernels)
    if cfg.conv_block == "multiconv":
        return MultiConvBlock(cfg.dim, cfg.inter_width, cfg.kernels,
                              parse_fusion(cfg.fusion), rng,
                              dropout_p=cfg.dropout, dtype=dtype)
    if cfg.conv_block == "csgu":
        return CsguBlock(cfg.dim, cfg.inter_width, widest, rng,
                         dropout_p=cfg.dropout, dtype=dtype)
    if cfg.conv_block == "conformer":
        return ConformerConvBlock(cfg.dim, widest, rng,
                                  dropout_p=cfg.dropout, dtype=dtype)
    raise ConfigError(f"unknown conv_block {cfg.conv_block!r}")


class EncoderLayer(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype):
        dim = cfg.dim
        self.norm_ffn1 = LayerNorm(dim, dtype=dtype)
        self.ffn1 = FeedForward(dim, cfg.ffn_width, rng, activation="swish",
                                dropout_p=cfg.dropout, dtype=dtype)
        self.norm_att = LayerNorm(dim, dtype=dtype)
        self.attention = MultiHeadAttention(dim, cfg.heads, rng,
                                            dropout_p=cfg.dropout, dtype=dtype)
        self.norm_conv = LayerNorm(dim, dtype=dtype)
        self.conv = _make_conv_block(cfg, rng, dtype)
        self.norm_ffn2 = LayerNorm(dim, dtype=dtype)
        self.ffn2 = FeedForward(dim, cfg.ffn_width, rng, activation="swish",
                                dropout_p=cfg.dropout, dtype=dtype)
        self.dropout_p = cfg.dropout

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None,
                 captures: EncoderCaptures | None = None,
                 layer_index: int = 0) -> Tensor:
        p = self.dropout_p
        h = self.ffn1(self.norm_ffn1(x), rng)
        x = add(x, scale(dropout(h, p, rng), 0.5))
        att_capture = captures.attention if captures is not None else None
        h = self.attention(self.norm_att(x), rng, capture=att_capture,
                           layer_index=layer_index)
        x = add(x, dropout(h, p, rng))
        gate_capture = captures.gates if captures is not None else None
        h = self.conv(self.norm_conv(x), rng, gate_capture=gate_capture,
                      layer_index=layer_index)
        x = add(x, dropout(h, p, rng))
        h = self.ffn2(self.norm_ffn2(x), rng)
        return add(x, scale(dropout(h, p, rng), 0.5))


class Encoder(Module):
    """Maps raw features [L, n_mels] to hidden states [T, dim]."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self.subsampler = Subsampler(cfg.n_mels, cfg.dim, rng, dtype=dtype)
        self.layers = [EncoderLayer(cfg, rng, dtype) for _ in range(cfg.layers)]
        self.final_norm = LayerNorm(cfg.dim, dtype=dtype)
        self._pos_table = sinusoid_table(64, cfg.dim, dtype=dtype)
        self._x_scale = math.sqrt(cfg.dim)

    def _positions(self, t: int) -> Tensor:
        if t > self._pos_table.shape[0]:
            grown = max(t, 2 * self._pos_table.shape[0])
            self._pos_table = sinusoid_table(grown, self.cfg.dim, dtype=self.dtype)
        return Tensor(self._pos_table[:t])

    def __call__(self, feats: Tensor, rng: np.random.Generator | None = None,
                 captures: EncoderCaptures | None = None) -> Tensor:
        x = self.subsampler(feats)
        x = add(scale(x, self._x_scale), self._positions(x.shape[0]))
        x = dropout(x, self.cfg.dropout, rng)
        for i, layer in enumerate(self.layers):
            x = layer(x, rng, captures=captures, layer_index=i)
        return self.final_norm(x)


class CtcModel(Module):
    """Encoder plus a linear head over the vocabulary and the blank symbol.

    Output class 0 is the blank; classes 1..vocab are the real tokens.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.encoder = Encoder(cfg, rng, dtype=dtype)
        self.head = Linear(cfg.dim, cfg.vocab + 1, rng, dtype=dtype)

    @property
    def cfg(self) -> EncoderConfig:
        return self.encoder.cfg

    def __call__(self, feats: Tensor, rng: np.random.Generator | None = None,
                 captures: EncoderCaptures | None = None) -> Tensor:
        return self.head(self.encoder(feats, rng, captures=captures))


def build_model(cfg: EncoderConfig, seed: int | None = None,
                dtype=np.float32) -> CtcModel:
    """Construct a model whose initial weights are fully pinned by the seed.

    The explicit ``seed`` argument overrides ``cfg.seed`` when given.
    """
    if seed is None:
        seed = cfg.seed
    return CtcModel(cfg, np.random.default_rng(seed), dtype=dtype)
