"""Model diagnostics: attention alignment, kernel importance, parameter counts.

All statistics are computed from capture-enabled forward passes or from the
parameter tensors themselves; nothing here mutates the model.
"""

from __future__ import annotations

import dataclasses
import io

import numpy as np

from .autodiff import Tensor
from .config import EncoderConfig
from .conv_blocks import FusionKind, fusion_param_count
from .data import Utterance
from .encoder import CtcModel, EncoderCaptures, build_model
from .errors import ContractError, IntegrityError, ShapeError


def attention_diagonality(weights: np.ndarray) -> float:
    """How concentrated an attention map is on the main diagonal, in [0, 1].

    For row-stochastic weights w over a length-T sequence:

        1 - sum_ij w[i, j] * |i - j| / (T * (T - 1))

    The identity map scores 1; the map that throws all mass to the opposite
    end of the sequence scores 0. A single-frame map is perfectly aligned by
    convention.
    """
    if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
        raise ShapeError(f"attention map must be square, got {weights.shape}")
    t = weights.shape[0]
    if t == 1:
        return 1.0
    idx = np.arange(t, dtype=np.float64)
    distance = np.abs(idx[:, None] - idx[None, :])
    penalty = float((weights.astype(np.float64) * distance).sum())
    return 1.0 - penalty / (t * (t - 1))


def diagonality_by_layer_head(model: CtcModel, utts: list[Utterance],
                              max_utts: int | None = None) -> np.ndarray:
    """Mean attention diagonality per (layer, head) over ``utts``."""
    if max_utts is not None:
        utts = utts[:max_utts]
    if not utts:
        raise ContractError("diagonality needs at least one utterance")
    cfg = model.cfg
    total = np.zeros((cfg.layers, cfg.heads))
    for utt in utts:
        captures = EncoderCaptures()
        model(Tensor(utt.feats), captures=captures)
        if len(captures.attention) != cfg.layers:
            raise IntegrityError(
                f"captured {len(captures.attention)} attention maps, expected {cfg.layers}")
        for amap in captures.attention:
            for h in range(cfg.heads):
                total[amap.layer, h] += attention_diagonality(amap.weights[h])
    return total / len(utts)


def diagonality_csv(matrix: np.ndarray) -> str:
    """Per-layer export, heads averaged: one ``layer,value`` row per layer."""
    out = io.StringIO()
    out.write("layer,value\n")
    per_layer = matrix.mean(axis=1)
    for layer in range(matrix.shape[0]):
        out.write(f"{layer},{per_layer[layer]:.10f}\n")
    return out.getvalue()


def kernel_importance(model: CtcModel, utts: list[Utterance],
                      max_utts: int | None = None) -> np.ndarray:
    """Mean per-layer kernel mixture weights, shape [layers, P].

    Averages the weighted-fusion gate softmax over every frame of ``utts``;
    each row sums to one. Only defined for models whose convolution block
    carries a kernel gate.
    """
    cfg = model.cfg
    if cfg.conv_block != "multiconv" or cfg.fusion != FusionKind.WEIGHTED.value:
        raise ContractError(
            "kernel importance needs the weighted fusion; "
            f"model uses {cfg.conv_block}/{cfg.fusion}")
    if max_utts is not None:
        utts = utts[:max_utts]
    if not utts:
        raise ContractError("kernel importance needs at least one utterance")
    n_kernels = len(cfg.kernels)
    total = np.zeros((cfg.layers, n_kernels))
    frames = np.zeros(cfg.layers)
    for utt in utts:
        captures = EncoderCaptures()
        model(Tensor(utt.feats), captures=captures)
        if len(captures.gates) != cfg.layers:
            raise IntegrityError(
                f"captured {len(captures.gates)} gate maps, expected {cfg.layers}")
        for gmap in captures.gates:
            total[gmap.layer] += gmap.alpha.astype(np.float64).sum(axis=0)
            frames[gmap.layer] += gmap.alpha.shape[0]
    return total / frames[:, None]


def importance_csv(importance: np.ndarray, kernels) -> str:
    out = io.StringIO()
    header = ",".join(f"k{k}" for k in kernels)
    out.write(f"layer,{header}\n")
    for layer in range(importance.shape[0]):
        row = ",".join(f"{v:.10f}" for v in importance[layer])
        out.write(f"{layer},{row}\n")
    return out.getvalue()


def _conv_fusion_params(layer_conv) -> int:
    """Parameters of the kernels-plus-fusion part of one multi-kernel block."""
    unit = layer_conv.unit
    counted = sum(t.size for conv in unit.branches for t in conv.parameters())
    if unit.gate is not None:
        counted += sum(t.size for t in unit.gate.parameters())
    if unit.final_conv is not None:
        counted += sum(t.size for t in unit.final_conv.parameters())
    return counted


def param_breakdown(cfg: EncoderConfig, seed: int = 0) -> dict:
    """Instantiate the model and count parameters per component.

    For multi-kernel blocks the measured convolution/fusion count is
    cross-checked against the closed-form formula; a mismatch raises
    :class:`IntegrityError` because it means the implementation and the
    accounting have diverged.
    """
    model = build_model(cfg, seed)
    enc = model.encoder
    layers = enc.layers
    breakdown = {
        "config": cfg.to_dict(),
        "total": model.param_count(),
        "encoder": enc.param_count(),
        "head": model.head.param_count(),
        "subsampler": enc.subsampler.param_count(),
        "per_layer": {
            "feed_forward": layers[0].ffn1.param_count() + layers[0].ffn2.param_count(),
            "attention": layers[0].attention.param_count(),
            "conv_block": layers[0].conv.param_count(),
            "norms": (layers[0].norm_ffn1.param_count() + layers[0].norm_att.param_count()
                      + layers[0].norm_conv.param_count() + layers[0].norm_ffn2.param_count()),
        },
    }
    if cfg.conv_block == "multiconv":
        measured = _conv_fusion_params(layers[0].conv)
        expected = fusion_param_count(FusionKind(cfg.fusion), cfg.inter_width, cfg.kernels)
        if measured != expected:
            raise IntegrityError(
                f"conv/fusion parameters: measured {measured}, formula gives {expected}")
        breakdown["per_layer"]["conv_fusion_part"] = measured
    return breakdown


def fusion_comparison(cfg: EncoderConfig, seed: int = 0) -> list[dict]:
    """Total parameter counts for the four fusion rules at this geometry."""
    rows = []
    for kind in FusionKind:
        variant = dataclasses.replace(cfg, conv_block="multiconv", fusion=kind.value)
        rows.append({"fusion": kind.value, "total": param_breakdown(variant, seed)["total"]})
    return rows
