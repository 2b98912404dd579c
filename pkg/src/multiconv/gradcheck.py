"""Finite-difference verification of every backward rule in the package.

Each case pins a scalar-valued function of one array argument, computes the
tape gradient, and compares it against central differences. The comparison
is elementwise: a case passes when

    |g_tape - g_fd|  <=  max(1e-8, tol * |g_fd|)

everywhere, reported as ``max_rel_err`` with the same floor so the pass
condition is exactly ``max_rel_err <= tol``. Primitive ops get tol 1e-5;
deep composites get 1e-4 to absorb accumulated finite-difference noise.

Everything runs in float64; float32 would drown the comparison in rounding.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attention import MultiHeadAttention
from .autodiff import (
    Tape,
    Tensor,
    add,
    add_bias,
    backward,
    concat_channels,
    matmul,
    mul,
    reshape,
    scale,
    scale_rows,
    slice_channels,
    split_channels,
    swapaxes,
    tsum,
)
from .config import EncoderConfig
from .conv_blocks import (
    ConformerConvBlock,
    Csgu,
    CsguBlock,
    FusionKind,
    Mcsgu,
    MultiConvBlock,
)
from .ctc import ctc_loss
from .encoder import CtcModel, Encoder, EncoderLayer
from .errors import IntegrityError
from .layers import (
    Conv2dDown,
    DepthwiseConv1d,
    FeedForward,
    GroupedConv1d,
    LayerNorm,
    Linear,
    Subsampler,
    gelu,
    glu,
    sigmoid,
    softmax,
    swish,
)

OP_TOL = 1e-5
COMPOSITE_TOL = 1e-4
FD_STEP = 1e-5
ABS_FLOOR = 1e-8


@dataclass
class CheckResult:
    name: str
    size: int
    max_rel_err: float
    tol: float
    passed: bool


@dataclass
class _Case:
    name: str
    fn: Callable[[Tensor], Tensor]
    x0: np.ndarray
    tol: float


def numeric_gradient(fn: Callable[[np.ndarray], float], x0: np.ndarray,
                     step: float = FD_STEP) -> np.ndarray:
    grad = np.zeros_like(x0, dtype=np.float64)
    flat = grad.reshape(-1)
    base = x0.astype(np.float64)
    for i in range(base.size):
        hi = base.copy().reshape(-1)
        lo = base.copy().reshape(-1)
        hi[i] += step
        lo[i] -= step
        flat[i] = (fn(hi.reshape(x0.shape)) - fn(lo.reshape(x0.shape))) / (2 * step)
    return grad


def tape_gradient(fn: Callable[[Tensor], Tensor], x0: np.ndarray) -> np.ndarray:
    xt = Tensor(x0.astype(np.float64), requires_grad=True)
    with Tape():
        backward(fn(xt))
    if xt.grad is None:
        raise IntegrityError("gradient check case never touched its input")
    return xt.grad


def run_case(case: _Case) -> CheckResult:
    g_tape = tape_gradient(case.fn, case.x0)
    g_fd = numeric_gradient(lambda arr: fn_scalar(case.fn, arr), case.x0)
    denom = np.maximum(np.abs(g_fd), ABS_FLOOR / case.tol)
    rel = float((np.abs(g_tape - g_fd) / denom).max())
    return CheckResult(case.name, case.x0.size, rel, case.tol, rel <= case.tol)


def fn_scalar(fn: Callable[[Tensor], Tensor], arr: np.ndarray) -> float:
    return fn(Tensor(arr)).item()


def _reducer(rng: np.random.Generator):
    """Fixed random projection of an arbitrary tensor down to a scalar."""
    cache: dict[tuple, Tensor] = {}

    def reduce(y: Tensor) -> Tensor:
        if y.shape == ():
            return y
        key = y.shape
        if key not in cache:
            cache[key] = Tensor(rng.normal(size=y.shape))
        return tsum(mul(y, cache[key]))

    return reduce


def _op_cases(seed: int) -> list[_Case]:
    # constants feeding each case are drawn once here; drawing inside a case
    # body would shift the function between finite-difference evaluations
    rng = np.random.default_rng(seed)
    red = _reducer(rng)
    tag = f"s{seed}"
    cases: list[_Case] = []

    def case(name, fn, x0, tol=OP_TOL):
        cases.append(_Case(f"{name}[{tag}]", fn, x0, tol))

    a34 = rng.normal(size=(3, 4))
    b45 = rng.normal(size=(4, 5))
    b242 = rng.normal(size=(2, 4, 2))
    case("matmul.lhs", lambda t: red(matmul(t, Tensor(b45))), a34)
    case("matmul.rhs", lambda t: red(matmul(Tensor(a34), t)), b45)
    bat = rng.normal(size=(2, 3, 4))
    case("matmul.batched", lambda t: red(matmul(t, Tensor(b242))), bat)
    case("matmul.broadcast", lambda t: red(matmul(Tensor(bat), t)), rng.normal(size=(4, 3)))

    x35 = rng.normal(size=(3, 5))
    bias5 = rng.normal(size=5)
    x234 = rng.normal(size=(2, 3, 4))
    x63 = rng.normal(size=(6, 3))
    r61 = rng.normal(size=(6, 1))
    case("add", lambda t: red(add(t, Tensor(x35))), rng.normal(size=(3, 5)))
    case("mul", lambda t: red(mul(t, Tensor(x35))), rng.normal(size=(3, 5)))
    case("scale", lambda t: red(scale(t, -1.7)), rng.normal(size=(4, 2)))
    case("add_bias.x", lambda t: red(add_bias(t, Tensor(bias5))), x35.copy())
    case("add_bias.b", lambda t: red(add_bias(Tensor(x35), t)), bias5.copy())
    case("add_bias.3d", lambda t: red(add_bias(Tensor(x234), t)), rng.normal(size=4))
    case("scale_rows.x", lambda t: red(scale_rows(t, Tensor(r61))), x63.copy())
    case("scale_rows.r", lambda t: red(scale_rows(Tensor(x63), t)), r61.copy())

    part32 = rng.normal(size=(3, 2))
    part22 = rng.normal(size=(2, 2))
    part23 = rng.normal(size=(2, 3))
    case("slice_channels", lambda t: red(slice_channels(t, 1, 4)), rng.normal(size=(4, 6)))
    case("split_channels",
         lambda t: add(red(split_channels(t, 2)[0]), red(split_channels(t, 2)[1])),
         rng.normal(size=(3, 6)))
    case("concat2", lambda t: red(concat_channels([t, Tensor(part32)])),
         rng.normal(size=(3, 4)))
    case("concat3",
         lambda t: red(concat_channels([Tensor(part22), t, Tensor(part23)])),
         rng.normal(size=(2, 1)))
    case("reshape", lambda t: red(reshape(t, (2, 6))), rng.normal(size=(3, 4)))
    case("swapaxes", lambda t: red(swapaxes(t, 0, 2)), rng.normal(size=(2, 3, 4)))
    case("tsum", lambda t: tsum(t), rng.normal(size=(3, 3)))

    case("gelu", lambda t: red(gelu(t)), rng.normal(size=(4, 5)))
    case("gelu.wide", lambda t: red(gelu(t)), 3.0 * rng.normal(size=(3, 3)))
    case("swish", lambda t: red(swish(t)), rng.normal(size=(4, 5)))
    case("sigmoid", lambda t: red(sigmoid(t)), rng.normal(size=(4, 4)))
    case("softmax", lambda t: red(softmax(t)), rng.normal(size=(5, 4)))
    case("softmax.3d", lambda t: red(softmax(t)), rng.normal(size=(2, 3, 4)))
    case("glu", lambda t: red(glu(t)), rng.normal(size=(5, 6)))

    norm = LayerNorm(6, dtype=np.float64)
    norm.gamma.data = rng.normal(size=6)
    norm.beta.data = rng.normal(size=6)
    x_ln = rng.normal(size=(4, 6))
    case("layer_norm.x", lambda t: red(norm(t)), x_ln.copy())

    def ln_gamma(t):
        norm.gamma = t
        return red(norm(Tensor(x_ln)))

    case("layer_norm.gamma", ln_gamma, rng.normal(size=6))

    def ln_beta(t):
        norm.beta = t
        return red(norm(Tensor(x_ln)))

    case("layer_norm.beta", ln_beta, rng.normal(size=6))

    lin = Linear(5, 3, rng, dtype=np.float64)
    x_lin = rng.normal(size=(4, 5))
    case("linear.x", lambda t: red(lin(t)), x_lin.copy())

    def lin_w(t):
        lin.weight = t
        return red(lin(Tensor(x_lin)))

    case("linear.w", lin_w, rng.normal(size=(5, 3)))

    def lin_b(t):
        lin.bias = t
        return red(lin(Tensor(x_lin)))

    case("linear.b", lin_b, rng.normal(size=3))

    for k in (1, 3, 7):
        dw = DepthwiseConv1d(4, k, rng, dtype=np.float64)
        x_dw = rng.normal(size=(9, 4))

        def dw_x(t, dw=dw):
            return red(dw(t))

        case(f"depthwise_k{k}.x", dw_x, x_dw.copy())

        def dw_w(t, dw=dw, x_dw=x_dw):
            dw.weight = t
            return red(dw(Tensor(x_dw)))

        case(f"depthwise_k{k}.w", dw_w, rng.normal(size=(4, k)))

    dwb = DepthwiseConv1d(3, 3, rng, dtype=np.float64)
    x_dwb = rng.normal(size=(5, 3))

    def dw_b(t):
        dwb.bias = t
        return red(dwb(Tensor(x_dwb)))

    case("depthwise.bias", dw_b, rng.normal(size=3))

    for label, (cin, cout, groups, k) in {
        "a": (8, 8, 4, 3),
        "b": (8, 4, 4, 5),
        "c": (6, 6, 2, 3),
    }.items():
        gc = GroupedConv1d(cin, cout, k, groups, rng, dtype=np.float64)
        x_gc = rng.normal(size=(7, cin))

        def gc_x(t, gc=gc):
            return red(gc(t))

        case(f"grouped_{label}.x", gc_x, x_gc.copy())

        def gc_w(t, gc=gc, x_gc=x_gc):
            gc.weight = t
            return red(gc(Tensor(x_gc)))

        case(f"grouped_{label}.w", gc_w, rng.normal(size=gc.weight.shape))

    c2 = Conv2dDown(2, 3, rng, dtype=np.float64)
    x_c2 = rng.normal(size=(7, 9, 2))
    case("conv2d.x", lambda t: red(c2(t)), x_c2.copy())

    def c2_w(t):
        c2.weight = t
        return red(c2(Tensor(x_c2)))

    case("conv2d.w", c2_w, rng.normal(size=(2 * 9, 3)))

    def c2_b(t):
        c2.bias = t
        return red(c2(Tensor(x_c2)))

    case("conv2d.b", c2_b, rng.normal(size=3))
    return cases


def _composite_cases(seed: int) -> list[_Case]:
    rng = np.random.default_rng(seed + 1000)
    red = _reducer(rng)
    cases: list[_Case] = []

    def case(name, fn, x0, tol=COMPOSITE_TOL):
        cases.append(_Case(name, fn, x0, tol))

    ffn = FeedForward(6, 10, rng, dtype=np.float64)
    case("feed_forward.x", lambda t: red(ffn(t)), rng.normal(size=(5, 6)))

    sub = Subsampler(9, 6, rng, dtype=np.float64)
    x_sub = rng.normal(size=(17, 9))
    case("subsampler.x", lambda t: red(sub(t)), x_sub.copy())

    def sub_w(t):
        sub.proj.weight = t
        return red(sub(Tensor(x_sub)))

    case("subsampler.proj_w", sub_w, rng.normal(size=sub.proj.weight.shape))

    for fusion in FusionKind:
        unit = Mcsgu(12, (3, 5), fusion, rng, dtype=np.float64)

        def unit_x(t, unit=unit):
            return red(unit(t))

        case(f"mcsgu_{fusion.value}.a", unit_x, rng.normal(size=(8, 12)))

    unit_sum = Mcsgu(12, (3, 5), FusionKind.SUM, rng, dtype=np.float64)
    x_unit = rng.normal(size=(7, 12))

    def sum_w(t):
        unit_sum.branches[1].weight = t
        return red(unit_sum(Tensor(x_unit)))

    case("mcsgu_sum.branch_w", sum_w, rng.normal(size=(6, 5)))

    unit_cat = Mcsgu(12, (3, 5), FusionKind.CONCAT, rng, dtype=np.float64)

    def cat_w(t):
        unit_cat.branches[0].weight = t
        return red(unit_cat(Tensor(x_unit)))

    case("mcsgu_concat.branch_w", cat_w, rng.normal(size=unit_cat.branches[0].weight.shape))

    unit_wt = Mcsgu(12, (3, 5), FusionKind.WEIGHTED, rng, dtype=np.float64)

    def wt_gate(t):
        unit_wt.gate.weight = t
        return red(unit_wt(Tensor(x_unit)))

    case("mcsgu_weighted.gate_w", wt_gate, rng.normal(size=(6, 2)))

    unit_dep = Mcsgu(12, (3, 5), FusionKind.DEPTH, rng, dtype=np.float64)

    def dep_final(t):
        unit_dep.final_conv.weight = t
        return red(unit_dep(Tensor(x_unit)))

    case("mcsgu_depth.final_w", dep_final, rng.normal(size=(6, 5)))

    for fusion in FusionKind:
        block = MultiConvBlock(6, 8, (3, 5), fusion, rng, dtype=np.float64)

        def block_x(t, block=block):
            return red(block(t))

        case(f"multiconv_block_{fusion.value}.x", block_x, rng.normal(size=(7, 6)))

    blk = MultiConvBlock(6, 8, (3,), FusionKind.SUM, rng, dtype=np.float64)
    x_blk = rng.normal(size=(6, 6))

    def blk_up(t):
        blk.up.weight = t
        return red(blk(Tensor(x_blk)))

    case("multiconv_block.up_w", blk_up, rng.normal(size=(6, 8)))

    csgu_unit = Csgu(10, 3, rng, dtype=np.float64)
    case("csgu.a", lambda t: red(csgu_unit(t)), rng.normal(size=(6, 10)))
    csgu_blk = CsguBlock(6, 8, 3, rng, dtype=np.float64)
    case("csgu_block.x", lambda t: red(csgu_blk(t)), rng.normal(size=(6, 6)))
    conf = ConformerConvBlock(6, 5, rng, dtype=np.float64)
    x_conf = rng.normal(size=(7, 6))
    case("conformer_block.x", lambda t: red(conf(t)), x_conf.copy())

    def conf_w(t):
        conf.conv.weight = t
        return red(conf(Tensor(x_conf)))

    case("conformer_block.conv_w", conf_w, rng.normal(size=(6, 5)))

    for heads in (1, 2):
        att = MultiHeadAttention(6, heads, rng, dtype=np.float64)

        def att_x(t, att=att):
            return red(att(t))

        case(f"attention_h{heads}.x", att_x, rng.normal(size=(5, 6)))

    att_q = MultiHeadAttention(6, 2, rng, dtype=np.float64)
    x_att = rng.normal(size=(4, 6))

    def att_qw(t):
        att_q.q_proj.weight = t
        return red(att_q(Tensor(x_att)))

    case("attention.q_w", att_qw, rng.normal(size=(6, 6)))

    layer_cfgs = [
        ("layer_multiconv_sum", EncoderConfig(dim=6, layers=1, heads=2, d_inter=8,
                                              d_ffn=10, conv_block="multiconv",
                                              fusion="sum", kernels=(3, 5),
                                              n_mels=9, vocab=3)),
        ("layer_multiconv_depth", EncoderConfig(dim=6, layers=1, heads=2, d_inter=8,
                                                d_ffn=10, conv_block="multiconv",
                                                fusion="depth", kernels=(3, 5),
                                                n_mels=9, vocab=3)),
        ("layer_conformer", EncoderConfig(dim=6, layers=1, heads=2, d_inter=8,
                                          d_ffn=10, conv_block="conformer",
                                          fusion="sum", kernels=(3,),
                                          n_mels=9, vocab=3)),
    ]
    for name, cfg in layer_cfgs:
        layer = EncoderLayer(cfg, rng, dtype=np.float64)

        def layer_x(t, layer=layer):
            return red(layer(t))

        case(f"{name}.x", layer_x, rng.normal(size=(6, 6)))

    enc_cfgs = [
        ("encoder_weighted", "multiconv", "weighted"),
        ("encoder_csgu", "csgu", "sum"),
    ]
    for name, block_kind, fusion in enc_cfgs:
        cfg = EncoderConfig(dim=6, layers=1, heads=2, d_inter=8, d_ffn=10,
                            conv_block=block_kind, fusion=fusion, kernels=(3, 5),
                            n_mels=9, vocab=3)
        enc = Encoder(cfg, rng, dtype=np.float64)

        def enc_x(t, enc=enc):
            return red(enc(t))

        case(f"{name}.feats", enc_x, rng.normal(size=(16, 9)))

    ctc_specs = [
        ("ctc.basic", 6, 4, [1, 2, 3]),
        ("ctc.repeat", 7, 3, [2, 2, 1]),
        ("ctc.tight", 4, 3, [1, 1]),
        ("ctc.empty", 3, 2, []),
    ]
    for name, t_len, vocab, labels in ctc_specs:
        logits0 = rng.normal(size=(t_len, vocab + 1))

        def ctc_fn(t, labels=labels):
            loss, ok = ctc_loss(t, labels)
            if not ok:
                raise IntegrityError("gradient check hit an infeasible lattice")
            return loss

        case(name, ctc_fn, logits0)

    model_cfg = EncoderConfig(dim=6, layers=1, heads=2, d_inter=8, d_ffn=10,
                              conv_block="multiconv", fusion="depth",
                              kernels=(3, 5), n_mels=9, vocab=3)
    model = CtcModel(model_cfg, rng, dtype=np.float64)
    feats0 = rng.normal(size=(16, 9))
    labels0 = [1, 3, 2]

    def model_feats(t):
        loss, _ = ctc_loss(model(t), labels0)
        return loss

    case("ctc_model.feats", model_feats, feats0.copy())

    def model_head(t):
        model.head.weight = t
        loss, _ = ctc_loss(model(Tensor(feats0)), labels0)
        return loss

    case("ctc_model.head_w", model_head, rng.normal(size=(6, 4)))
    return cases


def build_cases(seed: int = 0) -> list[_Case]:
    cases = _op_cases(seed) + _op_cases(seed + 1) + _composite_cases(seed)
    names = [c.name for c in cases]
    if len(set(names)) != len(names):
        raise IntegrityError("duplicate gradient check case names")
    return cases


def run_suite(seed: int = 0) -> tuple[list[CheckResult], float]:
    """Run every case; returns (results, elapsed_seconds)."""
    started = time.perf_counter()
    results = [run_case(c) for c in build_cases(seed)]
    return results, time.perf_counter() - started
