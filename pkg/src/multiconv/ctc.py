"""Connectionist temporal classification: loss, gradient, decoding, scoring.

The loss marginalizes over all frame alignments of the label sequence via
the usual forward/backward recursions on the blank-extended state chain
``blank, y1, blank, y2, ..., blank``. All dynamic programming runs in
log-space float64 regardless of the logit dtype; the analytic gradient
(softmax minus state occupancy) is cast back to the logit dtype.

Class 0 is the blank everywhere; real tokens are 1..vocab.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Tensor, record
from .errors import ContractError

NEG_INF = float("-inf")


def _extended_states(labels: Sequence[int]) -> np.ndarray:
    ext = np.zeros(2 * len(labels) + 1, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels: Sequence[int]) -> int:
    """Fewest frames that can realize the label sequence under CTC rules."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_feasible(n_frames: int, labels: Sequence[int]) -> bool:
    return n_frames >= min_frames(labels)


def _check_labels(labels: Sequence[int], vocab: int) -> list[int]:
    out = []
    for y in labels:
        y = int(y)
        if not 1 <= y <= vocab:
            raise ContractError(f"label {y} outside 1..{vocab} (0 is the blank)")
        out.append(y)
    return out


def _log_softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def ctc_loss(logits: Tensor, labels: Sequence[int]) -> tuple[Tensor, bool]:
    """Negative log-likelihood of ``labels`` under per-frame logits [T, vocab+1].

    Returns ``(loss, feasible)``. When the sequence cannot fit in the
    available frames the loss is +inf, carries no gradient, and ``feasible``
    is False; callers should drop such samples rather than step on them.
    """
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ContractError(f"ctc_loss needs logits [T, vocab+1], got {logits.shape}")
    n_frames, n_classes = logits.shape
    labels = _check_labels(labels, n_classes - 1)
    if not ctc_feasible(n_frames, labels):
        return Tensor(np.float64(np.inf)), False

    ext = _extended_states(labels)
    n_states = ext.shape[0]
    lp = _log_softmax64(logits.data)
    lp_ext = lp[:, ext]  # [T, S] emission log-probs per chain state

    # skip transition s-2 -> s exists where state s is a label differing from s-2
    skip_in = np.zeros(n_states, dtype=bool)
    if n_states > 2:
        skip_in[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])

    alpha = np.full((n_frames, n_states), NEG_INF)
    alpha[0, 0] = lp_ext[0, 0]
    if n_states > 1:
        alpha[0, 1] = lp_ext[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        step = np.concatenate(([NEG_INF], prev[:-1]))
        merged = np.logaddexp(prev, step)
        if n_states > 2:
            skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
            merged = np.where(skip_in, np.logaddexp(merged, skip), merged)
        alpha[t] = merged + lp_ext[t]

    tail = alpha[-1, -1]
    if n_states > 1:
        tail = np.logaddexp(tail, alpha[-1, -2])
    log_like = tail
    if log_like == NEG_INF:
        # unreachable for feasible inputs with finite logits, but stay safe
        return Tensor(np.float64(np.inf)), False

    beta = np.full((n_frames, n_states), NEG_INF)
    beta[-1, -1] = lp_ext[-1, -1]
    if n_states > 1:
        beta[-1, -2] = lp_ext[-1, -2]
    skip_out = np.zeros(n_states, dtype=bool)
    if n_states > 2:
        skip_out[:-2] = skip_in[2:]
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1]
        step = np.concatenate((nxt[1:], [NEG_INF]))
        merged = np.logaddexp(nxt, step)
        if n_states > 2:
            skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
            merged = np.where(skip_out, np.logaddexp(merged, skip), merged)
        beta[t] = merged + lp_ext[t]

    # state occupancy; alpha and beta both include the frame-t emission
    with np.errstate(invalid="ignore"):
        gamma = np.exp(alpha + beta - lp_ext - log_like)
    gamma[~np.isfinite(gamma)] = 0.0
    occupancy = np.zeros((n_frames, n_classes))
    for s in range(n_states):
        occupancy[:, ext[s]] += gamma[:, s]

    softmax_p = np.exp(lp)
    grad64 = softmax_p - occupancy
    out = Tensor(np.float64(-log_like))

    def bwd(g):
        return ((grad64 * g).astype(logits.data.dtype),)

    return record(out, (logits,), bwd), True


def greedy_decode(logits: np.ndarray) -> list[int]:
    """Best-path decoding: per-frame argmax, collapse repeats, strip blanks."""
    if logits.ndim != 2:
        raise ContractError(f"greedy_decode needs [T, vocab+1] scores, got {logits.shape}")
    best = logits.argmax(axis=-1)
    out: list[int] = []
    prev = 0
    for cls in best:
        if cls != prev and cls != 0:
            out.append(int(cls))
        prev = cls
    return out


def edit_distance(ref: Sequence[int], hyp: Sequence[int]) -> int:
    """Levenshtein distance (unit insert/delete/substitute costs)."""
    if len(ref) < len(hyp):
        ref, hyp = hyp, ref
    previous = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        current = [i]
        for j, h in enumerate(hyp, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (r != h),
            ))
        previous = current
    return previous[-1]


def token_error_rate(refs: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]]) -> float:
    """Total edit distance over total reference length, as a fraction."""
    if len(refs) != len(hyps):
        raise ContractError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    total_ref = sum(len(r) for r in refs)
    if total_ref == 0:
        raise ContractError("token error rate undefined for empty references")
    errors = sum(edit_distance(r, h) for r, h in zip(refs, hyps))
    return errors / total_ref
