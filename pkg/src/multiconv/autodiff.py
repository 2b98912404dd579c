"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tape`` records every differentiable operation in execution order, which
is topological by construction: an op can only consume tensors that already
exist. ``backward`` replays the tape in reverse, accumulating gradients in
that fixed order so repeated runs with the same inputs are bitwise
reproducible.

Ops run forward-only (no recording) when no tape is active, which is how
inference passes avoid graph overhead. Custom layers register their own
backward rules through :func:`record`.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError, StateError

FLOAT_DTYPES = (np.float32, np.float64)

_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


class Tensor:
    """Dense n-dimensional array of reals, optionally tracked on a tape.

    ``data`` is a numpy array (float32 or float64). ``grad`` is an array of
    the same shape once gradients have been accumulated, else None. Leaf
    tensors created with ``requires_grad=True`` (parameters) keep their
    ``grad`` across tapes so per-sample gradients can be summed over a batch;
    call :meth:`zero_grad` between optimizer steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of the operations of one forward pass.

    Use as a context manager around the computation whose gradients are
    needed. Tapes are one-shot: a second ``backward`` without ``reset``
    raises :class:`StateError`. A tape and its intermediate tensors belong
    to a single worker; parameters may be shared read-only across tapes.
    """

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def reset(self) -> None:
        """Drop recorded nodes and allow this tape to record and replay again."""
        self._nodes.clear()
        self._spent = False

    @staticmethod
    def active() -> "Tape | None":
        stack = _tape_stack()
        return stack[-1] if stack else None


def record(out: Tensor, inputs: Sequence[Tensor], backward_rule: Callable) -> Tensor:
    """Attach a backward rule for ``out`` to the active tape, if any.

    ``backward_rule(g)`` receives the gradient w.r.t. ``out`` and must return
    one gradient array (or None) per input, in order. Returned arrays may be
    views of ``g``, but two inputs of the same node must never receive the
    same array object (the accumulator adds in place).
    """
    tape = Tape.active()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape._nodes.append(_Node(out, tuple(inputs), backward_rule))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/dx into ``x.grad`` for every requires_grad ancestor.

    Gradients are summed in reverse tape order, so the accumulation order
    (and therefore the float result) is identical across runs.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise StateError("loss is not attached to a tape; run the forward pass inside `with Tape():`")
    if tape._spent:
        raise StateError("tape already consumed by backward; reset() it or record a fresh pass")
    tape._spent = True

    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape._nodes):
        g = node.out.grad
        if g is None:
            continue
        grads = node.backward(g)
        for tensor, gi in zip(node.inputs, grads):
            if gi is None or not tensor.requires_grad:
                continue
            if tensor.grad is None:
                tensor.grad = gi
            else:
                tensor.grad += gi


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over the batch axes that numpy broadcasting introduced."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with broadcastable batch extents.

    Backward: dL/da = g @ b^T, dL/db = a^T @ g (batch axes summed back).
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast") from exc
    out = Tensor(a.data @ b.data)

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return record(out, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes must match exactly (no implicit broadcasting)."""
    _require_same_shape("add", a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return g, g.copy()

    return record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product; shapes must match exactly."""
    _require_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return g * b.data, g * a.data

    return record(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar (the only scalar broadcast allowed)."""
    c = float(c)
    out = Tensor(a.data * c)

    def bwd(g):
        return (g * c,)

    return record(out, (a,), bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector b[C] to every row of x[..., C] (explicit row broadcast)."""
    if b.ndim != 1 or x.ndim < 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: cannot add bias {b.shape} to {x.shape}")
    out = Tensor(x.data + b.data)

    def bwd(g):
        axes = tuple(range(g.ndim - 1))
        return g, g.sum(axis=axes) if axes else g.copy()

    return record(out, (x, b), bwd)


def scale_rows(x: Tensor, r: Tensor) -> Tensor:
    """Multiply each frame x[t, :] by the scalar r[t, 0] (explicit column broadcast)."""
    if x.ndim != 2 or r.shape != (x.shape[0], 1):
        raise ShapeError(f"scale_rows: need x[T,C] and r[T,1], got {x.shape} and {r.shape}")
    out = Tensor(x.data * r.data)

    def bwd(g):
        return g * r.data, (g * x.data).sum(axis=1, keepdims=True)

    return record(out, (x, r), bwd)


def slice_channels(x: Tensor, lo: int, hi: int) -> Tensor:
    """Copy out channels [lo, hi) of the last axis; backward scatters into place."""
    c = x.shape[-1]
    if not (0 <= lo < hi <= c):
        raise IndexError(f"slice_channels: range [{lo}, {hi}) invalid for {c} channels")
    out = Tensor(x.data[..., lo:hi].copy())

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[..., lo:hi] = g
        return (gx,)

    return record(out, (x,), bwd)


def split_channels(x: Tensor, boundary: int) -> tuple[Tensor, Tensor]:
    """Split the last axis at ``boundary`` into two disjoint channel ranges."""
    c = x.shape[-1]
    if not (0 < boundary < c):
        raise IndexError(f"split_channels: boundary {boundary} out of range for {c} channels")
    return slice_channels(x, 0, boundary), slice_channels(x, boundary, c)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis in list order; backward slices the gradient."""
    if not parts:
        raise ContractError("concat_channels: empty part list")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(
                f"concat_channels: leading extents differ, {parts[0].shape} vs {p.shape}"
            )
    if len(parts) == 1:
        return parts[0]
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1))
    widths = [p.shape[-1] for p in parts]

    def bwd(g):
        grads = []
        lo = 0
        for w in widths:
            grads.append(g[..., lo:lo + w])
            lo += w
        return grads

    return record(out, tuple(parts), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if math.prod(shape) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(x.shape),)

    return record(out, (x,), bwd)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    out = Tensor(np.ascontiguousarray(np.swapaxes(x.data, a, b)))

    def bwd(g):
        return (np.swapaxes(g, a, b),)

    return record(out, (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    """Sum all entries into a scalar (the usual test-loss reducer)."""
    out = Tensor(x.data.sum())

    def bwd(g):
        return (np.full(x.shape, g, dtype=x.data.dtype),)

    return record(out, (x,), bwd)
