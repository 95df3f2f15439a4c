"""Reverse-mode automatic differentiation on numpy float64 arrays.

A ComputationTape records every primitive application in execution order;
backpropagation walks the tape in reverse and accumulates gradients into the
input tensors. Primitives are pure: replaying a tape reproduces the recorded
forward values bit-identically (see Tape.replay).

Gradient conventions:
  * log, div and sqrt clamp their (denominator) inputs away from zero by
    1e-12 so downstream losses never see inf/nan from a degenerate input.
  * clip passes gradients through where the input is inside the bounds, and
    at an active bound only when the gradient points back inside (projected
    gradient); a parameter pinned at a bound can therefore still recover.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_EPS = 1e-12


class ShapeError(ValueError):
    """Raised when a primitive receives incompatibly shaped inputs."""

    def __init__(self, primitive: str, *shapes: tuple) -> None:
        self.primitive = primitive
        self.shapes = shapes
        super().__init__(f"{primitive}: incompatible shapes {list(shapes)}")


class Tensor:
    """Node in the computation graph: float64 data plus gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "tape")

    def __init__(self, data, requires_grad: bool = False, name: str = "") -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Entry:
    __slots__ = ("output", "inputs", "backward", "forward")

    def __init__(self, output, inputs, backward, forward) -> None:
        self.output = output
        self.inputs = inputs
        self.backward = backward
        self.forward = forward


class Tape:
    """Ordered record of primitive applications."""

    __slots__ = ("entries",)

    def __init__(self) -> None:
        self.entries: list[_Entry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def replay(self) -> None:
        """Re-execute every recorded forward in order, in place."""
        for entry in self.entries:
            entry.output.data = entry.forward()


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(name: str, inputs: Sequence, out_data: np.ndarray,
           backward: Callable, forward: Callable) -> Tensor:
    """Wrap a primitive result, recording it when a tape is active."""
    tensors = tuple(as_tensor(x) for x in inputs)
    needs = any(t.requires_grad for t in tensors)
    out = Tensor(out_data, requires_grad=needs)
    tape = _active_tape()
    if tape is not None and needs:
        out.tape = tape
        tape.entries.append(_Entry(out, tensors, backward, forward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backpropagate(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every reachable leaf.

    The loss must be a recorded scalar. Gradients of parameters add onto any
    existing .grad (cleared by the optimizer step); parameters the loss never
    touched simply keep their accumulator, i.e. a zero contribution.
    """
    tape = loss.tape
    if tape is None:
        raise ValueError("backpropagate: loss was not recorded on any tape")
    if loss.data.size != 1:
        raise ShapeError("backpropagate", loss.data.shape)
    loss.grad = np.ones_like(loss.data)
    for entry in reversed(tape.entries):
        g = entry.output.grad
        if g is None:
            continue
        grads = entry.backward(g)
        for t, gi in zip(entry.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if t.grad is None:
                # copy: backward functions may hand back (views of) the
                # output gradient itself, and .grad must own its buffer so
                # the in-place accumulation below cannot alias it
                t.grad = np.array(gi, dtype=np.float64)
            else:
                t.grad += gi


# ---------------------------------------------------------------------------
# primitives

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _apply("matmul", (a, b), ad @ bd, backward, lambda: a.data @ b.data)


def _elementwise_pair(name, a, b, fwd, bwd):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = fwd(a.data, b.data)
    except ValueError:
        raise ShapeError(name, a.data.shape, b.data.shape) from None
    ash, bsh = a.data.shape, b.data.shape

    def backward(g):
        ga, gb = bwd(g, a.data, b.data)
        ga = None if ga is None else _unbroadcast(ga, ash)
        gb = None if gb is None else _unbroadcast(gb, bsh)
        return ga, gb

    return _apply(name, (a, b), out, backward, lambda: fwd(a.data, b.data))


def add(a, b) -> Tensor:
    return _elementwise_pair("add", a, b, np.add, lambda g, x, y: (g, g))


def sub(a, b) -> Tensor:
    return _elementwise_pair("sub", a, b, np.subtract, lambda g, x, y: (g, -g))


def mul(a, b) -> Tensor:
    return _elementwise_pair("mul", a, b, np.multiply,
                             lambda g, x, y: (g * y, g * x))


def _safe_denom(y: np.ndarray) -> np.ndarray:
    s = np.where(y < 0, -1.0, 1.0)
    return s * np.maximum(np.abs(y), _EPS)


def div(a, b) -> Tensor:
    def fwd(x, y):
        return x / _safe_denom(y)

    def bwd(g, x, y):
        ys = _safe_denom(y)
        return g / ys, -g * x / (ys * ys)

    return _elementwise_pair("div", a, b, fwd, bwd)


def _elementwise_unary(name, a, fwd, bwd):
    a = as_tensor(a)
    out = fwd(a.data)

    def backward(g):
        return (bwd(g, a.data, out),)

    return _apply(name, (a,), out, backward, lambda: fwd(a.data))


def neg(a) -> Tensor:
    return _elementwise_unary("neg", a, np.negative, lambda g, x, o: -g)


def relu(a) -> Tensor:
    return _elementwise_unary("relu", a, lambda x: np.maximum(x, 0.0),
                              lambda g, x, o: g * (x > 0))


def sigmoid(a) -> Tensor:
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    return _elementwise_unary("sigmoid", a, fwd, lambda g, x, o: g * o * (1.0 - o))


def tanh(a) -> Tensor:
    return _elementwise_unary("tanh", a, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def exp(a) -> Tensor:
    return _elementwise_unary("exp", a, np.exp, lambda g, x, o: g * o)


def log(a) -> Tensor:
    # input clamped away from 0; gradient uses the clamped value
    return _elementwise_unary("log", a,
                              lambda x: np.log(np.maximum(x, _EPS)),
                              lambda g, x, o: g / np.maximum(x, _EPS))


def sqrt(a) -> Tensor:
    return _elementwise_unary("sqrt", a,
                              lambda x: np.sqrt(np.maximum(x, _EPS)),
                              lambda g, x, o: g * 0.5 / o)


def square(a) -> Tensor:
    return _elementwise_unary("square", a, np.square, lambda g, x, o: g * 2.0 * x)


def softplus(a) -> Tensor:
    def fwd(x):
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g, x, o):
        return g / (1.0 + np.exp(-x))

    return _elementwise_unary("softplus", a, fwd, bwd)


def clip(a, lo: float, hi: float) -> Tensor:
    def fwd(x):
        return np.clip(x, lo, hi)

    def bwd(g, x, o):
        keep = ((x < hi) | (g > 0)) & ((x > lo) | (g < 0))
        return g * keep

    return _elementwise_unary("clip", a, fwd, bwd)


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _apply("sum", (a,), a.data.sum(axis=axis), backward,
                  lambda: a.data.sum(axis=axis))


def reduce_mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    n = a.data.size if axis is None else shape[axis]
    if n == 0:
        raise ShapeError("mean", shape)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / n, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return _apply("mean", (a,), a.data.mean(axis=axis), backward,
                  lambda: a.data.mean(axis=axis))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat")
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    out = np.concatenate([t.data for t in ts], axis=axis)
    return _apply("concat", ts, out, backward,
                  lambda: np.concatenate([t.data for t in ts], axis=axis))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape

    def backward(g):
        return (g.reshape(old),)

    return _apply("reshape", (a,), a.data.reshape(shape), backward,
                  lambda: a.data.reshape(shape))


def gather_rows(a, index: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor; duplicate indices sum in the backward."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("gather_rows", a.data.shape)
    idx = np.asarray(index, dtype=np.intp)
    rows = a.data.shape[0]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _apply("gather_rows", (a,), a.data[idx], backward,
                  lambda: a.data[idx])


def slice_cols(a, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a 2-D tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2 or not 0 <= start < stop <= a.data.shape[1]:
        raise ShapeError("slice_cols", a.data.shape, (start, stop))

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return (ga,)

    return _apply("slice_cols", (a,), a.data[:, start:stop].copy(), backward,
                  lambda: a.data[:, start:stop].copy())


def segment_sum(a, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of a 2-D tensor into segments; empty segments give zeros."""
    a = as_tensor(a)
    if a.data.ndim != 2 or len(segment_ids) != a.data.shape[0]:
        raise ShapeError("segment_sum", a.data.shape, np.shape(segment_ids))
    seg = np.asarray(segment_ids, dtype=np.intp)

    def fwd():
        out = np.zeros((num_segments, a.data.shape[1]))
        np.add.at(out, seg, a.data)
        return out

    def backward(g):
        return (g[seg],)

    return _apply("segment_sum", (a,), fwd(), backward, fwd)


def pad2d(a, pad: int) -> Tensor:
    """Zero-pad the two leading (spatial) axes of an (H, W, C) tensor."""
    a = as_tensor(a)
    if a.data.ndim != 3:
        raise ShapeError("pad2d", a.data.shape)
    width = ((pad, pad), (pad, pad), (0, 0))

    def backward(g):
        return (g[pad:g.shape[0] - pad, pad:g.shape[1] - pad, :],)

    return _apply("pad2d", (a,), np.pad(a.data, width), backward,
                  lambda: np.pad(a.data, width))


_IM2COL_OFFSETS = [(dr, dc) for dr in (0, 1, 2) for dc in (0, 1, 2)]


def im2col3x3(a) -> Tensor:
    """3x3 patch matrix of an (H, W, C) tensor with implicit zero padding.

    Output row r*W + c holds the 9 patch cells around pixel (r, c) in
    row-major offset order, each cell contributing C consecutive columns.
    The backward pass folds the patch gradient back with shifted slice
    adds, which keeps both directions allocation-bound rather than
    index-bound.
    """
    a = as_tensor(a)
    if a.data.ndim != 3:
        raise ShapeError("im2col3x3", a.data.shape)
    h, w, c = a.data.shape

    def fwd():
        padded = np.pad(a.data, ((1, 1), (1, 1), (0, 0)))
        cols = np.concatenate(
            [padded[dr:dr + h, dc:dc + w, :] for dr, dc in _IM2COL_OFFSETS],
            axis=2)
        return cols.reshape(h * w, 9 * c)

    def backward(g):
        g3 = g.reshape(h, w, 9, c)
        gp = np.zeros((h + 2, w + 2, c))
        for k, (dr, dc) in enumerate(_IM2COL_OFFSETS):
            gp[dr:dr + h, dc:dc + w, :] += g3[:, :, k, :]
        return (gp[1:h + 1, 1:w + 1, :],)

    return _apply("im2col3x3", (a,), fwd(), backward, fwd)
