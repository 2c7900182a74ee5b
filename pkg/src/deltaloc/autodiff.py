"""A small reverse-mode automatic differentiation engine over numpy.

Design: a Tensor is a float64 numpy buffer plus an optional gradient buffer.
While a GradientTape is active (as a context manager), every primitive that
touches a tensor requiring gradients records a node holding the operands and
a backward rule. backward() replays the nodes in reverse, accumulating
gradients into each tensor's .grad.

The primitive set is exactly what a residual convolutional backbone plus a
stacked LSTM head needs: matmul, conv2d, maxpool2d, relu, sigmoid, tanh,
add, mul, scale, concat, slicing, mean/sum reductions, and a fused
smooth-L1 loss. Everything runs in 64-bit floats so finite-difference
checks are meaningful.

Tensors are treated as immutable values after construction; the training
loop swaps in fresh data buffers rather than mutating them in place. A tape
is confined to one thread (the active-tape registry is thread-local), so
batch-parallel forward passes need independent tapes.
"""

from __future__ import annotations

import threading
import weakref
from itertools import product

import numpy as np

from .errors import RankError, ShapeError, TapeError

_STATE = threading.local()


def _active_tape():
    stack = getattr(_STATE, "tapes", None)
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        # Handle linking into the tape that recorded this tensor, if any.
        self.tape_id = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.data.shape)}{flag})"


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class GradientTape:
    """Records primitive applications in topological order.

    Use as a context manager:

        with GradientTape() as tape:
            loss = smooth_l1_loss(forward(...), target)
        backward(tape, loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        stack = getattr(_STATE, "tapes", None)
        if stack is None:
            stack = _STATE.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tapes.pop()
        return False


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is None:
        return out
    if not any(
        t.requires_grad or (t._tape is not None and t._tape() is tape) for t in inputs
    ):
        return out
    out._tape = weakref.ref(tape)
    out.tape_id = len(tape.nodes)
    tape.nodes.append(_Node(out, inputs, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that were expanded by broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(tape: GradientTape, loss: Tensor) -> None:
    """Populate .grad for every tensor that contributed to the scalar loss."""
    if not isinstance(loss, Tensor):
        raise TypeError(f"loss must be a Tensor, got {type(loss).__name__}")
    if loss.data.shape != ():
        raise RankError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._tape is None or loss._tape() is not tape or loss.tape_id is None:
        raise TapeError("loss tensor is detached from this tape; was it recorded on it?")
    if tape.nodes[loss.tape_id].out is not loss:
        raise TapeError("tape handle does not point back at the loss tensor")

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    tensors: dict[int, Tensor] = {id(loss): loss}

    for node in reversed(tape.nodes[: loss.tape_id + 1]):
        g_out = grads.get(id(node.out))
        if g_out is None:
            continue
        for t, g in zip(node.inputs, node.backward_fn(g_out)):
            if g is None:
                continue
            key = id(t)
            tensors[key] = t
            held = grads.get(key)
            grads[key] = g if held is None else held + g

    for key, t in tensors.items():
        t.grad = np.asarray(grads[key], dtype=np.float64)


# ---------------------------------------------------------------------------
# elementwise and linear primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"add operands do not broadcast: {a.shape} vs {b.shape}") from None
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"mul operands do not broadcast: {a.shape} vs {b.shape}") from None
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _record(out, (a, b), bwd)


def scale(a, k: float) -> Tensor:
    a = _as_tensor(a)
    k = float(k)
    out = Tensor(a.data * k)

    def bwd(g):
        return (g * k,)

    return _record(out, (a,), bwd)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise RankError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _record(out, (a, b), bwd)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0  # derivative at exactly 0 is 0

    def bwd(g):
        return (g * mask,)

    return _record(out, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # exp(-|x|) form avoids overflow for large negative inputs.
    e = np.exp(-np.abs(a.data))
    y = np.where(a.data >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(y)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _record(out, (a,), bwd)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)

    def bwd(g):
        return (g * (1.0 - y * y),)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape-moving primitives


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out = Tensor(a.data.mean(axis=axes) if a.ndim else a.data.copy())
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    shape = a.shape

    def bwd(g):
        for ax in axes:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape) / max(count, 1),)

    return _record(out, (a,), bwd)


def tsum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out = Tensor(a.data.sum(axis=axes) if a.ndim else a.data.copy())
    shape = a.shape

    def bwd(g):
        for ax in axes:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(out, (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            i != axis and t.shape[i] != tensors[0].shape[i] for i in range(ndim)
        ):
            raise ShapeError(
                f"concat shapes differ off-axis: {tensors[0].shape} vs {t.shape}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        pieces = []
        start = 0
        for s in sizes:
            sl = [slice(None)] * ndim
            sl[axis] = slice(start, start + s)
            pieces.append(g[tuple(sl)])
            start += s
        return tuple(pieces)

    return _record(out, tuple(tensors), bwd)


def tslice(a, key) -> Tensor:
    """Basic slicing (the 'slice' primitive). key is anything numpy basic
    indexing accepts that yields a view: slices, ints, tuples thereof."""
    a = _as_tensor(a)
    out = Tensor(a.data[key])
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=np.float64)
        full[key] = g
        return (full,)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation over NCHW input with OIHW weights."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise RankError(f"conv2d needs rank-4 input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    stride = int(stride)
    padding = int(padding)
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeError(
            f"conv2d kernel {w.shape} does not fit padded input {x.shape} (padding {padding})"
        )
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match {cout} channels")

    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    xp = (
        np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if padding
        else x.data
    )

    acc = np.zeros((bsz, ho, wo, cout))
    for i in range(kh):
        for j in range(kw):
            window = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            acc += np.tensordot(window, w.data[:, :, i, j], axes=([1], [1]))
    outd = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
    if bias is not None:
        outd += bias.data[None, :, None, None]
    out = Tensor(outd)

    wdta = w.data
    inputs = (x, w) if bias is None else (x, w, bias)

    def bwd(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(wdta)
        for i in range(kh):
            for j in range(kw):
                window = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                dw[:, :, i, j] = np.tensordot(g, window, axes=([0, 2, 3], [0, 2, 3]))
                dwin = np.tensordot(gt, wdta[:, :, i, j], axes=([3], [0]))
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                    dwin.transpose(0, 3, 1, 2)
                )
        dx = dxp[:, :, padding : padding + h, padding : padding + wd] if padding else dxp
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _record(out, inputs, bwd)


def maxpool2d(x, window: int, stride: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 4:
        raise RankError(f"maxpool2d needs rank-4 input, got {x.shape}")
    window = int(window)
    stride = window if stride is None else int(stride)
    if window < 1 or stride < 1:
        raise ShapeError(f"maxpool2d needs window, stride >= 1, got {window}, {stride}")
    bsz, c, h, w = x.shape
    if h < window or w < window:
        raise ShapeError(f"maxpool2d window {window} does not fit input {x.shape}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1

    offsets = list(product(range(window), range(window)))
    stack = np.stack(
        [x.data[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] for i, j in offsets]
    )
    arg = stack.argmax(axis=0)  # ties resolve to the first window position
    out = Tensor(np.take_along_axis(stack, arg[None], axis=0)[0])
    shape = x.shape

    def bwd(g):
        dx = np.zeros(shape, dtype=np.float64)
        for idx, (i, j) in enumerate(offsets):
            mask = arg == idx
            dx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += g * mask
        return (dx,)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# loss


def smooth_l1_loss(pred, target) -> Tensor:
    """Mean smooth-L1 of the residual pred - target.

    Per element: 0.5 x^2 when |x| < 1, |x| - 0.5 otherwise. Quadratic near
    zero for stable small-residual gradients, linear in the tails so stray
    large errors cannot dominate the batch.
    """
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"smooth_l1_loss shapes differ: {pred.shape} vs {target.shape}")
    r = pred.data - target.data
    absr = np.abs(r)
    inner = absr < 1.0
    vals = np.where(inner, 0.5 * r * r, absr - 0.5)
    out = Tensor(vals.mean() if r.size else 0.0)
    n = max(r.size, 1)

    def bwd(g):
        d = np.where(inner, r, np.sign(r)) * (float(g) / n)
        return d, -d

    return _record(out, (pred, target), bwd)
