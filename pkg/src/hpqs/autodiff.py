"""Dense float64 tensors with a define-by-run reverse-mode tape.

Every differentiable op records a node on the active :class:`Tape` when at
least one of its inputs requires a gradient.  ``backward(loss)`` then walks
the recorded nodes once, in reverse record order, and accumulates
``dloss/dleaf`` into ``leaf.grad``.

Ops refuse to produce NaN/Inf: a non-finite forward result raises
:class:`NonFiniteError` instead of propagating silently.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "Tensor",
    "add",
    "avgpool2d",
    "backward",
    "clip",
    "concat",
    "conv2d",
    "forward_op",
    "log",
    "matmul",
    "mean",
    "mse_loss",
    "mul",
    "nll_loss",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "softplus",
    "sum",
    "tensor",
    "transpose",
]

LOG_EPS = 1e-300


class ShapeError(ValueError):
    """Raised when op inputs have incompatible extents."""


class NonFiniteError(FloatingPointError):
    """Raised when an op would produce NaN or Inf."""


class Tensor:
    """A dense row-major float64 array that can carry a gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_tape", "_produced")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape: Tape | None = None
        self._produced = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._produced

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)


def _raise_item(t: Tensor) -> float:
    raise ShapeError(f"item(): tensor has shape {t.shape}, expected a single element")


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable ops.

    Use as a context manager to scope one forward pass::

        with Tape() as tape:
            loss = model(x)
        tape.backward(loss)

    Ops executed outside any ``with Tape()`` block record onto a per-thread
    default tape (see :meth:`Tape.current`).
    """

    _local = threading.local()

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    @classmethod
    def _stack(cls) -> list["Tape"]:
        stack = getattr(cls._local, "stack", None)
        if stack is None:
            stack = cls._local.stack = [Tape()]
        return stack

    @classmethod
    def current(cls) -> "Tape":
        return cls._stack()[-1]

    @classmethod
    def reset_default(cls) -> None:
        """Drop everything recorded on this thread's default tape."""
        cls._stack()[0] = Tape()

    def __enter__(self) -> "Tape":
        self._stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = self._stack()
        if stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op, inputs, output, backward_fn) -> None:
        output._tape = self
        output._produced = True
        self.nodes.append(Node(op, tuple(inputs), output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
        if loss.is_leaf:
            if loss.requires_grad:
                _accumulate_leaf(loss, np.ones_like(loss.data))
            return
        if not self.nodes:
            raise RuntimeError("backward: tape is empty")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    _accumulate_leaf(inp, gi)
                else:
                    prev = grads.get(id(inp))
                    grads[id(inp)] = gi if prev is None else prev + gi


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = np.broadcast_to(g, t.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def backward(loss: Tensor) -> None:
    """Accumulate ``dloss/dleaf`` into every reachable ``requires_grad`` leaf."""
    tape = loss._tape if loss._tape is not None else Tape.current()
    tape.backward(loss)


def _finish(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op}: produced non-finite values")
    result = Tensor(out)
    if any(t.requires_grad for t in inputs):
        result.requires_grad = True
        Tape.current().record(op, inputs, result, backward_fn)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _finish("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _finish("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    with np.errstate(over="ignore", invalid="ignore"):  # _finish reports non-finite results
        out = a.data * b.data
    return _finish("mul", out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _finish("div", out, (a, b), bw)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _finish("relu", np.where(mask, x.data, 0.0), (x,), bw)


def softplus(x) -> Tensor:
    x = _as_tensor(x)
    out = np.logaddexp(0.0, x.data)

    def bw(g):
        return (g * _sigmoid(x.data),)

    return _finish("softplus", out, (x,), bw)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    s = _sigmoid(x.data)

    def bw(g):
        return (g * s * (1.0 - s),)

    return _finish("sigmoid", s, (x,), bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _finish("softmax", s, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _finish("log_softmax", out, (x,), bw)


def log(x) -> Tensor:
    x = _as_tensor(x)
    clamped = np.maximum(x.data, LOG_EPS)
    live = x.data >= LOG_EPS

    def bw(g):
        return (np.where(live, g / clamped, 0.0),)

    return _finish("log", np.log(clamped), (x,), bw)


def clip(x, lo: float, hi: float) -> Tensor:
    x = _as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        return (g * inside,)

    return _finish("clip", np.clip(x.data, lo, hi), (x,), bw)


# --------------------------------------------------------------------------
# reductions and shape ops
# --------------------------------------------------------------------------


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _finish("sum", out, (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.size // max(out.size, 1) if x.size else 1

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / count,)

    return _finish("mean", out, (x,), bw)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {shape}") from None

    def bw(g):
        return (g.reshape(x.shape),)

    return _finish("reshape", out, (x,), bw)


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = np.argsort(axes)

    def bw(g):
        return (g.transpose(inverse),)

    return _finish("transpose", x.data.transpose(axes), (x,), bw)


def getitem(x, index) -> Tensor:
    x = _as_tensor(x)
    out = x.data[index]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _finish("getitem", np.array(out), (x,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one input")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        shapes = [t.shape for t in ts]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _finish("concat", out, ts, bw)


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible extents {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: cannot broadcast batch extents {a.shape} @ {b.shape}") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _finish("matmul", out, (a, b), bw)


def conv2d(x, w, b=None) -> Tensor:
    """Valid (unpadded), stride-1 convolution.

    ``x`` is (N, C, H, W), ``w`` is (O, C, kh, kw), ``b`` is (O,).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    if kh > h or kw > wd:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{wd}")
    ho, wo = h - kh + 1, wd - kw + 1
    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))  # (N, C, Ho, Wo, kh, kw)
    out = np.tensordot(windows, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    inputs: tuple[Tensor, ...] = (x, w)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {b.shape} does not match {o} output channels")
        out = out + b.data[None, :, None, None]
        inputs = (x, w, b)

    def bw(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        gx = np.zeros_like(x.data) if x.requires_grad else None
        if gx is not None:
            for p in range(kh):
                for q in range(kw):
                    contrib = np.tensordot(g, w.data[:, :, p, q], axes=([1], [0]))
                    gx[:, :, p : p + ho, q : q + wo] += contrib.transpose(0, 3, 1, 2)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _finish("conv2d", np.ascontiguousarray(out), inputs, bw)


def avgpool2d(x, k: int) -> Tensor:
    """Non-overlapping ``k``x``k`` average pooling over the last two axes."""
    x = _as_tensor(x)
    h, wd = x.shape[-2], x.shape[-1]
    if h % k or wd % k:
        raise ShapeError(f"avgpool2d: spatial extents {h}x{wd} not divisible by window {k}")
    lead = x.shape[:-2]
    blocks = x.data.reshape(*lead, h // k, k, wd // k, k)
    out = blocks.mean(axis=(-3, -1))

    def bw(g):
        g = np.repeat(np.repeat(g, k, axis=-2), k, axis=-1)
        return (g / (k * k),)

    return _finish("avgpool2d", out, (x,), bw)


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def nll_loss(log_probs, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under (N, C) log-probabilities."""
    log_probs = _as_tensor(log_probs)
    targets = np.asarray(targets, dtype=np.int64)
    if log_probs.ndim != 2 or targets.shape != (log_probs.shape[0],):
        raise ShapeError(f"nll_loss: log_probs {log_probs.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= log_probs.shape[1]):
        raise ShapeError(f"nll_loss: target out of range for {log_probs.shape[1]} classes")
    n = log_probs.shape[0]
    rows = np.arange(n)
    out = -log_probs.data[rows, targets].mean()

    def bw(g):
        full = np.zeros_like(log_probs.data)
        full[rows, targets] = -g / n
        return (full,)

    return _finish("nll_loss", np.array(out), (log_probs,), bw)


def mse_loss(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data

    def bw(g):
        gd = 2.0 * g * diff / diff.size
        return gd, -gd

    return _finish("mse_loss", np.array((diff * diff).mean()), (pred, target), bw)


_OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "relu": relu,
    "softplus": softplus,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "log": log,
    "sum": sum,
    "mean": mean,
    "conv2d": conv2d,
    "avgpool2d": avgpool2d,
    "reshape": reshape,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "nll_loss": nll_loss,
    "mse_loss": mse_loss,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by name, e.g. ``forward_op("relu", x)``."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; expected one of {sorted(_OPS)}") from None
    return fn(*inputs, **kwargs)
