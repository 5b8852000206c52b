"""Dense float64 tensors with tape-based reverse-mode autodiff.

A `Tape` records every primitive applied while it is active (entered as a
context manager) whose inputs are connected to the graph: either a leaf
with ``requires_grad`` or an output previously recorded on the same tape.
`Tape.backward` walks the records in exact reverse order, accumulates
gradients into the leaves, and then refuses to run again until a fresh
forward pass builds a new tape.  With no tape active every operation is a
plain numpy computation, which is the inference fast path.

Gradients accumulate additively into ``Tensor.grad`` across backward calls
until zeroed, so several scalar roots (each with its own forward/tape)
contribute the same gradients as their sum would.

Numeric hygiene: values are expected to stay finite.  Checking every
intermediate is too slow to keep on permanently, so it is gated behind the
`numeric_checks` context; callers that hit a NaN re-run the failing step
inside it to get an error naming the producing op.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NumericsError
from . import kernels

_TAPE_STACK: list["Tape"] = []
_NUMERIC_CHECKS = False


@contextlib.contextmanager
def numeric_checks():
    """Validate every primitive's output while active (slow, diagnostic)."""
    global _NUMERIC_CHECKS
    prev = _NUMERIC_CHECKS
    _NUMERIC_CHECKS = True
    try:
        yield
    finally:
        _NUMERIC_CHECKS = prev


def active_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense float64 array, optionally a differentiable leaf.

    ``grad`` is lazily allocated on first accumulation and keeps the same
    shape as ``data``.  ``tag`` carries a lightweight role label (for the
    typed discriminator wrappers); it does not affect computation.
    """

    __slots__ = ("data", "requires_grad", "grad", "tag", "_tape", "op")

    def __init__(self, data, requires_grad: bool = False, tag: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tag = tag
        self._tape: Optional[Tape] = None
        self.op: Optional[str] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} != data shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def validate(self, where: str = "tensor"):
        if not np.isfinite(self.data).all():
            raise NumericsError(f"non-finite values in {where}")
        return self

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}, op={self.op})"

    # arithmetic sugar; scalars and ndarrays promote to constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class _Node:
    __slots__ = ("op", "out", "inputs", "backward_fn")

    def __init__(self, op, out, inputs, backward_fn):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitives; consumed by a single backward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def _record(self, op, out, inputs, backward_fn):
        out._tape = self
        out.op = op
        self._nodes.append(_Node(op, out, inputs, backward_fn))

    def backward(self, root: Tensor):
        """Populate leaf gradients with d(root)/d(leaf).

        The root must be scalar (one element).  Interior gradients flow
        through a scratch dict; only leaves with ``requires_grad`` keep
        theirs, added on top of whatever was already accumulated.
        """
        if self._consumed:
            raise RuntimeError("tape already consumed; re-run the forward pass")
        if root.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.shape}")
        self._consumed = True
        if root.requires_grad:
            root.accumulate_grad(np.ones_like(root.data))
        if root._tape is not self:
            return  # constant root: zero gradient everywhere
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            if _NUMERIC_CHECKS:
                for ig in in_grads:
                    if ig is not None and not np.isfinite(ig).all():
                        raise NumericsError(f"non-finite gradient from op '{node.op}'")
            for t, ig in zip(node.inputs, in_grads):
                if ig is None:
                    continue
                if t.requires_grad:
                    t.accumulate_grad(ig)
                elif t._tape is self:
                    k = id(t)
                    if k in grads:
                        grads[k] += ig
                    else:
                        grads[k] = ig


def _needs_graph(inputs: Sequence[Tensor]) -> Optional[Tape]:
    tape = active_tape()
    if tape is None:
        return None
    for t in inputs:
        if t.requires_grad or t._tape is tape:
            return tape
    return None


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor],
          backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    if _NUMERIC_CHECKS and not np.isfinite(data).all():
        raise NumericsError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    tape = _needs_graph(inputs)
    if tape is not None:
        tape._record(op, out, tuple(inputs), backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    return _make("div", a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _make("sqrt", y, (a,), lambda g: (g * 0.5 / y,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make("exp", y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def softplus(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    return _make("softplus", y, (a,),
                 lambda g: (g * _sigmoid_np(a.data),))


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make("sum", np.atleast_1d(y) if y.ndim == 0 else y, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for i in ax:
            count *= a.shape[i]
    y = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        gg = np.asarray(g) / count
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make("mean", np.atleast_1d(y) if y.ndim == 0 else y, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    return _make("reshape", a.data.reshape(shape), (a,),
                 lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make("transpose", a.data.transpose(axes), (a,),
                 lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make("concat", data, tuple(tensors), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    return _make("matmul", a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


# ---------------------------------------------------------------------------
# activations


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,),
                 lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope)
    return _make("leaky_relu", a.data * scale, (a,), lambda g: (g * scale,))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_np(a.data)
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _make("softmax", y, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", ls, (a,), bw)


# ---------------------------------------------------------------------------
# structured / NN primitives


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation in NCHW layout; differentiable in x and w."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OIHW weight")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, weight {w.shape[1]}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    ho = kernels.out_size(x.shape[2], w.shape[2], stride, padding)
    wo = kernels.out_size(x.shape[3], w.shape[3], stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"zero-size conv output for input {x.shape} and kernel {w.shape}")
    y = kernels.conv2d_forward(x.data, w.data, stride, padding)

    def bw(g):
        return (
            kernels.conv2d_grad_input(w.data, g, x.shape, stride, padding),
            kernels.conv2d_grad_weight(x.data, g, w.shape, stride, padding),
        )

    return _make("conv2d", y, (x, w), bw)


def nearest_upsample2x(a: Tensor) -> Tensor:
    if a.ndim != 4:
        raise ValueError("nearest_upsample2x expects NCHW input")
    y = a.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = a.shape

    def bw(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make("nearest_upsample2x", y, (a,), bw)


def instance_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) plane over its spatial extent."""
    if a.ndim != 4:
        raise ValueError("instance_norm expects NCHW input")
    mu = a.data.mean(axis=(2, 3), keepdims=True)
    var = a.data.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def bw(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gx = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return ((g - gm - xhat * gx) * inv,)

    return _make("instance_norm", xhat, (a,), bw)


def global_avg_pool(a: Tensor) -> Tensor:
    """NCHW -> (N, C) spatial mean."""
    if a.ndim != 4:
        raise ValueError("global_avg_pool expects NCHW input")
    n, c, h, w = a.shape
    y = a.data.mean(axis=(2, 3))

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), a.shape).copy(),)

    return _make("global_avg_pool", y, (a,), bw)


def pick(a: Tensor, indices: np.ndarray, axis: int = 1) -> Tensor:
    """Select one entry per row along `axis` (labels as 0-based ints)."""
    if a.ndim != 2 or axis != 1:
        raise ValueError("pick supports 2-D tensors along axis 1")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape != (a.shape[0],):
        raise ValueError("one index per row required")
    rows = np.arange(a.shape[0])
    y = a.data[rows, idx]

    def bw(g):
        gx = np.zeros_like(a.data)
        gx[rows, idx] = g
        return (gx,)

    return _make("pick", y, (a,), bw)
