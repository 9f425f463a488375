"""Dense float64 tensors with tape-based reverse-mode differentiation.

Usage::

    tape = Tape()
    w = tape.watch(np.ones(3))
    loss = (w * w).sum()
    (grad,) = tape.gradient(loss, [w])

Operations record onto the tape owning their tracked inputs; operations on
untracked tensors are plain numpy computations. Nodes are appended in
creation order, so the node list is topologically sorted by construction and
the reverse sweep visits each node once.

Subgradient conventions at non-differentiable points: ``maximum`` gives the
full weight to the first operand on ties, ``relu`` and ``abs`` have zero
derivative at 0.
"""

from __future__ import annotations

import io
import struct
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "apply_op",
    "add",
    "subtract",
    "multiply",
    "divide",
    "matmul",
    "exp",
    "log",
    "logsumexp",
    "sum",
    "mean",
    "maximum",
    "tanh",
    "sigmoid",
    "relu",
    "abs",
    "sqrt",
    "square",
    "concatenate",
    "reshape",
    "transpose",
    "numeric_grad",
    "save_tensor",
    "load_tensor",
    "dumps",
    "loads",
]


class _Node(NamedTuple):
    op: str
    inputs: tuple
    vjp: Callable | None


class Tape:
    """Ordered record of operations for one reverse sweep."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def _record(self, op, inputs, vjp):
        self.nodes.append(_Node(op, inputs, vjp))
        return len(self.nodes) - 1

    def watch(self, value) -> "Tensor":
        """Return a leaf tensor tracked by this tape (the data is shared)."""
        data = value.data if isinstance(value, Tensor) else _to_array(value)
        out = Tensor._wrap(data)
        out._tape = self
        out._index = self._record("leaf", (), None)
        return out

    def gradient(self, target: "Tensor", sources: Sequence["Tensor"]) -> list[np.ndarray]:
        """Adjoints of a scalar ``target`` with respect to each source.

        Sources that do not influence the target get exact zeros.
        """
        if not isinstance(target, Tensor) or target.data.size != 1:
            shape = target.shape if isinstance(target, Tensor) else type(target)
            raise ShapeError(f"backward: output must be a scalar, got shape {shape}")
        for s in sources:
            if s._tape is not self:
                raise ValueError("backward: source tensor is not tracked by this tape")
        grads = [np.zeros_like(s.data) for s in sources]
        if target._tape is not self:
            return grads
        adj: list = [None] * (target._index + 1)
        adj[target._index] = np.ones_like(target.data)
        wanted = {}
        for k, s in enumerate(sources):
            wanted.setdefault(s._index, []).append(k)
        for idx in range(target._index, -1, -1):
            g = adj[idx]
            if g is None:
                continue
            if idx in wanted:
                for k in wanted[idx]:
                    grads[k] = np.array(g, dtype=np.float64).reshape(sources[k].shape)
            node = self.nodes[idx]
            adj[idx] = None
            if node.vjp is None:
                continue
            needs = tuple(i is not None for i in node.inputs)
            contribs = node.vjp(g, needs)
            for inp, gi in zip(node.inputs, contribs):
                if inp is None or gi is None:
                    continue
                adj[inp] = gi if adj[inp] is None else adj[inp] + gi
        return grads


def _to_array(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if 0 in arr.shape:
        raise ShapeError(f"tensor extents must be positive, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class Tensor:
    """Immutable float64 array, optionally tracked by a :class:`Tape`."""

    __slots__ = ("data", "_tape", "_index")
    __array_priority__ = 100

    def __init__(self, data):
        self.data = _to_array(data.data if isinstance(data, Tensor) else data)
        self._tape = None
        self._index = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        out.data = arr
        out._tape = None
        out._index = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self._tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = ", tracked" if self.tracked else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{tag})"

    def __float__(self):
        return self.item()

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: subtract(self, o)
    __rsub__ = lambda self, o: subtract(o, self)
    __mul__ = lambda self, o: multiply(self, o)
    __rmul__ = lambda self, o: multiply(o, self)
    __truediv__ = lambda self, o: divide(self, o)
    __rtruediv__ = lambda self, o: divide(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        if p == 0.5:
            return sqrt(self)
        raise NotImplementedError("only exponents 2 and 0.5 are supported")

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply_op(name: str, value: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap ``value`` as the result of primitive ``name`` applied to ``inputs``.

    ``vjp(g, needs)`` maps the output adjoint to a tuple of input adjoints
    (``None`` allowed where ``needs`` is False). Exposed so that fused
    primitives defined elsewhere record on the same tape.
    """
    tape = None
    for t in inputs:
        if t._tape is not None:
            if tape is not None and t._tape is not tape:
                raise ValueError(f"{name}: inputs are tracked by different tapes")
            tape = t._tape
    out = Tensor._wrap(value)
    if tape is not None:
        out._tape = tape
        out._index = tape._record(name, tuple(t._index for t in inputs), vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(name, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _binary(name, a, b, fwd, da, db):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(name, a, b)
    av, bv = a.data, b.data
    value = fwd(av, bv)

    def vjp(g, needs):
        ga = _unbroadcast(da(g, av, bv, value), av.shape) if needs[0] else None
        gb = _unbroadcast(db(g, av, bv, value), bv.shape) if needs[1] else None
        return ga, gb

    return apply_op(name, value, (a, b), vjp)


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, *_: g, lambda g, *_: g)


def subtract(a, b) -> Tensor:
    return _binary("subtract", a, b, np.subtract, lambda g, *_: g, lambda g, *_: -g)


def multiply(a, b) -> Tensor:
    return _binary(
        "multiply", a, b, np.multiply,
        lambda g, x, y, _: g * y,
        lambda g, x, y, _: g * x,
    )


def divide(a, b) -> Tensor:
    return _binary(
        "divide", a, b, np.divide,
        lambda g, x, y, _: g / y,
        lambda g, x, y, out: -g * out / y,
    )


def maximum(a, b) -> Tensor:
    # ties route the whole adjoint to ``a``
    return _binary(
        "maximum", a, b, np.maximum,
        lambda g, x, y, _: g * (x >= y),
        lambda g, x, y, _: g * (x < y),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast") from None
    av, bv = a.data, b.data
    value = av @ bv

    def vjp(g, needs):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if needs[0] else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if needs[1] else None
        return ga, gb

    return apply_op("matmul", value, (a, b), vjp)


def _unary(name, x, value, deriv):
    x = as_tensor(x)

    def vjp(g, needs):
        return (g * deriv(),)

    return apply_op(name, value, (x,), vjp)


def exp(x) -> Tensor:
    x = as_tensor(x)
    value = np.exp(x.data)
    return _unary("exp", x, value, lambda: value)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise ValueError(f"log: negative input (min {x.data.min():.6g})")
    with np.errstate(divide="ignore"):
        value = np.log(x.data)
        inv = 1.0 / x.data
    return _unary("log", x, value, lambda: inv)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    value = np.tanh(x.data)
    return _unary("tanh", x, value, lambda: 1.0 - value * value)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    value = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _unary("sigmoid", x, value, lambda: value * (1.0 - value))


def relu(x) -> Tensor:
    x = as_tensor(x)
    value = np.maximum(x.data, 0.0)
    return _unary("relu", x, value, lambda: (x.data > 0).astype(np.float64))


def abs(x) -> Tensor:
    x = as_tensor(x)
    return _unary("abs", x, np.abs(x.data), lambda: np.sign(x.data))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise ValueError(f"sqrt: negative input (min {x.data.min():.6g})")
    value = np.sqrt(x.data)
    with np.errstate(divide="ignore"):
        return _unary("sqrt", x, value, lambda: 0.5 / value)


def square(x) -> Tensor:
    x = as_tensor(x)
    return _unary("square", x, x.data * x.data, lambda: 2.0 * x.data)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis) if ndim else ()


def _expand(g, shape, axes, keepdims):
    if not keepdims:
        g = np.expand_dims(g, axes) if axes else g
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    value = np.sum(x.data, axis=axes, keepdims=keepdims)

    def vjp(g, needs):
        return (_expand(g, x.shape, axes, keepdims),)

    return apply_op("sum", value, (x,), vjp)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    value = np.mean(x.data, axis=axes, keepdims=keepdims)

    def vjp(g, needs):
        return (_expand(g, x.shape, axes, keepdims) / count,)

    return apply_op("mean", value, (x,), vjp)


def logsumexp(x, axis=-1, keepdims=False) -> Tensor:
    """log Σ exp along ``axis``, finite whenever any entry on the axis is finite."""
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    xv = x.data
    m = np.max(xv, axis=axes, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out_k = np.log(np.sum(np.exp(xv - m), axis=axes, keepdims=True)) + m
    value = out_k if keepdims else np.squeeze(out_k, axis=axes)

    def vjp(g, needs):
        gk = g if keepdims else np.expand_dims(g, axes)
        finite = np.isfinite(out_k)
        w = np.exp(xv - np.where(finite, out_k, 0.0)) * finite
        return (gk * w,)

    return apply_op("logsumexp", value, (x,), vjp)


def concatenate(tensors: Sequence, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concatenate: no operands")
    ndim = ts[0].ndim
    ax = axis % ndim
    for t in ts[1:]:
        if t.ndim != ndim or any(t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concatenate: shapes {ts[0].shape} and {t.shape} differ off axis {axis}")
    value = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def vjp(g, needs):
        out = []
        for k, need in enumerate(needs):
            if not need:
                out.append(None)
                continue
            sl = [slice(None)] * ndim
            sl[ax] = slice(bounds[k], bounds[k + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    return apply_op("concatenate", value, ts, vjp)


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, np.integer)) or p is Ellipsis or p is None for p in parts)


def _getitem(x: Tensor, idx) -> Tensor:
    value = x.data[idx]
    if value.size == 0:
        raise ShapeError(f"slice: index {idx!r} selects nothing from shape {x.shape}")
    basic = _is_basic(idx)

    def vjp(g, needs):
        full = np.zeros(x.shape)
        if basic:  # views never repeat an element
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return apply_op("slice", np.array(value), (x,), vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        value = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None

    def vjp(g, needs):
        return (g.reshape(x.shape),)

    return apply_op("reshape", value, (x,), vjp)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[:-2] + (x.ndim - 1, x.ndim - 2) if x.ndim >= 2 else ()
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    value = np.transpose(x.data, axes)

    def vjp(g, needs):
        return (np.transpose(g, inv),)

    return apply_op("transpose", value, (x,), vjp)


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = float(f(x))
        flat[k] = orig - step
        fm = float(f(x))
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * step)
    return grad


# checkpoint format: b"COTT", version byte, rank (int64 LE), extents (int64 LE),
# then row-major float64 LE values
_MAGIC = b"COTT"
_VERSION = 1


def dumps(t) -> bytes:
    # np.ascontiguousarray would promote 0-d arrays to 1-d
    arr = np.array(t.data if isinstance(t, Tensor) else t, dtype=np.float64, order="C")
    header = _MAGIC + bytes([_VERSION]) + struct.pack("<q", arr.ndim)
    header += struct.pack(f"<{arr.ndim}q", *arr.shape)
    return header + arr.astype("<f8").tobytes()


def loads(buf: bytes) -> Tensor:
    stream = io.BytesIO(buf)
    t = _read(stream)
    if stream.read(1):
        raise ValueError("COTT: trailing bytes after tensor payload")
    return t


def _read(stream) -> Tensor:
    head = stream.read(5)
    if len(head) < 5 or head[:4] != _MAGIC:
        raise ValueError("COTT: bad magic")
    if head[4] != _VERSION:
        raise ValueError(f"COTT: unsupported version {head[4]}")
    (rank,) = struct.unpack("<q", stream.read(8))
    if rank < 0:
        raise ValueError(f"COTT: negative rank {rank}")
    shape = struct.unpack(f"<{rank}q", stream.read(8 * rank))
    n = int(np.prod(shape)) if rank else 1
    payload = stream.read(8 * n)
    if len(payload) != 8 * n:
        raise ValueError("COTT: truncated payload")
    return Tensor(np.frombuffer(payload, dtype="<f8").reshape(shape))


def save_tensor(path, t) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(t))


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        return loads(fh.read())
