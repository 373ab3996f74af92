"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every primitive builds its output with :func:`record`.  When at least one
input requires a gradient, an :class:`Entry` is attached to the output and
appended to the active :class:`Record` (if any).  Vector-Jacobian products
are themselves written with recorded primitives, so ``grad(...,
create_graph=True)`` yields gradients that can be differentiated again.
This is what the gradient-penalty term of the critic needs.

All values are float64.  Any primitive producing NaN or Inf raises
:class:`NonFiniteError`.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DiffError",
    "NonFiniteError",
    "ShapeError",
    "GraphError",
    "Tensor",
    "Record",
    "GradientMap",
    "tensor",
    "as_tensor",
    "record",
    "backward",
    "grad",
    "grad_check",
    "no_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "softplus",
    "softmax",
    "logsumexp",
    "square",
    "sqrt",
    "sum",
    "mean",
    "minimum",
    "clamp",
    "norm",
    "concat",
    "stack",
    "take",
    "reshape",
    "transpose",
    "broadcast_to",
    "sum_to",
]


class DiffError(Exception):
    """Base class for errors raised by the differentiation core."""


class NonFiniteError(DiffError, FloatingPointError):
    pass


class ShapeError(DiffError, ValueError):
    pass


class GraphError(DiffError, ValueError):
    pass


_uids = itertools.count()
_entry_ids = itertools.count()


class _State(threading.local):
    def __init__(self):
        self.enabled = True
        self.records: list[Record] = []


_state = _State()


class Tensor:
    """Dense float64 array, optionally attached to a recorded computation."""

    __slots__ = ("data", "requires_grad", "entry", "uid", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.entry: Entry | None = None
        self.uid = next(_uids)
        self.name = name

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
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __len__(self):
        return len(self.data)

    # operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Entry:
    """One recorded primitive application."""

    __slots__ = ("op", "inputs", "output", "kwargs", "index")

    def __init__(self, op: "Op", inputs: tuple, output: Tensor, kwargs: dict):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.kwargs = kwargs
        self.index = next(_entry_ids)

    def __repr__(self):
        ins = ",".join(str(t.uid) for t in self.inputs)
        return f"Entry({self.op.name}: [{ins}] -> {self.output.uid})"


class Record:
    """Ordered log of primitive applications made while the record is active.

    Use as a context manager.  Records nest; an entry is appended to every
    active record.
    """

    def __init__(self):
        self.entries: list[Entry] = []
        self._nodes: set[int] = set()

    def __enter__(self) -> "Record":
        _state.records.append(self)
        return self

    def __exit__(self, *exc):
        _state.records.remove(self)
        return False

    def __len__(self):
        return len(self.entries)

    def __contains__(self, t: Tensor) -> bool:
        return t.uid in self._nodes

    def _append(self, entry: Entry) -> None:
        self.entries.append(entry)
        self._nodes.add(entry.output.uid)

    def replay(self) -> list[np.ndarray]:
        """Re-execute every entry from the current leaf values.

        Returns the recomputed output of each entry, in record order.
        """
        values: dict[int, np.ndarray] = {}
        out = []
        for e in self.entries:
            args = [values.get(t.uid, t.data) for t in e.inputs]
            v = e.op.forward(*args, **e.kwargs)
            values[e.output.uid] = v
            out.append(v)
        return out


@contextmanager
def no_grad():
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextmanager
def _grad_mode(enabled: bool):
    prev = _state.enabled
    _state.enabled = enabled
    try:
        yield
    finally:
        _state.enabled = prev


class Op:
    """A primitive: a numpy forward and a vjp written in recorded ops."""

    def __init__(self, name: str, forward: Callable, vjp: Callable):
        self.name = name
        self.forward = forward
        self.vjp = vjp

    def __repr__(self):
        return f"Op({self.name})"


def record(op: Op, inputs: Sequence, **kwargs) -> Tensor:
    """Apply ``op`` to ``inputs`` and log it when gradients are tracked."""
    inputs = tuple([x if isinstance(x, Tensor) else Tensor(x) for x in inputs])
    try:
        value = op.forward(*[t.data for t in inputs], **kwargs)
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in inputs)
        raise ShapeError(f"{op.name}: incompatible shapes {shapes}: {exc}") from None
    _check_finite(value, op.name)
    out = Tensor(value)
    if _state.enabled:
        for t in inputs:
            if t.requires_grad:
                out.requires_grad = True
                entry = Entry(op, inputs, out, kwargs)
                out.entry = entry
                for rec in _state.records:
                    rec._append(entry)
                break
    return out


_add_reduce = np.add.reduce


def _check_finite(value: np.ndarray, where: str) -> None:
    # a finite sum implies finite entries; only fall back to the full scan otherwise
    if not np.isfinite(_add_reduce(value, None)) and not np.isfinite(value).all():
        raise NonFiniteError(f"{where}: non-finite output")


# ---------------------------------------------------------------- primitives
#
# Each vjp is written once against a backend ``F``: the numpy namespace for
# plain first-order backward passes, or the recorded-op namespace when the
# backward pass itself must be differentiable.


def _sum_to_fwd(a, shape=None):
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and a.shape[i + lead] != 1
    )
    return np.sum(a, axis=axes, keepdims=True).reshape(shape)


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return a @ b


def _transpose_fwd(a):
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D operand, got {a.shape}")
    return a.T


def _sigmoid_fwd(a):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _softplus_fwd(a):
    return np.logaddexp(0.0, a)


def _softmax_fwd(a):
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp_fwd(a, keepdims=False):
    m = a.max(axis=-1, keepdims=True)
    out = m + np.log(np.exp(a - m).sum(axis=-1, keepdims=True))
    return out if keepdims else out[..., 0]


def _norm_fwd(a, axis=-1, keepdims=False):
    return np.sqrt(np.sum(a * a, axis=axis, keepdims=keepdims))


def _take_fwd(a, index=None):
    try:
        return a[index]
    except IndexError as exc:
        raise ShapeError(f"take: {exc}") from None


def _has_array_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def _scatter_fwd(g, index=None, shape=None):
    out = np.zeros(shape)
    if _has_array_index(index):
        np.add.at(out, index, g)  # repeated indices accumulate
    else:
        out[index] = g
    return out


def _reshape_fwd(a, shape=None):
    try:
        return a.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None


def _count(shape, axis) -> int:
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return int(np.prod([shape[ax] for ax in axes]))


class _NumpyBackend:
    add = staticmethod(np.add)
    sub = staticmethod(np.subtract)
    mul = staticmethod(np.multiply)
    div = staticmethod(np.divide)
    neg = staticmethod(np.negative)
    matmul = staticmethod(np.matmul)
    exp = staticmethod(np.exp)
    square = staticmethod(np.square)
    sigmoid = staticmethod(_sigmoid_fwd)
    softmax = staticmethod(_softmax_fwd)
    sum_to = staticmethod(_sum_to_fwd)
    scatter = staticmethod(_scatter_fwd)

    @staticmethod
    def scale(a, c):
        return a * c

    @staticmethod
    def transpose(a):
        return a.T

    @staticmethod
    def sum(a, axis=None, keepdims=False):
        return np.sum(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def clamp(a, lo=None, hi=None):
        return np.clip(a, lo, hi)

    @staticmethod
    def take(a, index):
        return a[index]

    @staticmethod
    def reshape(a, shape):
        return a.reshape(shape)

    @staticmethod
    def broadcast_to(a, shape):
        return np.broadcast_to(a, shape)

    @staticmethod
    def value(a):
        return a

    @staticmethod
    def const(x):
        return x


class _RecordedBackend:
    """Backend whose operations are recorded, for differentiable backward passes."""

    @staticmethod
    def value(a):
        return a.data

    const = staticmethod(Tensor)


def _bind_recorded_backend() -> None:
    for name in ("add", "sub", "mul", "div", "neg", "matmul", "exp", "square", "sigmoid",
                 "softmax", "sum_to", "scatter", "scale", "transpose", "sum", "clamp", "take",
                 "reshape", "broadcast_to"):
        setattr(_RecordedBackend, name, staticmethod(globals()[name]))


def _unbroadcast2(F, g, a, b, ga, gb):
    return F.sum_to(ga, a.shape), F.sum_to(gb, b.shape)


def _expand_reduced(F, g, shape: tuple, axis, keepdims: bool):
    if not keepdims:
        if axis is None:
            g = F.reshape(g, (1,) * len(shape))
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            new_shape = list(g.shape)
            for ax in sorted(ax % len(shape) for ax in axes):
                new_shape.insert(ax, 1)
            g = F.reshape(g, tuple(new_shape))
    return F.broadcast_to(g, shape)


def _minimum_vjp(F, g, out, a, b):
    av, bv = F.value(a), F.value(b)
    pick_a = F.const((av <= bv).astype(np.float64))
    pick_b = F.const((av > bv).astype(np.float64))
    return F.sum_to(F.mul(g, pick_a), a.shape), F.sum_to(F.mul(g, pick_b), b.shape)


def _clamp_vjp(F, g, out, a, lo=None, hi=None):
    av = F.value(a)
    inside = np.ones(av.shape)
    if lo is not None:
        inside = inside * (av >= lo)
    if hi is not None:
        inside = inside * (av <= hi)
    return (F.mul(g, F.const(inside)),)


def _norm_vjp(F, g, out, a, axis=-1, keepdims=False):
    ge = _expand_reduced(F, g, a.shape, axis, keepdims)
    # the zero vector has no derivative; use the zero subgradient there
    oe = _expand_reduced(F, F.clamp(out, 1e-300, None), a.shape, axis, keepdims)
    return (F.mul(a, F.div(ge, oe)),)


def _concat_vjp(F, g, out, *parts, axis=0):
    grads = []
    start = 0
    ax = axis % out.ndim
    for p in parts:
        stop = start + p.shape[ax]
        grads.append(F.take(g, (slice(None),) * ax + (slice(start, stop),)))
        start = stop
    return tuple(grads)


def _stack_vjp(F, g, out, *parts, axis=0):
    ax = axis % out.ndim
    return tuple(F.take(g, (slice(None),) * ax + (i,)) for i in range(len(parts)))


def _logsumexp_vjp(F, g, out, a, keepdims=False):
    if not keepdims:
        g = F.reshape(g, g.shape + (1,))
    return (F.mul(g, F.softmax(a)),)


def _softmax_vjp(F, g, out, a):
    inner = F.sum(F.mul(g, out), axis=-1, keepdims=True)
    return (F.mul(out, F.sub(g, inner)),)


_ADD = Op("add", np.add, lambda F, g, out, a, b: _unbroadcast2(F, g, a, b, g, g))
_SUB = Op("sub", np.subtract, lambda F, g, out, a, b: _unbroadcast2(F, g, a, b, g, F.neg(g)))
_MUL = Op("mul", np.multiply,
          lambda F, g, out, a, b: _unbroadcast2(F, g, a, b, F.mul(g, b), F.mul(g, a)))
_DIV = Op("div", np.divide,
          lambda F, g, out, a, b: _unbroadcast2(F, g, a, b, F.div(g, b), F.neg(F.div(F.mul(g, out), b))))
_NEG = Op("neg", np.negative, lambda F, g, out, a: (F.neg(g),))
_SCALE = Op("scale", lambda a, c: a * c, lambda F, g, out, a, c: (F.scale(g, c),))
_MATMUL = Op("matmul", _matmul_fwd,
             lambda F, g, out, a, b: (F.matmul(g, F.transpose(b)), F.matmul(F.transpose(a), g)))
_TRANSPOSE = Op("transpose", _transpose_fwd, lambda F, g, out, a: (F.transpose(g),))
_SIGMOID = Op("sigmoid", _sigmoid_fwd,
              lambda F, g, out, a: (F.mul(g, F.mul(out, F.sub(1.0, out))),))
_TANH = Op("tanh", np.tanh, lambda F, g, out, a: (F.mul(g, F.sub(1.0, F.square(out))),))
_EXP = Op("exp", np.exp, lambda F, g, out, a: (F.mul(g, out),))
_LOG = Op("log", np.log, lambda F, g, out, a: (F.div(g, a),))
_SOFTPLUS = Op("softplus", _softplus_fwd, lambda F, g, out, a: (F.mul(g, F.sigmoid(a)),))
_SOFTMAX = Op("softmax", _softmax_fwd, _softmax_vjp)
_LOGSUMEXP = Op("logsumexp", _logsumexp_fwd, _logsumexp_vjp)
_SQUARE = Op("square", np.square, lambda F, g, out, a: (F.mul(g, F.scale(a, 2.0)),))
_SQRT = Op("sqrt", np.sqrt, lambda F, g, out, a: (F.div(g, F.scale(out, 2.0)),))
_SUM = Op(
    "sum",
    lambda a, axis=None, keepdims=False: np.sum(a, axis=axis, keepdims=keepdims),
    lambda F, g, out, a, axis=None, keepdims=False: (_expand_reduced(F, g, a.shape, axis, keepdims),),
)
_MEAN = Op(
    "mean",
    lambda a, axis=None, keepdims=False: np.mean(a, axis=axis, keepdims=keepdims),
    lambda F, g, out, a, axis=None, keepdims=False: (
        F.scale(_expand_reduced(F, g, a.shape, axis, keepdims), 1.0 / _count(a.shape, axis)),
    ),
)
_MINIMUM = Op("minimum", np.minimum, _minimum_vjp)
_CLAMP = Op("clamp", lambda a, lo=None, hi=None: np.clip(a, lo, hi), _clamp_vjp)
_NORM = Op("norm", _norm_fwd, _norm_vjp)
_CONCAT = Op("concat", lambda *parts, axis=0: np.concatenate(parts, axis=axis), _concat_vjp)
_STACK = Op("stack", lambda *parts, axis=0: np.stack(parts, axis=axis), _stack_vjp)
_TAKE = Op("take", _take_fwd,
           lambda F, g, out, a, index=None: (F.scatter(g, index, a.shape),))
_SCATTER = Op("scatter", _scatter_fwd,
              lambda F, g, out, a, index=None, shape=None: (F.take(g, index),))
_RESHAPE = Op("reshape", _reshape_fwd,
              lambda F, g, out, a, shape=None: (F.reshape(g, a.shape),))
_BROADCAST = Op(
    "broadcast_to",
    lambda a, shape=None: np.broadcast_to(a, shape),
    lambda F, g, out, a, shape=None: (F.sum_to(g, a.shape),),
)
_SUM_TO = Op("sum_to", _sum_to_fwd,
             lambda F, g, out, a, shape=None: (F.broadcast_to(g, a.shape),))


# --------------------------------------------------------------- public ops


def add(a, b) -> Tensor:
    return record(_ADD, (a, b))


def sub(a, b) -> Tensor:
    return record(_SUB, (a, b))


def mul(a, b) -> Tensor:
    return record(_MUL, (a, b))


def div(a, b) -> Tensor:
    return record(_DIV, (a, b))


def neg(a) -> Tensor:
    return record(_NEG, (a,))


def scale(a, c: float) -> Tensor:
    """Multiply by a constant real."""
    return record(_SCALE, (a,), c=float(c))


def matmul(a, b) -> Tensor:
    return record(_MATMUL, (a, b))


def transpose(a) -> Tensor:
    return record(_TRANSPOSE, (a,))


def sigmoid(a) -> Tensor:
    return record(_SIGMOID, (a,))


def tanh(a) -> Tensor:
    return record(_TANH, (a,))


def exp(a) -> Tensor:
    return record(_EXP, (a,))


def log(a) -> Tensor:
    return record(_LOG, (a,))


def softplus(a) -> Tensor:
    return record(_SOFTPLUS, (a,))


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    return record(_SOFTMAX, (a,))


def logsumexp(a, keepdims: bool = False) -> Tensor:
    """Log-sum-exp over the last axis."""
    return record(_LOGSUMEXP, (a,), keepdims=keepdims)


def square(a) -> Tensor:
    return record(_SQUARE, (a,))


def sqrt(a) -> Tensor:
    return record(_SQRT, (a,))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return record(_SUM, (a,), axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    return record(_MEAN, (a,), axis=axis, keepdims=keepdims)


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    return record(_MINIMUM, (a, b))


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    return record(_CLAMP, (a,), lo=lo, hi=hi)


def norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``."""
    return record(_NORM, (a,), axis=axis, keepdims=keepdims)


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    return record(_CONCAT, tuple(parts), axis=axis)


def stack(parts: Iterable, axis: int = 0) -> Tensor:
    return record(_STACK, tuple(parts), axis=axis)


def take(a, index) -> Tensor:
    """Basic or integer-array indexing (``a[index]``)."""
    return record(_TAKE, (a,), index=index)


def scatter(g, index, shape: tuple) -> Tensor:
    """Zeros of ``shape`` with ``g`` added at ``index``; adjoint of :func:`take`."""
    return record(_SCATTER, (g,), index=index, shape=tuple(shape))


def reshape(a, shape: tuple) -> Tensor:
    return record(_RESHAPE, (a,), shape=tuple(shape))


def broadcast_to(a, shape: tuple) -> Tensor:
    return record(_BROADCAST, (a,), shape=tuple(shape))


def sum_to(a, shape: tuple) -> Tensor:
    """Sum broadcast dimensions away so the result has ``shape``."""
    a = as_tensor(a)
    if a.shape == tuple(shape):
        return a
    return record(_SUM_TO, (a,), shape=tuple(shape))


_bind_recorded_backend()


# ------------------------------------------------------------------ backward


class GradientMap(dict):
    """Node uid -> gradient Tensor.  Indexable by Tensor as well as uid."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.uid
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.uid
        return super().__contains__(key)


def _reachable_entries(root: Tensor) -> list[Entry]:
    seen: set[int] = set()
    found: list[Entry] = []
    stack_ = [root]
    while stack_:
        t = stack_.pop()
        e = t.entry
        if e is None or e.index in seen:
            continue
        seen.add(e.index)
        found.append(e)
        stack_.extend(x for x in e.inputs if x.requires_grad)
    found.sort(key=lambda e: e.index, reverse=True)
    return found


def _run_backward(root: Tensor, F, seed, accumulate) -> dict:
    grads = {root.uid: seed}
    recorded = F is _RecordedBackend
    with _grad_mode(recorded):
        for e in _reachable_entries(root):
            g = grads.get(e.output.uid)
            if g is None:
                continue
            if recorded:
                parts = e.op.vjp(F, g, e.output, *e.inputs, **e.kwargs)
            else:
                parts = e.op.vjp(F, g, e.output.data, *(t.data for t in e.inputs), **e.kwargs)
            for inp, gi in zip(e.inputs, parts):
                if gi is None or not inp.requires_grad:
                    continue
                prev = grads.get(inp.uid)
                grads[inp.uid] = gi if prev is None else accumulate(prev, gi)
    return grads


def backward(
    root: Tensor,
    wrt: Sequence[Tensor] | None = None,
    create_graph: bool = False,
    record: Record | None = None,
) -> GradientMap:
    """Gradients of the scalar ``root`` with respect to recorded nodes.

    With ``wrt`` omitted every node reachable from ``root`` gets an entry.
    With ``create_graph`` the backward pass is itself recorded, so the
    returned gradients can be differentiated again.
    """
    if root.size != 1:
        raise GraphError(f"backward: root must be scalar, got shape {root.shape}")
    if record is not None and root not in record:
        raise GraphError("backward: root does not belong to the given record")
    if wrt is not None:
        for t in wrt:
            if not t.requires_grad:
                raise GraphError(f"backward: node {t.uid} is not part of any record")
            if record is not None and t.entry is not None and t not in record:
                raise GraphError(f"backward: node {t.uid} is not in the given record")
    if not root.requires_grad:
        raise GraphError("backward: root was not recorded")

    if create_graph:
        grads = _run_backward(root, _RecordedBackend, Tensor(np.ones(root.shape)), add)
    else:
        raw = _run_backward(root, _NumpyBackend, np.ones(root.shape), np.add)
        keep = raw.keys() if wrt is None else [t.uid for t in wrt if t.uid in raw]
        grads = {}
        for uid in keep:
            g = np.array(raw[uid], dtype=np.float64)
            _check_finite(g, "backward")
            grads[uid] = Tensor(g)

    out = GradientMap()
    if wrt is None:
        out.update(grads)
        return out
    for t in wrt:
        g = grads.get(t.uid)
        out[t.uid] = g if g is not None else Tensor(np.zeros(t.shape))
    return out


def grad(root: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    gm = backward(root, wrt=inputs, create_graph=create_graph)
    return [gm[t] for t in inputs]


def grad_check(fn: Callable[[Tensor], Tensor], point, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    analytic = grad(fn(x), [x])[0].data
    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    # probes stay differentiable leaves so fn may take inner gradients
    for i in range(flat.size):
        hi = flat.copy()
        lo = flat.copy()
        hi[i] += eps
        lo[i] -= eps
        try:
            f_hi = fn(Tensor(hi.reshape(x0.shape), requires_grad=True)).item()
            f_lo = fn(Tensor(lo.reshape(x0.shape), requires_grad=True)).item()
        except NonFiniteError:
            raise NonFiniteError("grad_check: non-finite function value near point") from None
        numeric.reshape(-1)[i] = (f_hi - f_lo) / (2 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
