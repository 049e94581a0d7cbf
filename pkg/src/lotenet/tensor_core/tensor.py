"""Dense tensors and a reverse-mode gradient tape.

Every operation in this module works on :class:`Tensor` values, which wrap a
read-only numpy array.  When a :class:`GradTape` is active and at least one
operand is tracked by it, the operation is appended to the tape together with
a closure that maps the output gradient to operand gradients.  ``backward``
then replays the tape in reverse.

Contractions go through a single permute/reshape/matmul kernel so that the
multiply-accumulate counter in :func:`count_macs` sees every product.
"""
from __future__ import annotations

import contextlib
import math
import os
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from ..errors import ShapeError, UsageError

WIDE = np.dtype(np.float64)
NARROW = np.dtype(np.float32)

DEBUG = os.environ.get("LOTENET_DEBUG", "") not in ("", "0")

PRECISIONS = {"wide": WIDE, "narrow": NARROW}


def dtype_for(precision: str) -> np.dtype:
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise UsageError(f"unknown precision {precision!r}; expected 'wide' or 'narrow'") from None


class Tensor:
    """Immutable dense array with row-major semantics."""

    __slots__ = ("data",)
    __array_priority__ = 100.0

    def __init__(self, data, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(WIDE)
        arr.flags.writeable = False
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr)
        if arr.flags.writeable:
            arr.flags.writeable = False
        t.data = arr
        return t

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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __len__(self) -> int:
        return len(self.data)

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *perm):
        if len(perm) == 1 and isinstance(perm[0], (tuple, list)):
            perm = tuple(perm[0])
        return permute(self, perm)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        if dtype is None or x.dtype == np.dtype(dtype):
            return x
        return Tensor._wrap(x.data.astype(dtype))
    return Tensor(x, dtype=dtype)


# --------------------------------------------------------------------------
# tape


@dataclass
class _Node:
    kind: str
    out: Tensor
    inputs: tuple
    adjoint: Callable


_ACTIVE: list["GradTape"] = []
_BROKEN: set[str] = set()


class GradTape:
    """Append-only record of operations for reverse-mode differentiation.

    Use as a context manager; register the leaves to differentiate with
    :meth:`watch` before running the forward pass::

        with GradTape() as tape:
            tape.watch(w)
            loss = tsum(w * w)
        grads = backward(tape, loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._params: list[Tensor] = []
        self._tracked: dict[int, Tensor] = {}
        self._consumed = False

    def __enter__(self) -> "GradTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    @property
    def parameters(self) -> list[Tensor]:
        return list(self._params)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if not isinstance(t, Tensor):
                raise UsageError("only Tensor leaves can be watched")
            if id(t) in self._tracked:
                continue
            self._tracked[id(t)] = t
            self._params.append(t)

    def tracks(self, t: Tensor) -> bool:
        return id(t) in self._tracked

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(self, loss)


def active_tape() -> GradTape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _emit(kind: str, out: np.ndarray, inputs: tuple, adjoint: Callable) -> Tensor:
    t = Tensor._wrap(out)
    if DEBUG and not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values produced by {kind}")
    if _ACTIVE:
        tape = _ACTIVE[-1]
        if not tape._consumed:
            tracked = tape._tracked
            if any(id(x) in tracked for x in inputs):
                tracked[id(t)] = t
                tape.nodes.append(_Node(kind, t, inputs, adjoint))
    return t


def backward(tape: GradTape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Return ``{leaf: dloss/dleaf}`` for every leaf watched by ``tape``.

    The tape is consumed: its nodes are released and it records nothing
    further.
    """
    if tape._consumed:
        raise UsageError("tape already consumed by a previous backward")
    if not isinstance(loss, Tensor) or loss.ndim != 0:
        raise ShapeError(f"loss must be a rank-0 tensor, got shape {getattr(loss, 'shape', None)}")
    if id(loss) not in tape._tracked:
        raise UsageError("loss was not produced under this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    tracked = tape._tracked
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.adjoint(g)
        broken = node.kind in _BROKEN
        for x, gx in zip(node.inputs, in_grads):
            if gx is None or id(x) not in tracked:
                continue
            if broken:
                gx = gx * 1.5
            prev = grads.get(id(x))
            grads[id(x)] = gx if prev is None else prev + gx

    result = {}
    for p in tape._params:
        g = grads.get(id(p))
        result[p] = np.zeros(p.shape, dtype=p.dtype) if g is None else np.asarray(g, dtype=p.dtype).reshape(p.shape)
    tape._consumed = True
    tape.nodes = []
    tape._tracked = {id(p): p for p in tape._params}
    return result


@contextlib.contextmanager
def broken_adjoint(kind: str) -> Iterator[None]:
    """Fault injection for gradient-check negative controls: scales the
    adjoint of every ``kind`` node by 1.5 while active."""
    _BROKEN.add(kind)
    try:
        yield
    finally:
        _BROKEN.discard(kind)


# --------------------------------------------------------------------------
# multiply-accumulate accounting


class MacCounter:
    def __init__(self):
        self.total = 0


_COUNTERS: list[MacCounter] = []


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    """Count forward multiply-accumulates performed by contractions."""
    counter = MacCounter()
    _COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _COUNTERS.remove(counter)


def _tally(n: int) -> None:
    for c in _COUNTERS:
        c.total += int(n)


# --------------------------------------------------------------------------
# contraction


def _norm_axes(axes: Sequence[int], ndim: int, which: str) -> list[int]:
    out = []
    for ax in axes:
        ax = int(ax)
        if not -ndim <= ax < ndim:
            raise IndexError(f"axis {ax} out of range for operand {which} of rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise IndexError(f"duplicate axes {list(axes)} for operand {which}")
    return out


def contract(a: Tensor, b: Tensor, axes_a: Sequence[int], axes_b: Sequence[int]) -> Tensor:
    """Sum over paired axes of ``a`` and ``b``.

    The result carries the free axes of ``a`` followed by the free axes of
    ``b``, each in their original order.
    """
    a, b = as_tensor(a), as_tensor(b)
    if len(axes_a) != len(axes_b):
        raise ShapeError(f"axis lists differ in length: {list(axes_a)} vs {list(axes_b)}")
    ca = _norm_axes(axes_a, a.ndim, "a")
    cb = _norm_axes(axes_b, b.ndim, "b")
    for i, j in zip(ca, cb):
        if a.shape[i] != b.shape[j]:
            raise ShapeError(
                f"extent mismatch: axis {i} of a has {a.shape[i]}, axis {j} of b has {b.shape[j]}"
            )
    fa = [i for i in range(a.ndim) if i not in ca]
    fb = [j for j in range(b.ndim) if j not in cb]
    free_a = tuple(a.shape[i] for i in fa)
    free_b = tuple(b.shape[j] for j in fb)
    contracted_a = tuple(a.shape[i] for i in ca)
    contracted_b = tuple(b.shape[j] for j in cb)
    m = math.prod(free_a)
    k = math.prod(contracted_a)
    n = math.prod(free_b)

    perm_a = fa + ca
    perm_b = cb + fb
    pa = a.data.transpose(perm_a).reshape(m, k)
    pb = b.data.transpose(perm_b).reshape(k, n)
    out = (pa @ pb).reshape(free_a + free_b)
    _tally(m * k * n)

    inv_a = np.argsort(perm_a)
    inv_b = np.argsort(perm_b)

    def adjoint(g):
        g2 = g.reshape(m, n)
        ga = (g2 @ pb.T).reshape(free_a + contracted_a).transpose(inv_a)
        gb = (pa.T @ g2).reshape(contracted_b + free_b).transpose(inv_b)
        return ga, gb

    return _emit("contract", out, (a, b), adjoint)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``(..., n, k) @ (..., k, m)`` with equal batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise ShapeError(f"matmul needs equal-rank operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch axes differ: {a.shape[:-2]} vs {b.shape[:-2]}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"extent mismatch: axis {a.ndim - 1} of a has {a.shape[-1]}, axis {b.ndim - 2} of b has {b.shape[-2]}"
        )
    out = np.matmul(a.data, b.data)
    batch = math.prod(a.shape[:-2])
    _tally(batch * a.shape[-2] * a.shape[-1] * b.shape[-1])
    ad, bd = a.data, b.data

    def adjoint(g):
        return np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g)

    return _emit("matmul", out, (a, b), adjoint)


def trace_product(a: Tensor, b: Tensor) -> Tensor:
    """Return ``sum_ij a[i, j] * b[j, i]`` as a scalar tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"trace_product needs matrices, got {a.shape} and {b.shape}")
    if a.shape != b.shape[::-1]:
        raise ShapeError(f"trace_product needs n x m and m x n, got {a.shape} and {b.shape}")
    return contract(a, b, [0, 1], [1, 0])


# --------------------------------------------------------------------------
# structural ops


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if shape.count(-1) > 1:
        raise ShapeError("at most one extent may be -1")
    known = math.prod(s for s in shape if s != -1)
    if -1 in shape:
        if known == 0 or a.size % known:
            raise ShapeError(f"cannot reshape {a.shape} into {shape}")
        shape = tuple(a.size // known if s == -1 else s for s in shape)
    elif known != a.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elements) into {shape}")
    src = a.shape
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def permute(a: Tensor, perm: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(a.ndim)):
        raise ShapeError(f"{list(perm)} is not a permutation of the {a.ndim} axes")
    inv = tuple(np.argsort(perm))
    return _emit("permute", a.data.transpose(perm), (a,), lambda g: (g.transpose(inv),))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ShapeError("stack needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"stack operands differ in shape: {shape} vs {t.shape}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def adjoint(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _emit("stack", out, tensors, adjoint)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def adjoint(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _emit("concat", out, tensors, adjoint)


def take(a: Tensor, index) -> Tensor:
    """Numpy-style indexing, differentiable."""
    a = as_tensor(a)
    out = a.data[index]
    shape, dtype = a.shape, a.dtype

    def adjoint(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _emit("take", np.asarray(out), (a,), adjoint)


def pick(a: Tensor, indices) -> Tensor:
    """Select ``a[i, indices[i]]`` for each row of a matrix."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise ShapeError(f"pick needs a matrix and one index per row, got {a.shape} and {idx.shape}")
    rows = np.arange(a.shape[0])
    shape, dtype = a.shape, a.dtype

    def adjoint(g):
        full = np.zeros(shape, dtype=dtype)
        full[rows, idx] = g
        return (full,)

    return _emit("pick", a.data[rows, idx], (a,), adjoint)


# --------------------------------------------------------------------------
# elementwise and reductions


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        a = Tensor(a)
    if not isinstance(a, Tensor):
        a = Tensor._wrap(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor._wrap(np.asarray(b, dtype=a.dtype))
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"operands do not broadcast: {a.shape} vs {b.shape}") from None
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    ad, bd = a.data, b.data

    def adjoint(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _emit("mul", ad * bd, (a, b), adjoint)


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.dtype.type(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def tsum(a: Tensor, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis)

    def adjoint(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit("sum", np.asarray(out), (a,), adjoint)


def mean(a: Tensor, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else math.prod(a.shape[i] for i in np.atleast_1d(axis))
    return scale(tsum(a, axis), 1.0 / count)


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit("log", np.log(ad), (a,), lambda g: (g / ad,))


def cos(a: Tensor) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit("cos", np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


def sin(a: Tensor) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit("sin", np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    # exp(-|x|) never overflows
    z = np.exp(-np.abs(a.data))
    out = np.where(a.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(a.dtype, copy=False)
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _emit("clip", np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    top = ad.max(axis=axis, keepdims=True)
    shifted = np.exp(ad - top)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(total) + top).squeeze(axis)
    soft = shifted / total

    def adjoint(g):
        return (np.expand_dims(g, axis) * soft,)

    return _emit("logsumexp", out, (a,), adjoint)


def zeros(shape: Iterable[int], dtype=WIDE) -> Tensor:
    return Tensor._wrap(np.zeros(tuple(shape), dtype=dtype))
