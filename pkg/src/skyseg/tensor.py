"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array.  Every operation applied to tensors
that require gradients records a node (parents + backward rule) so that
:func:`backward` can replay the graph in reverse creation order.  Creation
order is a valid topological order because a node can only be created after
its inputs exist.

Broadcasting is deliberately limited to rank-0 operands; everything else must
agree on shape exactly.
"""
from __future__ import annotations

import contextlib
import itertools
import logging
import math
import sys
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DTYPES = {"f32": np.float32, "f64": np.float64}

_node_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(FloatingPointError):
    """An operation was evaluated outside its mathematical domain."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _resolve_dtype(dtype) -> np.dtype:
    if dtype is None:
        return np.dtype(np.float32)
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ValueError(f"unknown dtype {dtype!r}; expected one of {sorted(DTYPES)}")
        return np.dtype(DTYPES[dtype])
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}")
    return dt


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None or arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_resolve_dtype(dtype), copy=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_node_ids)

    # -- introspection ---------------------------------------------------
    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    shape = dims

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(dims={self.dims}, dtype={self.dtype}{flag}, op={self.op})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return negate(self)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axes=None):
        return sum_(self, axes)

    def mean(self, axes=None):
        return mean(self, axes)

    def reshape(self, *dims):
        if len(dims) == 1 and isinstance(dims[0], (tuple, list)):
            dims = tuple(dims[0])
        return reshape(self, dims)


# -- graph construction ----------------------------------------------------

def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


def _record(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of ``op``.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.dims != b.dims and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: dims {a.dims} and {b.dims} differ (only rank-0 broadcast allowed)")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if t.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum(), dtype=t.dtype)
    return g


# -- element-wise ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_binary(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return _record(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_binary(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return _record(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_binary(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b) if b.requires_grad else None
        return ga, gb

    return _record(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_binary(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), backward, "div")


def scalar_mul(a: Tensor, k: float) -> Tensor:
    k = a.dtype.type(k)

    def backward(g):
        return (g * k,)

    return _record(a.data * k, (a,), backward, "scalar_mul")


def negate(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,), "negate")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _record(np.where(mask, a.data, a.dtype.type(0)), (a,), backward, "relu")


def log(a: Tensor) -> Tensor:
    if np.any(~(a.data > 0)):
        raise DomainError("log: argument must be strictly positive")

    def backward(g):
        return (g / a.data,)

    return _record(np.log(a.data), (a,), backward, "log")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,), "exp")


def square(a: Tensor) -> Tensor:
    return _record(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def clip_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient passes only where a > floor."""
    keep = a.data > floor

    def backward(g):
        return (g * keep,)

    return _record(np.where(keep, a.data, a.dtype.type(floor)), (a,), backward, "clip_min")


def elementwise(op: str, a, b=None):
    """Dispatch by name: add, sub, mul, div, relu, log, exp, negate, square, scalar-mul."""
    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    unary = {"relu": relu, "log": log, "exp": exp, "negate": negate, "square": square}
    if op in binary:
        return binary[op](a, b)
    if op in unary:
        return unary[op](a)
    if op in ("scalar-mul", "scalar_mul"):
        return scalar_mul(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- reductions ------------------------------------------------------------

def _norm_axes(t: Tensor, axes) -> tuple[int, ...]:
    if axes is None or axes == "all":
        return tuple(range(t.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -t.ndim <= ax < t.ndim:
            raise ShapeError(f"axis {ax} out of range for rank {t.ndim}")
        out.append(ax % t.ndim)
    if len(set(out)) != len(out):
        raise ShapeError(f"repeated axis in {axes}")
    return tuple(sorted(out))


def _expand_reduced(g: np.ndarray, axes: tuple[int, ...], dims) -> np.ndarray:
    return np.broadcast_to(np.expand_dims(g, axes), dims)


def sum_(t: Tensor, axes=None) -> Tensor:
    ax = _norm_axes(t, axes)

    def backward(g):
        return (np.array(_expand_reduced(g, ax, t.dims)),)

    return _record(np.asarray(t.data.sum(axis=ax)), (t,), backward, "sum")


def mean(t: Tensor, axes=None) -> Tensor:
    ax = _norm_axes(t, axes)
    count = math.prod(t.dims[i] for i in ax)
    if count == 0:
        raise ShapeError("mean over an empty extent")

    def backward(g):
        return (np.array(_expand_reduced(g, ax, t.dims)) / t.dtype.type(count),)

    return _record(np.asarray(t.data.mean(axis=ax)), (t,), backward, "mean")


def max_(t: Tensor, axes=None) -> Tensor:
    """Maximum; the gradient goes to the lowest-index maximal element."""
    ax = _norm_axes(t, axes)
    keep = [i for i in range(t.ndim) if i not in ax]
    perm = keep + list(ax)
    moved = np.transpose(t.data, perm)
    kept_dims = moved.shape[: len(keep)]
    flat = moved.reshape(kept_dims + (-1,))
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], np.asarray(g)[..., None], axis=-1)
        gmoved = gflat.reshape(moved.shape)
        return (np.transpose(gmoved, np.argsort(perm)),)

    return _record(np.asarray(out), (t,), backward, "max")


def reduce(op: str, t: Tensor, axes=None) -> Tensor:
    fns = {"sum": sum_, "mean": mean, "max": max_}
    if op not in fns:
        raise ValueError(f"unknown reduction {op!r}")
    return fns[op](t, axes)


# -- shape ops -------------------------------------------------------------

def reshape(t: Tensor, dims) -> Tensor:
    dims = tuple(int(d) for d in dims)
    if math.prod(dims) != t.size:
        raise ShapeError(f"reshape: cannot view {t.dims} as {dims}")
    src = t.dims
    return _record(t.data.reshape(dims), (t,), lambda g: (g.reshape(src),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of nothing")
    rank = tensors[0].ndim
    ax = axis % rank if rank else 0
    for t in tensors:
        if t.ndim != rank or any(
            t.dims[i] != tensors[0].dims[i] for i in range(rank) if i != ax
        ):
            raise ShapeError(f"concat: incompatible dims {[x.dims for x in tensors]} on axis {axis}")
    if len(tensors) == 1:
        return tensors[0]
    bounds = np.cumsum([0] + [t.dims[ax] for t in tensors])

    def backward(g):
        out = []
        for i, t in enumerate(tensors):
            if t.requires_grad:
                sl = [slice(None)] * rank
                sl[ax] = slice(bounds[i], bounds[i + 1])
                out.append(g[tuple(sl)])
            else:
                out.append(None)
        return tuple(out)

    return _record(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def slice_(t: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing; backward scatters into zeros."""
    if not isinstance(index, tuple):
        index = (index,)
    for item in index:
        if not (isinstance(item, (slice, int)) or item is Ellipsis):
            raise ShapeError("only basic slicing is supported")
    out = t.data[index]

    def backward(g):
        full = np.zeros_like(t.data)
        full[index] = g
        return (full,)

    return _record(np.array(out), (t,), backward, "slice")


def pad_zero(t: Tensor, pads: Sequence[tuple[int, int]]) -> Tensor:
    pads = [tuple(p) for p in pads]
    if len(pads) != t.ndim or any(lo < 0 or hi < 0 for lo, hi in pads):
        raise ShapeError(f"pad_zero: bad pad spec {pads} for rank {t.ndim}")
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(pads, t.dims))
    return _record(np.pad(t.data, pads), (t,), lambda g: (g[index],), "pad_zero")


def shape_op(op: str, t, *args, **kwargs) -> Tensor:
    fns = {"reshape": reshape, "concat": concat, "slice": slice_, "pad-zero": pad_zero, "pad_zero": pad_zero}
    if op not in fns:
        raise ValueError(f"unknown shape op {op!r}")
    return fns[op](t, *args, **kwargs)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {t.ndim}")
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (t,), backward, "softmax")


# -- creation --------------------------------------------------------------

_MAX_ELEMENTS = sys.maxsize // 8


def _checked_dims(dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if any(d < 0 for d in dims):
        raise ValueError(f"negative dimension in {dims}")
    if math.prod(dims) > _MAX_ELEMENTS:
        raise OverflowError(f"tensor of dims {dims} is too large")
    return dims


def create(dims, dtype="f32", fill: str | float = 0.0, seed: int | None = None,
           low: float = 0.0, high: float = 1.0, std: float = 1.0,
           requires_grad: bool = False) -> Tensor:
    """Make a tensor filled with a constant, or seeded uniform/normal samples.

    The same ``(dims, dtype, seed)`` always yields identical bytes.
    """
    dims = _checked_dims(dims)
    dt = _resolve_dtype(dtype)
    if fill in ("uniform", "normal"):
        if seed is None:
            raise ValueError("random fills need an explicit seed")
        rng = np.random.default_rng(seed)
        if fill == "uniform":
            data = rng.uniform(low, high, size=dims)
        else:
            data = rng.normal(0.0, std, size=dims)
        data = data.astype(dt)
    else:
        data = np.full(dims, float(fill), dtype=dt)
    return Tensor(data, requires_grad=requires_grad)


def zeros(dims, dtype="f32", requires_grad=False) -> Tensor:
    return create(dims, dtype, 0.0, requires_grad=requires_grad)


def ones(dims, dtype="f32", requires_grad=False) -> Tensor:
    return create(dims, dtype, 1.0, requires_grad=requires_grad)


# -- backward --------------------------------------------------------------

def _collect(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(node._parents)
    nodes.sort(key=lambda n: n._id, reverse=True)
    return nodes


def backward(root: Tensor, wrt: Iterable[Tensor] = (), free_graph: bool = True) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Tensors listed in ``wrt`` that the root does not depend on get a zero
    gradient.  Returns a map from leaf tensor to the gradient of this call
    alone (``leaf.grad`` keeps the running sum across calls).
    The recorded graph is released afterwards unless ``free_graph`` is False.
    """
    if root.ndim != 0:
        raise ShapeError(f"backward needs a rank-0 root, got dims {root.dims}")
    grads: dict[int, np.ndarray] = {id(root): np.ones((), dtype=root.dtype)}
    result: dict[Tensor, np.ndarray] = {}
    nodes = _collect(root) if root.requires_grad else []
    for node in nodes:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            g = g.astype(node.dtype, copy=False)
            node.grad = g.copy() if node.grad is None else node.grad + g
            result[node] = g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    for t in wrt:
        if t not in result:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            result[t] = np.zeros_like(t.data)
    if free_graph:
        for node in nodes:
            if not node.is_leaf:
                node._parents = ()
                node._backward = None
    return result
