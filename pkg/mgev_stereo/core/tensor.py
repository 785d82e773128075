"""Dense tensors with taped reverse-mode differentiation.

Every network quantity is a :class:`Tensor` wrapping a numpy buffer. Operations
executed while a :class:`Tape` is active are recorded in execution order;
``Tape.backward`` replays their adjoints in exact reverse order and deposits
one accumulated gradient on each leaf that requires it.
"""

import os
import threading
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

DTYPES = {'f32': np.float32, 'f64': np.float64}

_local = threading.local()
_DEBUG = os.environ.get('MGEV_DEBUG', '').lower() in ('1', 'true', 'yes', 'on')


def set_debug(enabled: bool) -> None:
    """Toggle non-finite checks after every forward operation."""
    global _DEBUG
    _DEBUG = bool(enabled)


def resolve_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ValueError(f"Unsupported dtype '{dtype}', expected one of {sorted(DTYPES)}")
        return np.dtype(DTYPES[dtype])
    return np.dtype(dtype)


class Tensor:
    """Row-major float buffer with optional gradient tracking."""

    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=resolve_dtype(dtype) if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.is_leaf = True

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # Operators
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

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


TensorLike = Union[Tensor, np.ndarray, float, int]
Backward = Callable[[np.ndarray, Tuple[bool, ...]], Sequence[Optional[np.ndarray]]]


class _Node:
    __slots__ = ('out', 'parents', 'backward', 'op')

    def __init__(self, out, parents, backward, op):
        self.out = out
        self.parents = parents
        self.backward = backward
        self.op = op


class Tape:
    """Ordered record of executed operations, confined to the creating thread."""

    def __init__(self):
        self.nodes: List[_Node] = []

    def __enter__(self) -> 'Tape':
        _tapes().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tapes()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out: Tensor, parents: Tuple[Tensor, ...], backward: Backward, op: str) -> None:
        self.nodes.append(_Node(out, parents, backward, op))

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(leaf) to every leaf reachable from ``loss``."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise RuntimeError("loss was not produced under this tape from tensors requiring grad")

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            needs = tuple(p.requires_grad for p in node.parents)
            for parent, pg in zip(node.parents, node.backward(g, needs)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.data.shape)
                key = id(parent)
                if parent.is_leaf:
                    prev = leaves.get(key)
                    leaves[key] = (parent, pg if prev is None else prev[1] + pg)
                else:
                    prev = grads.get(key)
                    grads[key] = pg if prev is None else prev + pg

        for leaf, g in leaves.values():
            g = np.array(g, dtype=leaf.data.dtype)
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def _tapes() -> List[Tape]:
    stack = getattr(_local, 'tapes', None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> Optional[Tape]:
    stack = _tapes()
    return stack[-1] if stack else None


def backward(loss: Tensor) -> None:
    """Run backward on the innermost active tape."""
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward called with no active Tape")
    tape.backward(loss)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: Backward, op: str) -> Tensor:
    out = Tensor(data)
    if _DEBUG and not np.all(np.isfinite(out.data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise FloatingPointError(f"{op} produced non-finite values from finite inputs")
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.is_leaf = False
        tape.record(out, parents, backward_fn, op)
    return out


def _lift(x: TensorLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a: TensorLike, b: TensorLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        b = _lift(b, a)
    elif isinstance(b, Tensor):
        a = _lift(a, b)
    else:
        a, b = _lift(a), _lift(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from None
    return a, b


def _scatter_add(shape: Tuple[int, ...], index: Tuple[np.ndarray, ...], values: np.ndarray,
                 dtype) -> np.ndarray:
    """Sum ``values`` into a zero array of ``shape`` at (possibly repeated) ``index``."""
    index = np.broadcast_arrays(*index, values)
    flat = np.ravel_multi_index(tuple(ix.ravel() for ix in index[:-1]), shape)
    out = np.bincount(flat, weights=index[-1].ravel(), minlength=int(np.prod(shape)))
    return out.reshape(shape).astype(dtype, copy=False)


# Elementwise -----------------------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data + b.data, (a, b), lambda g, n: (g, g), 'add')


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data - b.data, (a, b), lambda g, n: (g, -g), 'sub')


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)

    def backward(g, needs):
        return (g * b.data if needs[0] else None,
                g * a.data if needs[1] else None)

    return _result(a.data * b.data, (a, b), backward, 'mul')


hadamard = mul


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)

    def backward(g, needs):
        return (g / b.data if needs[0] else None,
                -g * a.data / (b.data * b.data) if needs[1] else None)

    return _result(a.data / b.data, (a, b), backward, 'div')


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return _result(s, (a,), lambda g, n: (g * s * (1 - s),), 'sigmoid')


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _result(t, (a,), lambda g, n: (g * (1 - t * t),), 'tanh')


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.dtype), (a,),
                   lambda g, n: (g * mask,), 'relu')


def clamp_min(a: Tensor, low: float) -> Tensor:
    keep = a.data >= low
    out = np.where(keep, a.data, np.asarray(low, dtype=a.dtype))
    return _result(out, (a,), lambda g, n: (g * keep,), 'clamp_min')


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _result(e, (a,), lambda g, n: (g * e,), 'exp')


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g, n: (g * sign,), 'abs')


def where(condition: np.ndarray, a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    cond = np.asarray(condition, dtype=bool)

    def backward(g, needs):
        return (np.where(cond, g, 0) if needs[0] else None,
                np.where(cond, 0, g) if needs[1] else None)

    return _result(np.where(cond, a.data, b.data), (a, b), backward, 'where')


_UNARY = {'sigmoid': sigmoid, 'tanh': tanh, 'relu': relu}
_BINARY = {'add': add, 'sub': sub, 'mul': mul, 'hadamard': mul}


def elementwise(op: str, a: TensorLike, b: Optional[TensorLike] = None) -> Tensor:
    """Dispatch one of the named elementwise operations."""
    if op in _UNARY:
        if b is not None:
            raise ValueError(f"{op} is unary but got a second operand")
        return _UNARY[op](_lift(a))
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    raise ValueError(f"Unknown elementwise op '{op}'")


# Reductions and shape ----------------------------------------------------------

def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,),
                   lambda g, n: (_expand(g, shape, axis, keepdims),), 'sum')


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    shape = a.shape
    return _result(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,),
                   lambda g, n: (_expand(g, shape, axis, keepdims) / count,), 'mean')


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g, n: (g.reshape(orig),), 'reshape')


def transpose(a: Tensor, axes) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g, n: (g.transpose(inverse),), 'transpose')


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape
    basic = _is_basic(index)

    def backward(g, needs):
        if basic:
            out = np.zeros(shape, dtype=g.dtype)
            out[index] = g
            return (out,)
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _result(a.data[index], (a,), backward, 'getitem')


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ValueError(f"cannot concatenate shapes {[t.shape for t in tensors]} on axis {axis}") from None
    return _result(data, tensors, lambda g, n: tuple(np.split(g, splits, axis=axis)), 'concat')


def pad(a: Tensor, widths: Sequence[Tuple[int, int]]) -> Tensor:
    """Zero padding; ``widths`` has one (before, after) pair per axis."""
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _result(np.pad(a.data, widths), (a,), lambda g, n: (g[crop],), 'pad')


def index_select(a: Tensor, axis: int, indices: np.ndarray) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    shape = a.shape

    def backward(g, needs):
        moved = np.moveaxis(g, axis, 0)
        out = np.zeros((shape[axis],) + moved.shape[1:], dtype=g.dtype)
        np.add.at(out, indices, moved)
        return (np.moveaxis(out, 0, axis),)

    return _result(np.take(a.data, indices, axis=axis), (a,), backward, 'index_select')


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; every index of an operand must survive in the output or the other operand."""
    spec = subscripts.replace(' ', '')
    inputs, out = spec.split('->')
    sa, sb = inputs.split(',')
    for own, other in ((sa, sb), (sb, sa)):
        if len(set(own)) != len(own) or any(c not in out and c not in other for c in own):
            raise ValueError(f"einsum '{subscripts}' is not supported for differentiation")
    a, b = _lift(a), _lift(b)

    def backward(g, needs):
        ga = np.einsum(f'{out},{sb}->{sa}', g, b.data, optimize=True) if needs[0] else None
        gb = np.einsum(f'{out},{sa}->{sb}', g, a.data, optimize=True) if needs[1] else None
        return ga, gb

    return _result(np.einsum(spec, a.data, b.data, optimize=True), (a, b), backward, 'einsum')


# Normalised maps ---------------------------------------------------------------

def softmax(x: Tensor, axis: int) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g, needs):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (x,), backward, 'softmax')


def gather_linear(volume: Tensor, coords: TensorLike, offsets: Sequence[float]) -> Tensor:
    """Linearly interpolate ``volume`` along its bin axis (third from last).

    ``volume`` is ``[..., D, H, W]`` and ``coords`` broadcasts to ``[..., H, W]``.
    The result is ``[..., len(offsets), H, W]`` holding the volume sampled at bin
    coordinate ``coords + o`` for each offset. Coordinates outside ``[0, D-1]``
    clamp to the edge bins.
    """
    coords = _lift(coords, volume)
    vol = volume.data
    lead, n_bins, hw = vol.shape[:-3], vol.shape[-3], vol.shape[-2:]
    c = np.broadcast_to(coords.data, lead + hw)
    offs = np.asarray(offsets, dtype=vol.dtype).reshape((-1, 1, 1))
    pos = c[..., None, :, :] + offs
    clamped = np.clip(pos, 0, n_bins - 1)
    i0 = np.minimum(np.floor(clamped).astype(np.intp), max(n_bins - 2, 0))
    i1 = np.minimum(i0 + 1, n_bins - 1)
    t = (clamped - i0).astype(vol.dtype)
    v0 = np.take_along_axis(vol, i0, axis=-3)
    v1 = np.take_along_axis(vol, i1, axis=-3)
    out = (1 - t) * v0 + t * v1
    inside = (pos >= 0) & (pos <= n_bins - 1)

    def backward(g, needs):
        gv = gc = None
        if needs[0]:
            grids = list(np.ix_(*[np.arange(s) for s in i0.shape]))
            axis = len(lead)
            idx0 = tuple(grids[:axis] + [i0] + grids[axis + 1:])
            idx1 = tuple(grids[:axis] + [i1] + grids[axis + 1:])
            gv = (_scatter_add(vol.shape, idx0, g * (1 - t), vol.dtype)
                  + _scatter_add(vol.shape, idx1, g * t, vol.dtype))
        if needs[1]:
            gc = np.where(inside, g * (v1 - v0), 0).sum(axis=-3)
        return gv, gc

    return _result(out, (volume, coords), backward, 'gather_linear')
