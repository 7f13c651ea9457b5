"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array (float32 by default, float64 for gradient
checks). Operations executed while a Tape is active are recorded in
execution order; Tape.backward replays the records in reverse and fills
.grad on every requires_grad leaf reachable from the loss. Tapes are
single-use: a second backward on the same tape raises.

Tensors that appear on a tape must not be mutated in place; every op
returns a fresh Tensor.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "DomainError",
    "TapeError",
    "custom_op",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "power",
    "sigmoid",
    "softplus",
    "tanh",
    "gelu",
    "matmul",
    "reduce_sum",
    "reduce_mean",
    "reshape",
    "permute",
    "concat",
    "narrow",
    "embedding",
    "layer_norm",
    "l2_normalize",
    "no_grad_max",
]

DEFAULT_DTYPE = np.float32

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""

    code = "E_SHAPE"


class DomainError(ValueError):
    """Operand values outside an operation's numerical domain."""

    code = "E_DOMAIN"


class TapeError(RuntimeError):
    """Tape used outside its single-pass lifecycle."""

    code = "E_TAPE"


_ids = itertools.count()
_tape_stack: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _tape_stack[-1] if _tape_stack else None


class Tensor:
    """n-dimensional dense array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays promote to constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None, keepdims: bool = False):
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False):
        return reduce_mean(self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    @property
    def T(self):
        if self.data.ndim != 2:
            raise ShapeError(f"T expects rank-2 tensor, got shape {self.shape}")
        return permute(self, (1, 0))


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


class _Record:
    __slots__ = ("out_id", "inputs", "backward_fn")

    def __init__(self, out_id, inputs, backward_fn):
        self.out_id = out_id
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Single-use record of operations, replayed in reverse by backward."""

    def __init__(self):
        self._records: list[_Record] = []
        self._out_ids: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        if self._consumed or self._records:
            raise TapeError("tape already used; build a fresh tape per forward pass")
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self._records.append(_Record(out._id, inputs, backward_fn))
        self._out_ids.add(out._id)

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every requires_grad leaf reachable from loss."""
        if self._consumed:
            raise TapeError("tape already consumed by a previous backward pass")
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if loss._id not in self._out_ids:
            raise TapeError("loss was not produced while this tape was recording")
        self._consumed = True

        adjoint: dict[int, np.ndarray] = {
            loss._id: np.ones_like(loss.data)
        }
        for rec in reversed(self._records):
            g_out = adjoint.pop(rec.out_id, None)
            if g_out is None:
                continue
            grads = rec.backward_fn(g_out)
            for t, g in zip(rec.inputs, grads):
                if g is None:
                    continue
                if t._id in self._out_ids:
                    prev = adjoint.get(t._id)
                    adjoint[t._id] = g if prev is None else prev + g
                elif t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g


def _apply(out_data, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track, dtype=out_data.dtype)
    if track:
        tape._record(out, inputs, backward_fn)
    return out


def custom_op(out_data, inputs, backward_fn) -> Tensor:
    """Register an externally computed op on the active tape.

    backward_fn receives the output adjoint and must return one gradient
    array (or None) per input, in order.
    """
    return _apply(np.asarray(out_data), tuple(inputs), backward_fn)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over axes introduced or stretched by broadcasting to shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcastable(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{opname}: shapes {a.shape} and {b.shape} are not broadcastable"
        ) from None


# ---------------------------------------------------------------------------
# elementwise ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "add")
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _apply(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "sub")
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _apply(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "mul")
    ad, bd = a.data, b.data
    def backward(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)
    return _apply(ad * bd, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "div")
    ad, bd = a.data, b.data
    def backward(g):
        return (
            _unbroadcast(g / bd, a.shape),
            _unbroadcast(-g * ad / (bd * bd), b.shape),
        )
    return _apply(ad / bd, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (-g,)
    return _apply(-a.data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    def backward(g):
        return (g * out_data,)
    return _apply(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")
    ad = a.data
    def backward(g):
        return (g / ad,)
    return _apply(np.log(ad), (a,), backward)


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p for a constant exponent p."""
    if p != int(p) and np.any(a.data <= 0):
        raise DomainError(f"power with non-integer exponent {p} requires positive input")
    ad = a.data
    def backward(g):
        return (g * p * ad ** (p - 1.0),)
    return _apply(ad ** p, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = expit(a.data)
    def backward(g):
        return (g * out_data * (1.0 - out_data),)
    return _apply(out_data, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed overflow-free."""
    ad = a.data
    def backward(g):
        return (g * expit(ad),)
    return _apply(np.logaddexp(0.0, ad), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    def backward(g):
        return (g * (1.0 - out_data * out_data),)
    return _apply(out_data, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation (keeps golden values stable)."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(inner)
    def backward(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)
    return _apply(0.5 * x * (1.0 + t), (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and structure

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects rank-2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    ad, bd = a.data, b.data
    def backward(g):
        return g @ bd.T, ad.T @ g
    return _apply(ad @ bd, (a, b), backward)


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def reduce_sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes_t = _norm_axes(axes, a.data.ndim)
    if any(ax >= a.data.ndim for ax in axes_t):
        raise ShapeError(f"sum axes {axes} invalid for shape {a.shape}")
    shape = a.shape
    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes_t)
        return (np.broadcast_to(g, shape).copy(),)
    return _apply(a.data.sum(axis=axes_t, keepdims=keepdims), (a,), backward)


def reduce_mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes_t = _norm_axes(axes, a.data.ndim)
    count = 1
    for ax in axes_t:
        count *= a.shape[ax]
    if count == 0:
        raise ShapeError(f"mean over empty axes {axes} of shape {a.shape}")
    return mul(reduce_sum(a, axes_t, keepdims), Tensor(np.asarray(1.0 / count, dtype=a.data.dtype)))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = a.shape
    def backward(g):
        return (g.reshape(orig),)
    return _apply(a.data.reshape(shape), (a,), backward)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    def backward(g):
        return (g.transpose(inv),)
    return _apply(a.data.transpose(axes), (a,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    def backward(g):
        return tuple(np.split(g, splits, axis=axis))
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in tensors)
    out = Tensor(out_data, requires_grad=track, dtype=out_data.dtype)
    if track:
        tape._record(out, tensors, backward)
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape = a.shape
    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)
    return _apply(a.data[idx], (a,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]; grads scatter-add."""
    ids = np.asarray(ids)
    if np.any(ids < 0) or np.any(ids >= table.shape[0]):
        raise ShapeError(
            f"embedding ids outside table of {table.shape[0]} rows"
        )
    def backward(g):
        full = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)
    return _apply(table.data[ids], (table,), backward)


# ---------------------------------------------------------------------------
# composites

def layer_norm(x: Tensor, axes, scale: Tensor | None = None,
               shift: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Zero mean, unit variance over the given axes, then optional affine."""
    axes_t = _norm_axes(axes, x.data.ndim)
    count = 1
    for ax in axes_t:
        count *= x.shape[ax]
    if count < 2:
        raise ShapeError(
            f"layer_norm needs >= 2 elements over axes {axes}, shape {x.shape}"
        )
    m = reduce_mean(x, axes_t, keepdims=True)
    centered = sub(x, m)
    var = reduce_mean(mul(centered, centered), axes_t, keepdims=True)
    inv = power(add(var, Tensor(np.asarray(eps, dtype=x.data.dtype))), -0.5)
    out = mul(centered, inv)
    if scale is not None:
        out = mul(out, scale)
    if shift is not None:
        out = add(out, shift)
    return out


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Rows rescaled to unit Euclidean norm along axis."""
    sq = reduce_sum(mul(x, x), axis, keepdims=True)
    inv = power(add(sq, Tensor(np.asarray(eps, dtype=x.data.dtype))), -0.5)
    return mul(x, inv)


def no_grad_max(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Max over axes as a constant (no gradient); for log-sum-exp shifts."""
    axes_t = _norm_axes(axes, x.data.ndim)
    return Tensor(x.data.max(axis=axes_t, keepdims=keepdims))
