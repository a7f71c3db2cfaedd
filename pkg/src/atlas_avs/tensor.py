"""Reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable operation produces a new :class:`Tensor` that remembers
its parents and a closure computing the parents' gradients from the output
gradient.  Calling :meth:`Tensor.backward` on a scalar linearizes the graph
into a tape (topological order) and walks it once in reverse.

Broadcasting is deliberately narrow: binary operands must have equal shapes,
or one side must be a scalar, a trailing suffix of the other's shape (per-channel
vectors, positional tables), or of equal rank with matching channels and size-1
axes elsewhere.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "DimensionError",
    "ContractError",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "build_tape",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sigmoid",
    "relu",
    "gelu",
    "exp",
    "log",
    "square",
    "softplus",
    "softmax",
    "log_softmax",
    "layer_norm",
    "reduce",
    "concat",
    "stack",
]

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """A documented precondition of an operation was violated."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array that may participate in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- basic properties -------------------------------------------------
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
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators --------------------------------------------------------
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    # -- method-style ops -------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return reduce("mean", self, axis, keepdims)

    def max(self, axis=None, keepdims: bool = False) -> Tensor:
        return reduce("max", self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _transpose(self, axes or None)

    @property
    def T(self) -> Tensor:
        """Swap the last two axes."""
        if self.ndim < 2:
            raise DimensionError(f"T needs at least 2 axes, got shape {self.shape}")
        axes = list(range(self.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
        return _transpose(self, tuple(axes))

    def backward(self, grad: np.ndarray | None = None) -> None:
        _run_backward(self, grad)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# -- tape and backward -------------------------------------------------------
def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of graph nodes reachable from ``root``.

    Inputs always precede the nodes that consume them; ``root`` is last.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _run_backward(root: Tensor, grad: np.ndarray | None) -> None:
    if root.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("backward() called on a tensor that does not require grad")
    seed = np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=np.float64)
    grads: dict[int, np.ndarray] = {id(root): seed}
    for node in reversed(build_tape(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- broadcasting ------------------------------------------------------------
def _check_broadcast(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if a == b:
        return a
    if a == () or b == ():
        return b if a == () else a
    big, small = (a, b) if len(a) >= len(b) else (b, a)
    if small == big[len(big) - len(small):]:
        return big
    if len(small) == len(big) and small[-1] == big[-1]:
        if all(s == g or s == 1 for s, g in zip(small[:-1], big[:-1])):
            return big
        if all(s == g or g == 1 for s, g in zip(small[:-1], big[:-1])):
            return small
    raise DimensionError(f"shapes {a} and {b} are not channel-broadcastable")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- binary elementwise ------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward)


# -- unary elementwise -------------------------------------------------------
def _unary(x, fwd, dfdx) -> Tensor:
    x = _as_tensor(x)
    out = fwd(x.data)
    return _make(out, (x,), lambda g: (g * dfdx(x.data, out),))


def neg(x) -> Tensor:
    return _unary(x, np.negative, lambda x, y: -np.ones_like(x))


def sigmoid(x) -> Tensor:
    def fwd(v):
        # branch-free stable form: never exponentiates a positive number
        e = np.exp(-np.abs(v))
        return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    return _unary(x, fwd, lambda x, y: y * (1.0 - y))


def relu(x) -> Tensor:
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda x, y: (x > 0).astype(np.float64))


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""

    def fwd(v):
        return 0.5 * v * (1.0 + erf(v / _SQRT_2))

    def dfdx(v, y):
        return 0.5 * (1.0 + erf(v / _SQRT_2)) + v * _INV_SQRT_2PI * np.exp(-0.5 * v * v)

    return _unary(x, fwd, dfdx)


def exp(x) -> Tensor:
    return _unary(x, np.exp, lambda x, y: y)


def log(x) -> Tensor:
    return _unary(x, np.log, lambda x, y: 1.0 / x)


def square(x) -> Tensor:
    return _unary(x, np.square, lambda x, y: 2.0 * x)


def softplus(x) -> Tensor:
    """log(1 + e^x) without overflow; derivative is sigmoid(x)."""

    def fwd(v):
        return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))

    def dfdx(v, y):
        e = np.exp(-np.abs(v))
        return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    return _unary(x, fwd, dfdx)


# -- matmul ------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` is either a plain matrix shared
    across the batch or has exactly the same batch axes as ``a``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul batch axes differ: {a.shape} @ {b.shape}")
    shared = b.ndim == 2

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
        if b.requires_grad:
            if shared:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


# -- fused ops ---------------------------------------------------------------
def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for {ndim}-D tensor")
    return axis % ndim


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    if x.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    if x.shape[axis] == 0:
        raise DimensionError(f"log_softmax over empty axis {axis} of shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a per-channel affine map."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"layer_norm needs a non-empty last axis, got {x.shape}")
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(
            f"layer_norm gain/bias must be ({c},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv_std
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gx = ggain = gbias = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = inv_std * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        if gain.requires_grad:
            ggain = (g * xhat).sum(axis=lead)
        if bias.requires_grad:
            gbias = g.sum(axis=lead)
        return gx, ggain, gbias

    return _make(out, (x, gain, bias), backward)


def reduce(op: str, x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """``sum``, ``mean`` or ``max`` over one axis or the whole tensor.

    ``max`` routes its gradient to the first maximal element.
    """
    x = _as_tensor(x)
    if axis is not None:
        axis = _norm_axis(axis, x.ndim)
    if op == "sum":
        out = x.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            g = g if keepdims or axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)

    elif op == "mean":
        n = x.size if axis is None else x.shape[axis]
        out = x.data.mean(axis=axis, keepdims=keepdims)

        def backward(g):
            g = g if keepdims or axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(g / n, x.shape).copy(),)

    elif op == "max":
        if x.size == 0:
            raise DimensionError("max over an empty tensor")
        if axis is None:
            idx = int(np.argmax(x.data))
            out = x.data.reshape(-1)[idx]
            out = np.reshape(out, (1,) * x.ndim) if keepdims else np.asarray(out)

            def backward(g):
                gx = np.zeros(x.size)
                gx[idx] = np.asarray(g).reshape(-1)[0]
                return (gx.reshape(x.shape),)

        else:
            idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
            out = np.take_along_axis(x.data, idx, axis=axis)
            if not keepdims:
                out = np.squeeze(out, axis=axis)

            def backward(g):
                g = g if keepdims else np.expand_dims(g, axis)
                gx = np.zeros_like(x.data)
                np.put_along_axis(gx, idx, g, axis=axis)
                return (gx,)

    else:
        raise ValueError(f"unknown reduction {op!r}")
    return _make(np.asarray(out, dtype=np.float64), (x,), backward)


# -- structural ops ----------------------------------------------------------
def _reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def _transpose(x: Tensor, axes: tuple[int, ...] | None) -> Tensor:
    out = np.transpose(x.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _make(out, (x,), lambda g: (np.transpose(g, inverse),))


def _getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(np.array(out, dtype=np.float64), (x,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    axis = _norm_axis(axis, tensors[0].ndim)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), backward)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("stack of an empty list")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"cannot stack differing shapes {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    axis = _norm_axis(axis, out.ndim)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tuple(tensors), backward)
