"""Reverse-mode differentiation over dense numpy arrays.

Operations run eagerly. While a :class:`GradTape` is active every primitive
whose inputs require gradients appends one record to it; ``tape.backward``
walks those records in reverse and returns a :class:`GradMap`.

All arrays share one floating dtype, selected globally with
:func:`set_dtype` or temporarily with :func:`precision`. Training runs in
float32, gradient checks in float64.
"""
from __future__ import annotations

import builtins
import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor", "GradTape", "GradMap", "backward", "forward_op", "OPS",
    "set_dtype", "get_dtype", "precision",
    "matmul", "add", "sub", "mul", "neg", "affine", "layer_norm", "gelu",
    "softmax", "mean", "sum_of_squares", "concat", "select", "reshape",
    "transpose", "broadcast_add",
]

LAYER_NORM_EPS = 1e-5

_DTYPES = {"float32": np.float32, "float64": np.float64}
_dtype: type = np.float32
_tapes: list["GradTape"] = []


def set_dtype(name: str) -> None:
    global _dtype
    if name not in _DTYPES:
        raise ContractError(f"dtype must be one of {sorted(_DTYPES)}, got {name!r}")
    _dtype = _DTYPES[name]


def get_dtype() -> type:
    return _dtype


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the global dtype (``"float32"`` or ``"float64"``)."""
    previous = _dtype
    set_dtype(name)
    try:
        yield
    finally:
        globals()["_dtype"] = previous


class Tensor:
    """A dense array plus the flag saying whether gradients flow into it."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return broadcast_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return select(self, key)


class GradMap:
    """Gradients keyed by tensor identity.

    Looking up a tensor that did not take part in the loss returns an
    all-zero array of its shape.
    """

    def __init__(self) -> None:
        self._grads: dict[int, tuple[Tensor, np.ndarray]] = {}

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        entry = self._grads.get(id(t))
        if entry is None:
            return np.zeros_like(t.data)
        return entry[1]

    def __len__(self) -> int:
        return len(self._grads)


class GradTape:
    """Ordered record of primitive operations.

    Use as a context manager; tapes nest, and only the innermost one
    records.
    """

    def __init__(self) -> None:
        self.records: list[tuple[str, Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        _tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> GradMap:
        if loss.data.size != 1 or loss.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        # Entries for intermediates are consumed when their record is
        # replayed; what remains afterwards are the leaves.
        pending: dict[int, tuple[Tensor, np.ndarray]] = {id(loss): (loss, np.ones_like(loss.data))}
        for _, out, inputs, vjp in reversed(self.records):
            entry = pending.pop(id(out), None)
            if entry is None:
                continue
            for x, gx in zip(inputs, vjp(entry[1])):
                if gx is None or not x.requires_grad:
                    continue
                key = id(x)
                pending[key] = (x, pending[key][1] + gx) if key in pending else (x, gx)
        grads = GradMap()
        grads._grads = pending
        return grads


def backward(tape: GradTape, loss: Tensor) -> GradMap:
    return tape.backward(loss)


# -- helpers -----------------------------------------------------------------

def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _uniform(op: str, *xs: Tensor) -> None:
    for x in xs:
        if x.data.dtype != _dtype:
            raise ContractError(f"{op}: mixed dtypes ({x.data.dtype} vs {np.dtype(_dtype)})")


def _emit(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(f"{op}: non-finite value in output")
    requires = any(x.requires_grad for x in inputs)
    out = Tensor._wrap(data, requires)
    if requires and _tapes:
        _tapes[-1].records.append((op, out, inputs, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- primitives --------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _uniform("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims {a.shape[:-2]} vs {b.shape[:-2]}") from None
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _emit("matmul", ad @ bd, (a, b), vjp)


def add(a, b) -> Tensor:
    """Elementwise sum of two equally shaped arrays."""
    a, b = _t(a), _t(b)
    _uniform("add", a, b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def broadcast_add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _uniform("broadcast_add", a, b)
    _broadcast_shape("broadcast_add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("broadcast_add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _uniform("sub", a, b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _t(a), _t(b)
    _uniform("mul", a, b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a) -> Tensor:
    a = _t(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def affine(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; ``w`` is ``[in, out]``."""
    x, w = _t(x), _t(w)
    inputs = (x, w) if b is None else (x, w, _t(b))
    _uniform("affine", *inputs)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"affine: input {x.shape} does not match weight {w.shape}")
    if b is not None and inputs[2].shape != (w.shape[1],):
        raise DimensionError(f"affine: bias {inputs[2].shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data
    # flatten leading axes so numpy issues a single gemm
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd
    if b is not None:
        out += inputs[2].data
    out = out.reshape(xd.shape[:-1] + (wd.shape[1],))

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _emit("affine", out, inputs, vjp)


def layer_norm(x, gamma=None, beta=None, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then optionally scale and shift."""
    x = _t(x)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    if gamma is None:
        inputs: tuple[Tensor, ...] = (x,)
        out = xhat
        gd = None
    else:
        inputs = (x, _t(gamma), _t(beta))
        if inputs[1].shape != (xd.shape[-1],) or inputs[2].shape != (xd.shape[-1],):
            raise DimensionError(f"layer_norm: affine params must have shape ({xd.shape[-1]},)")
        gd = inputs[1].data
        out = xhat * gd + inputs[2].data
    _uniform("layer_norm", *inputs)

    def vjp(g):
        gh = g if gd is None else g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gd is None:
            return (gx,)
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", out, inputs, vjp)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """Tanh approximation of GELU."""
    x = _t(x)
    xd = x.data
    x2 = xd * xd
    th = np.tanh(xd * (_GELU_C + _GELU_C * 0.044715 * x2))
    out = 0.5 * xd * (1.0 + th)

    def vjp(g):
        d = 1.0 - th * th
        d *= xd
        d *= 1.0 + 3 * 0.044715 * x2
        d *= 0.5 * _GELU_C
        d += 0.5
        d += 0.5 * th
        d *= g
        return (d,)

    return _emit("gelu", out, (x,), vjp)


def softmax(x) -> Tensor:
    x = _t(x)
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    return _emit("softmax_over_last_axis", y, (x,),
                 lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _t(x)
    xd = x.data
    out = np.asarray(xd.mean(axis=axis, keepdims=keepdims), dtype=xd.dtype)
    n = xd.size // max(out.size, 1)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, xd.shape).astype(xd.dtype, copy=True),)

    return _emit("mean", out, (x,), vjp)


def sum_of_squares(x) -> Tensor:
    x = _t(x)
    xd = x.data
    return _emit("sum_of_squares", np.asarray((xd * xd).sum(), dtype=xd.dtype), (x,),
                 lambda g: (2.0 * g * xd,))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = tuple(_t(x) for x in xs)
    _uniform("concat_last_axis", *xs)
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat_last_axis: {exc}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _emit("concat_last_axis", out, xs,
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


def select(x, key) -> Tensor:
    """Basic (non-fancy) slicing, e.g. ``select(x, (Ellipsis, slice(0, 4)))``."""
    x = _t(x)
    key = key if isinstance(key, tuple) else (key,)
    for k in key:
        if not isinstance(k, (builtins.slice, int, type(Ellipsis))) or isinstance(k, bool):
            raise ContractError(f"slice: unsupported index {k!r}")
    try:
        out = x.data[key]
    except IndexError as exc:
        raise DimensionError(f"slice: {exc}") from None
    shape, dtype = x.shape, x.data.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        full[key] = g
        return (full,)

    return _emit("slice", np.ascontiguousarray(out), (x,), vjp)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _t(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {exc}") from None
    old = x.shape
    return _emit("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = _t(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation of {x.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inverse),))


OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "affine": affine,
    "layer_norm": layer_norm,
    "gelu": gelu,
    "softmax_over_last_axis": softmax,
    "mean": mean,
    "sum_of_squares": sum_of_squares,
    "concat_last_axis": lambda *xs, axis=-1: concat(xs, axis=axis),
    "slice": select,
    "reshape": reshape,
    "broadcast_add": broadcast_add,
    "sub": sub,
    "neg": neg,
    "transpose": transpose,
}


def forward_op(op: str, *inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by name."""
    try:
        fn = OPS[op]
    except KeyError:
        raise ContractError(f"unknown op {op!r}; known: {sorted(OPS)}") from None
    return fn(*inputs, **kwargs)
