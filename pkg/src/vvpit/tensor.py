"""Dense float64 tensors with a tape-based reverse-mode gradient.

Operations are plain functions over :class:`Tensor`. When a :class:`GradTape`
is active and any input is tracked (a parameter or something computed from
one), the operation is appended to the tape together with a vector-Jacobian
product closure. :func:`backward` replays the tape in reverse.

Only scalar broadcasting is supported. Anything else must go through
:func:`expand`, so shape mistakes surface as errors.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "GradTape",
    "ShapeError",
    "backward",
    "conv2d",
    "ewise",
    "add",
    "sub",
    "mul",
    "div",
    "maximum",
    "reduce",
    "reshape",
    "expand",
    "stack",
    "concat",
    "narrow",
    "take",
    "neg",
    "exp",
    "log",
    "softplus",
    "sigmoid",
    "leaky_relu",
    "square",
]

DIV_GUARD = 1e-30

_uid_counter = itertools.count()
_active_tapes: list["GradTape"] = []


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """Row-major float64 array plus bookkeeping for gradient tracking.

    ``requires_grad=True`` marks a parameter: :func:`backward` reports a
    gradient for it. Intermediates computed from parameters are tracked but
    never reported.
    """

    __slots__ = ("data", "requires_grad", "name", "uid", "_tracked")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.uid = next(_uid_counter)
        self._tracked = self.requires_grad

    @classmethod
    def param(cls, data, name: str | None = None) -> "Tensor":
        return cls(data, requires_grad=True, name=name)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


class GradTape:
    """Ordered record of primitive operations applied to tracked tensors.

    Use as a context manager; tapes nest, and the innermost one records.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self.nodes.append((out, inputs, vjp))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.requires_grad = False
    out.name = None
    out.uid = next(_uid_counter)
    out._tracked = False
    if _active_tapes and any(t._tracked for t in inputs):
        out._tracked = True
        _active_tapes[-1].record(out, inputs, vjp)
    return out


def backward(tape: GradTape, loss: Tensor) -> dict[int, Tensor]:
    """Gradient of a scalar ``loss`` for every parameter reached on ``tape``.

    Returns a mapping from ``Tensor.uid`` of each parameter to its gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if len(tape) == 0:
        raise ValueError("tape is empty")
    grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    params: dict[int, Tensor] = {}
    for out, inputs, vjp in reversed(tape.nodes):
        g = grads.pop(out.uid, None)
        if g is None:
            continue
        for inp, gi in zip(inputs, vjp(g)):
            if gi is None or not inp._tracked:
                continue
            if inp.uid in grads:
                grads[inp.uid] = grads[inp.uid] + gi
            else:
                grads[inp.uid] = np.asarray(gi, dtype=np.float64)
            if inp.requires_grad:
                params[inp.uid] = inp
    if loss.requires_grad:
        params[loss.uid] = loss
    return {uid: Tensor(grads[uid]) for uid in params if uid in grads}


# ---------------------------------------------------------------- elementwise


def _check_binary(a: Tensor, b: Tensor) -> bool:
    """Return True when ``b`` is broadcast as a scalar."""
    if a.shape == b.shape:
        return False
    if b.ndim == 0:
        return True
    raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, scalar: bool) -> np.ndarray:
    return np.asarray(g.sum()) if scalar else g


def ewise(op: str, a, b) -> Tensor:
    """Elementwise ``add``, ``sub``, ``mul``, ``div`` or ``max``.

    ``b`` may be a 0-d tensor (or Python number), which is broadcast.
    """
    a = _as_tensor(a)
    b = _as_tensor(b)
    scalar = _check_binary(a, b)
    x, y = a.data, b.data
    if op == "add":
        return _emit(x + y, (a, b), lambda g: (g, _unbroadcast(g, scalar)))
    if op == "sub":
        return _emit(x - y, (a, b), lambda g: (g, _unbroadcast(-g, scalar)))
    if op == "mul":
        return _emit(
            x * y, (a, b), lambda g: (g * y, _unbroadcast(g * x, scalar))
        )
    if op == "div":
        if np.any(np.abs(y) < DIV_GUARD):
            raise ZeroDivisionError("divisor magnitude below 1e-30")
        out = x / y
        return _emit(
            out,
            (a, b),
            lambda g: (g / y, _unbroadcast(-g * out / y, scalar)),
        )
    if op == "max":
        pick_a = x >= y

        def vjp(g):
            return g * pick_a, _unbroadcast(g * ~pick_a, scalar)

        return _emit(np.maximum(x, y), (a, b), vjp)
    raise ValueError(f"unknown elementwise op {op!r}")


def add(a, b) -> Tensor:
    return ewise("add", a, b)


def sub(a, b) -> Tensor:
    return ewise("sub", a, b)


def mul(a, b) -> Tensor:
    return ewise("mul", a, b)


def div(a, b) -> Tensor:
    return ewise("div", a, b)


def maximum(a, b) -> Tensor:
    return ewise("max", a, b)


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _emit(x * x, (a,), lambda g: (2.0 * x * g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise ValueError("log of non-positive value")
    return _emit(np.log(x), (a,), lambda g: (g / x,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _emit(s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a: Tensor) -> Tensor:
    """``log(1 + exp(x))`` in the overflow-free form."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _emit(out, (a,), lambda g: (g * _sigmoid(x),))


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    x = a.data
    scale = np.where(x > 0, 1.0, slope)
    return _emit(x * scale, (a,), lambda g: (g * scale,))


# ------------------------------------------------------------------ structure


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    src = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape`` (numpy broadcasting rules)."""
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as err:
        raise ShapeError(f"cannot expand {a.shape} to {shape}") from err
    lead = len(shape) - a.ndim
    src = a.shape
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(src) if n == 1 and shape[lead + i] != 1
    )

    def vjp(g):
        return (g.sum(axis=axes).reshape(src) if axes else g,)

    return _emit(np.array(out), (a,), vjp)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ValueError("stack of empty sequence")
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != first:
            raise ShapeError(f"ragged stack: {first} vs {t.shape}")
    out = np.stack([t.data for t in tensors])
    return _emit(out, tensors, lambda g: tuple(g[i] for i in range(len(tensors))))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ValueError("concat of empty sequence")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise ShapeError(f"cannot concat shapes {[t.shape for t in tensors]}") from err
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start + length)`` along ``axis``."""
    if not 0 <= start and start + length <= a.shape[axis] and length > 0:
        raise ShapeError(f"slice [{start}, {start + length}) outside axis of size {a.shape[axis]}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    src = a.shape

    def vjp(g):
        full = np.zeros(src)
        full[index] = g
        return (full,)

    return _emit(a.data[index], (a,), vjp)


def take(a: Tensor, index: int) -> Tensor:
    """Slice ``a[index]`` along the leading axis."""
    src = a.shape

    def vjp(g):
        full = np.zeros(src)
        full[index] = g
        return (full,)

    return _emit(a.data[index], (a,), vjp)


# ----------------------------------------------------------------- reductions


def _norm_axes(t: Tensor, axes: Iterable[int] | None) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(t.ndim))
    out = []
    for ax in axes:
        ax = int(ax)
        if not -t.ndim <= ax < t.ndim:
            raise ValueError(f"axis {ax} out of range for shape {t.shape}")
        out.append(ax % t.ndim)
    if len(set(out)) != len(out):
        raise ValueError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(out))


def reduce(op: str, t: Tensor, axes: Iterable[int] | None = None, keepdims: bool = False) -> Tensor:
    """``sum``, ``min``, ``max`` or ``mean`` over ``axes`` (all axes if None)."""
    if t.size == 0:
        raise ValueError("reduction of empty tensor")
    ax = _norm_axes(t, axes)
    x = t.data
    kept_shape = tuple(1 if i in ax else n for i, n in enumerate(x.shape))
    count = int(np.prod([x.shape[i] for i in ax], dtype=np.int64)) if ax else 1

    def finish(r):
        return r if keepdims else r.reshape([n for i, n in enumerate(x.shape) if i not in ax])

    if op in ("sum", "mean"):
        r = x.sum(axis=ax, keepdims=True)
        if op == "mean":
            r = r / count
        factor = 1.0 if op == "sum" else 1.0 / count

        def vjp(g):
            return (np.broadcast_to(g.reshape(kept_shape) * factor, x.shape).copy(),)

        return _emit(finish(r), (t,), vjp)
    if op in ("min", "max"):
        r = x.min(axis=ax, keepdims=True) if op == "min" else x.max(axis=ax, keepdims=True)
        hit = x == r
        share = hit / hit.sum(axis=ax, keepdims=True)

        def vjp(g):
            return (share * g.reshape(kept_shape),)

        return _emit(finish(r), (t,), vjp)
    raise ValueError(f"unknown reduction {op!r}")


# -------------------------------------------------------------- convolution


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2D cross-correlation of a ``C×H×W`` (or batched ``N×C×H×W``) input.

    ``out[o, px, py] = sum_{c,i,j} x[c, px*stride+i-padding, py*stride+j-padding]
    * kernel[o, c, i, j]`` with zeros outside the input.
    """
    if stride < 1 or padding < 0:
        raise ValueError(f"need stride >= 1 and padding >= 0, got {stride}, {padding}")
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be O×C×Kh×Kw, got {kernel.shape}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ShapeError(f"input must be C×H×W or N×C×H×W, got {x.shape}")
    xs = x.data if batched else x.data[None]
    n, c, h, w = xs.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(
            f"kernel {kernel.shape} expects {kc} channels, input {x.shape} has {c}"
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if h + 2 * padding < kh or w + 2 * padding < kw or ho < 1 or wo < 1:
        raise ShapeError(
            f"non-positive output size for input {x.shape}, kernel {kernel.shape}, "
            f"stride {stride}, padding {padding}"
        )
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} does not match {o} output channels")

    xp = _pad(xs, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # im2col: rows are (n, px, py), columns are (c, i, j)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    kmat = kernel.data.reshape(o, c * kh * kw)
    out = (cols @ kmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out if batched else out[0])

    def vjp(g):
        g4 = g if batched else g[None]
        gmat = g4.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gk = (gmat.T @ cols).reshape(kernel.shape)
        gcols = (gmat @ kmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros(xp.shape)
        if ho * wo < kh * kw:
            for p in range(ho):
                for q in range(wo):
                    gxp[:, :, p * stride : p * stride + kh, q * stride : q * stride + kw] += gcols[:, p, q]
        else:
            gcols = gcols.transpose(0, 3, 4, 5, 1, 2)
            for i in range(kh):
                for j in range(kw):
                    gxp[
                        :,
                        :,
                        i : i + (ho - 1) * stride + 1 : stride,
                        j : j + (wo - 1) * stride + 1 : stride,
                    ] += gcols[:, :, i, j]
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        gx = gxp if batched else gxp[0]
        gb = g4.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gk, gb)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _emit(out, inputs, vjp)
