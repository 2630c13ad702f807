"""Reverse-mode automatic differentiation over dense numpy arrays.

The engine is define-by-run: a Tape is opened as a context manager, every
operation executed inside it appends a node with a closure that scatters the
output gradient back onto its inputs, and backward() replays the tape in
reverse. Without an active tape the same ops run as plain numpy, so inference
pays nothing for the machinery.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, UsageError

_FLOAT_DTYPES = (np.float32, np.float64)

# Innermost entry receives new nodes; empty stack means no recording.
_TAPE_STACK: list["Tape"] = []


def _active_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense float array plus an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_tape")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._tape: Optional[Tape] = None

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
        if self.data.size != 1:
            raise UsageError("item() requires a single-element tensor, got shape %s" % (self.shape,))
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return "Tensor(shape=%s, dtype=%s, requires_grad=%s)" % (
            self.shape, self.data.dtype.name, self.requires_grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_coerce(other, self), -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return mul(self, power(other, -1.0))

    def __pow__(self, exponent):
        return power(self, exponent)

    # -- shape and elementwise helpers --------------------------------------

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, *shape)

    def transpose(self) -> "Tensor":
        return transpose(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def clamp(self, lo=None, hi=None) -> "Tensor":
        return clamp(self, lo, hi)


class Tape:
    """Ordered record of one forward pass; consumed by a single backward()."""

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc_value, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._nodes)


class Parameter:
    """A named leaf tensor. Gradients accumulate across tapes until zeroed."""

    def __init__(self, name: str, value: Tensor):
        if not isinstance(value, Tensor):
            value = Tensor(value)
        value.requires_grad = True
        self.name = name
        self.value = value

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray:
        if self.value.grad is None:
            return np.zeros_like(self.value.data)
        return self.value.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.data.shape

    def zero_grad(self) -> None:
        self.value.grad = None

    def __repr__(self) -> str:
        return "Parameter(%r, shape=%s)" % (self.name, self.shape)


# ---------------------------------------------------------------------------
# recording plumbing


def _coerce(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _record(out: Tensor, parents: Sequence[Tensor], backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward_fn
        out._tape = tape
        tape._nodes.append(out)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    # Right-aligned; a dimension may only stretch when its extent is 1.
    rank = max(len(a), len(b))
    pa = (1,) * (rank - len(a)) + a
    pb = (1,) * (rank - len(b)) + b
    out = []
    for da, db in zip(pa, pb):
        if da == db or da == 1 or db == 1:
            out.append(max(da, db))
        else:
            raise DimensionError("cannot broadcast shapes %s and %s" % (a, b))
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, a)
    _broadcast_shape(a.shape, b.shape)
    out = Tensor(a.data + b.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _record(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, a)
    _broadcast_shape(a.shape, b.shape)
    out = Tensor(a.data * b.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = _coerce(a)
    exponent = float(exponent)
    out = Tensor(a.data ** exponent)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _record(out, (a,), backward)


def relu(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.maximum(a.data, 0))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * (a.data > 0))

    return _record(out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    # Split by sign so neither branch exponentiates a large positive number.
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s.astype(x.dtype, copy=False))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * out.data * (1.0 - out.data))

    return _record(out, (a,), backward)


def exp(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.exp(a.data))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * out.data)

    return _record(out, (a,), backward)


def log(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.log(a.data))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g / a.data)

    return _record(out, (a,), backward)


def clamp(a, lo=None, hi=None) -> Tensor:
    a = _coerce(a)
    if lo is None and hi is None:
        raise UsageError("clamp needs at least one bound")
    out = Tensor(np.clip(a.data, lo, hi))
    inside = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * inside)

    return _record(out, (a,), backward)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    axes = _normalize_axes(axis, a.data.ndim)

    def backward(g: np.ndarray) -> None:
        gg = g
        if not keepdims and axes is not None:
            gg = np.expand_dims(gg, axes)
        _accumulate(a, np.broadcast_to(gg, a.shape).copy() if gg.shape != a.shape
                    else gg)

    return _record(out, (a,), backward)


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    axes = _normalize_axes(axis, a.data.ndim)
    if axes is None:
        count = a.data.size
    else:
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def _normalize_axes(axis, ndim: int) -> Optional[tuple[int, ...]]:
    if axis is None:
        return None if ndim == 0 else tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, *shape) -> Tensor:
    a = _coerce(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    target = tuple(int(s) for s in shape)
    if target.count(-1) > 1:
        raise DimensionError("at most one reshape extent may be -1, got %s"
                             % (target,))
    if -1 in target:
        rest = int(np.prod([s for s in target if s != -1], dtype=np.int64))
        if rest == 0 or a.data.size % rest:
            raise DimensionError("cannot reshape %s into %s" % (a.shape, target))
        target = tuple(a.data.size // rest if s == -1 else s for s in target)
    if int(np.prod(target, dtype=np.int64)) != a.data.size:
        raise DimensionError("cannot reshape %s into %s" % (a.shape, target))
    out = Tensor(a.data.reshape(target))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _record(out, (a,), backward)


def transpose(a) -> Tensor:
    a = _coerce(a)
    if a.data.ndim != 2:
        raise DimensionError("transpose expects a rank-2 tensor, got %s" % (a.shape,))
    out = Tensor(a.data.T.copy())

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g.T)

    return _record(out, (a,), backward)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [_coerce(t) for t in tensors]
    if not parts:
        raise UsageError("concat of an empty sequence")
    ndim = parts[0].data.ndim
    for p in parts[1:]:
        if p.data.ndim != ndim:
            raise DimensionError("concat rank mismatch: %s vs %s" % (parts[0].shape, p.shape))
        for ax in range(ndim):
            if ax != axis % ndim and p.shape[ax] != parts[0].shape[ax]:
                raise DimensionError("concat extent mismatch on axis %d: %s vs %s"
                                     % (ax, parts[0].shape, p.shape))
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    offsets = np.cumsum([0] + [p.shape[axis % ndim] for p in parts])

    def backward(g: np.ndarray) -> None:
        sl = [slice(None)] * ndim
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl[axis % ndim] = slice(lo, hi)
            _accumulate(p, g[tuple(sl)])

    return _record(out, tuple(parts), backward)


# ---------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, a)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects rank-2 operands, got %s and %s"
                             % (a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner extents differ: %s vs %s" % (a.shape, b.shape))
    out = Tensor(a.data @ b.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _record(out, (a, b), backward)


def _check_kernel(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ConfigError("kernel width must be odd and positive, got %d" % k)


def conv1d(x, weight, bias=None) -> Tensor:
    """Same-padded 1-D convolution. x: (c_in, l), weight: (c_out, c_in, k)."""
    x = _coerce(x)
    weight = _coerce(weight, x)
    if x.data.ndim != 2 or weight.data.ndim != 3:
        raise DimensionError("conv1d expects x (c_in, l) and weight (c_out, c_in, k)")
    c_out, c_in, k = weight.shape
    if x.shape[0] != c_in:
        raise DimensionError("conv1d channel mismatch: x has %d, weight expects %d"
                             % (x.shape[0], c_in))
    _check_kernel(k)
    length = x.shape[1]
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad)))
    # Columns: (c_in * k, l), one column per output position.
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1)).reshape(c_in * k, length)
    w2 = weight.data.reshape(c_out, c_in * k)
    y = w2 @ cols
    parents = [x, weight]
    if bias is not None:
        bias = _coerce(bias, x)
        if bias.shape not in ((c_out,), (c_out, 1)):
            raise DimensionError("conv1d bias shape %s does not match %d channels"
                                 % (bias.shape, c_out))
        y = y + bias.data.reshape(c_out, 1)
        parents.append(bias)
    out = Tensor(y)

    def backward(g: np.ndarray) -> None:
        _accumulate(weight, (g @ cols.T).reshape(weight.shape))
        if bias is not None:
            _accumulate(bias, g.sum(axis=1).reshape(bias.shape))
        gcols = (w2.T @ g).reshape(c_in, k, length)
        gxp = np.zeros_like(xp)
        for t in range(k):
            gxp[:, t:t + length] += gcols[:, t, :]
        _accumulate(x, gxp[:, pad:pad + length] if pad else gxp)

    return _record(out, tuple(parents), backward)


def conv2d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """Same-padded 2-D convolution. x: (c_in, h, w), weight: (c_out, c_in, k, k)."""
    x = _coerce(x)
    weight = _coerce(weight, x)
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise DimensionError("conv2d expects x (c_in, h, w) and weight (c_out, c_in, k, k)")
    c_out, c_in, kh, kw = weight.shape
    if kh != kw:
        raise DimensionError("conv2d kernels must be square, got %dx%d" % (kh, kw))
    if x.shape[0] != c_in:
        raise DimensionError("conv2d channel mismatch: x has %d, weight expects %d"
                             % (x.shape[0], c_in))
    _check_kernel(kh)
    if stride < 1:
        raise ConfigError("stride must be >= 1, got %d" % stride)
    k = kh
    _, h, w = x.shape
    pad = (k - 1) // 2
    hh = (h + 2 * pad - k) // stride + 1
    ww = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]              # (c_in, hh, ww, k, k)
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2))
    cols = cols.reshape(c_in * k * k, hh * ww)
    w2 = weight.data.reshape(c_out, c_in * k * k)
    y = w2 @ cols
    parents = [x, weight]
    if bias is not None:
        bias = _coerce(bias, x)
        if bias.shape not in ((c_out,), (c_out, 1), (c_out, 1, 1)):
            raise DimensionError("conv2d bias shape %s does not match %d channels"
                                 % (bias.shape, c_out))
        y = y + bias.data.reshape(c_out, 1)
        parents.append(bias)
    out = Tensor(y.reshape(c_out, hh, ww))

    def backward(g: np.ndarray) -> None:
        g2 = g.reshape(c_out, hh * ww)
        _accumulate(weight, (g2 @ cols.T).reshape(weight.shape))
        if bias is not None:
            _accumulate(bias, g2.sum(axis=1).reshape(bias.shape))
        gcols = (w2.T @ g2).reshape(c_in, k, k, hh, ww)
        gxp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                gxp[:, di:di + stride * hh:stride, dj:dj + stride * ww:stride] \
                    += gcols[:, di, dj]
        _accumulate(x, gxp[:, pad:pad + h, pad:pad + w] if pad else gxp)

    return _record(out, tuple(parents), backward)


def avg_pool_global(x) -> Tensor:
    """Mean over every non-channel axis: (c, ...) -> (c, 1)."""
    x = _coerce(x)
    if x.data.ndim < 2:
        raise DimensionError("avg_pool_global expects (c, ...), got %s" % (x.shape,))
    c = x.shape[0]
    n = x.data.size // c
    if n == 0:
        raise DimensionError("avg_pool_global over an empty spatial extent")
    axes = tuple(range(1, x.data.ndim))
    out = Tensor(x.data.mean(axis=axes).reshape(c, 1))

    def backward(g: np.ndarray) -> None:
        shape = (c,) + (1,) * (x.data.ndim - 1)
        _accumulate(x, np.broadcast_to(g.reshape(shape) / n, x.shape).copy())

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# backward driver


def backward(tape: Tape, output: Tensor) -> None:
    """Propagate d(output)/d(leaf) for every leaf reached by the tape."""
    if not isinstance(tape, Tape):
        raise UsageError("backward needs the Tape the output was recorded on")
    if tape._consumed:
        raise UsageError("this tape was already consumed by a previous backward")
    if output.data.size != 1:
        raise UsageError("backward requires a scalar output, got shape %s" % (output.shape,))
    if output._tape is not tape:
        raise UsageError("output was not recorded on the given tape")
    tape._consumed = True
    output.grad = np.ones_like(output.data)
    # Tape order is execution order, so the reverse is a valid topological
    # order: every consumer of a node runs before the node itself.
    for node in reversed(tape._nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
    for node in tape._nodes:
        node._backward = None
        node._tape = None
    tape._nodes.clear()


def grad_check(function: Callable[[], Tensor], params: Sequence[Parameter],
               eps: float = 1e-5, max_coords_per_param: Optional[int] = None,
               seed: int = 0) -> float:
    """Compare tape gradients of a scalar function against central differences.

    Returns the worst relative error  |analytic - numeric| / max(1, |analytic|,
    |numeric|)  over every checked coordinate. Parameters must be float64;
    eps outside [1e-7, 1e-4] is rejected as meaningless at that precision.
    """
    if not (1e-7 <= eps <= 1e-4):
        raise ConfigError("grad_check eps must lie in [1e-7, 1e-4], got %g" % eps)
    params = list(params)
    for p in params:
        if p.value.data.dtype != np.float64:
            raise ConfigError("grad_check requires float64 parameters, %r is %s"
                              % (p.name, p.value.data.dtype.name))
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = function()
    if out.data.size != 1:
        raise UsageError("grad_check function must return a scalar")
    backward(tape, out)
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.data.reshape(-1)
        gflat = g.reshape(-1)
        if max_coords_per_param is not None and flat.size > max_coords_per_param:
            coords = rng.choice(flat.size, size=max_coords_per_param, replace=False)
        else:
            coords = range(flat.size)
        for i in coords:
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = function().item()
            flat[i] = saved - eps
            f_minus = function().item()
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]), abs(numeric))
            worst = max(worst, err)
    return worst
