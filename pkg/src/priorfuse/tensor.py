"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation records its parents and a closure that maps the
output gradient to parent gradients. ``Tensor.backward`` walks the recorded
graph in reverse topological order. Arrays are numpy-backed; operations never
mutate their inputs.

Reductions, matrix products and convolutions accumulate in float64 and cast the
result back to the operand dtype.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, ParameterError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An n-dimensional array node in the autograd graph.

    Feature maps use (batch, channel, height, width) layout; token matrices use
    (batch, tokens, channels).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autograd ---------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or (parent._backward is None and not parent.requires_grad):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


ArrayLike = Tensor | np.ndarray | float | int


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _data(x: ArrayLike) -> np.ndarray | float:
    if isinstance(x, Tensor):
        return x.data
    # numpy scalars would otherwise promote float32 operands
    return x.item() if isinstance(x, np.generic) else x


def _result(data: np.ndarray, parents: Sequence[ArrayLike], backward: Callable) -> Tensor:
    out = Tensor(data)
    tracked = tuple(p for p in parents if isinstance(p, Tensor))
    if is_grad_enabled() and any(p.requires_grad or p._backward is not None for p in tracked):
        out._parents = tuple(p if isinstance(p, Tensor) else Tensor(p) for p in parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _shape_of(x: ArrayLike) -> tuple[int, ...]:
    return np.shape(_data(x))


def _acc_dtype(dtype) -> np.dtype:
    return np.dtype(np.float64) if np.dtype(dtype).itemsize < 8 else np.dtype(dtype)


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with float64 accumulation for narrower inputs."""
    out_dtype = np.result_type(a, b)
    acc = _acc_dtype(out_dtype)
    return np.matmul(a.astype(acc, copy=False), b.astype(acc, copy=False)).astype(out_dtype, copy=False)


# -- elementwise arithmetic -----------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    sa, sb = _shape_of(a), _shape_of(b)

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(np.add(_data(a), _data(b)), (a, b), backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    sa, sb = _shape_of(a), _shape_of(b)

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(np.subtract(_data(a), _data(b)), (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    da, db = _data(a), _data(b)

    def backward(g):
        return _unbroadcast(g * db, np.shape(da)), _unbroadcast(g * da, np.shape(db))

    return _result(np.multiply(da, db), (a, b), backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    da, db = _data(a), _data(b)
    out = np.divide(da, db)

    def backward(g):
        gb = -g * out / db
        return _unbroadcast(g / db, np.shape(da)), _unbroadcast(gb, np.shape(db))

    return _result(out, (a, b), backward)


def power(x: Tensor, p: float) -> Tensor:
    d = x.data

    def backward(g):
        return (g * p * d ** (p - 1),)

    return _result(d**p, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def tabs(x: Tensor) -> Tensor:
    """Absolute value; the subgradient at 0 is 0."""
    d = x.data
    return _result(np.abs(d), (x,), lambda g: (g * np.sign(d),))


def maximum(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise maximum; on exact ties the gradient goes to ``a``."""
    da, db = _data(a), _data(b)
    pick_a = da >= db

    def backward(g):
        return (_unbroadcast(np.where(pick_a, g, 0), np.shape(da)),
                _unbroadcast(np.where(pick_a, 0, g), np.shape(db)))

    return _result(np.where(pick_a, da, db), (a, b), backward)


# -- reductions and shape manipulation -------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims, dtype=_acc_dtype(x.dtype)).astype(x.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.dtype),)

    return _result(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis, keepdims) * (1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)

    def backward(g):
        z = np.zeros(shape, dtype=dtype)
        if basic:
            z[idx] = g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return _result(np.array(x.data[idx]), (x,), backward)


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Gather along ``axis``; ``indices`` may be multi-dimensional."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    shape, dtype = x.shape, x.dtype

    def backward(g):
        z = np.zeros(shape, dtype=dtype)
        np.add.at(z, (slice(None),) * axis + (indices,), g)
        return (z,)

    return _result(np.take(x.data, indices, axis=axis), (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), backward)


def pad2d(x: Tensor, pad: int) -> Tensor:
    """Zero-pad the two trailing spatial axes by ``pad`` on every side."""
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return _result(np.pad(x.data, widths), (x,), lambda g: (g[..., pad:-pad, pad:-pad],))


def replicate_pad2d(x: Tensor, pad: int) -> Tensor:
    """Edge-replicate the two trailing spatial axes by ``pad`` on every side."""
    h, w = x.shape[-2:]
    rows = np.clip(np.arange(-pad, h + pad), 0, h - 1)
    cols = np.clip(np.arange(-pad, w + pad), 0, w - 1)
    return take(take(x, rows, x.ndim - 2), cols, x.ndim - 1)


def upsample_nearest2x(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return _result(out, (x,), lambda g: (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),))


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the two trailing axes."""
    da, db = _data(a), _data(b)
    if np.ndim(da) < 2 or np.ndim(db) < 2:
        raise DimensionError("matmul operands must have at least two axes")
    if da.shape[-1] != db.shape[-2]:
        raise DimensionError(
            f"matmul inner dimension mismatch: left axis -1 has {da.shape[-1]}, "
            f"right axis -2 has {db.shape[-2]}"
        )

    def backward(g):
        ga = _mm(g, np.swapaxes(db, -1, -2))
        gb = _mm(np.swapaxes(da, -1, -2), g)
        return _unbroadcast(ga, da.shape), _unbroadcast(gb, db.shape)

    return _result(_mm(da, db), (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the trailing axis; weight is [out, in]."""
    y = matmul(x, transpose(weight, (1, 0)))
    return y if bias is None else y + bias


def _out_size(n: int, k: int, stride: int, padding: int, axis: str) -> int:
    size = (n + 2 * padding - k) // stride + 1
    if size < 1:
        raise DimensionError(f"convolution output along {axis} would be empty (input {n}, kernel {k})")
    return size


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # [B, C, Ho, Wo, k, k] -> [B, C, k, k, Ho, Wo]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, xshape, k: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    b, c, h, w = xshape
    cols = cols.reshape(b, c, k, k, ho, wo)
    out = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def unfold(x: Tensor, k: int, stride: int = 1, padding: int = 0) -> Tensor:
    """im2col: [B, C, H, W] -> [B, C*k*k, Ho*Wo], row index ordered (c, ki, kj)."""
    if x.ndim != 4:
        raise DimensionError(f"unfold expects a rank-4 tensor, got rank {x.ndim}")
    b, c, h, w = x.shape
    ho = _out_size(h, k, stride, padding, "height")
    wo = _out_size(w, k, stride, padding, "width")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, stride, ho, wo)
    return _result(cols, (x,), lambda g: (_col2im(g, x.shape, k, stride, padding, ho, wo),))


def conv2d(x: Tensor, weight: ArrayLike, bias: ArrayLike | None = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with grouped channels."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be rank 4 (B, C, H, W), got rank {x.ndim}")
    wd = _data(weight)
    b, c, h, w = x.shape
    o, cg, kh, kw = np.shape(wd)
    if kh != kw:
        raise DimensionError(f"conv2d kernel must be square, got {kh}x{kw}")
    if c % groups or o % groups:
        raise DimensionError(f"channel axis: {c} input / {o} output channels not divisible by groups={groups}")
    if cg != c // groups:
        raise DimensionError(f"channel axis: kernel expects {cg * groups} input channels, input has {c}")
    bd = None if bias is None else _data(bias)
    if bd is not None and np.shape(bd) != (o,):
        raise DimensionError(f"bias axis: expected length {o}, got shape {np.shape(bd)}")
    k = kh
    ho = _out_size(h, k, stride, padding, "height")
    wo = _out_size(w, k, stride, padding, "width")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, stride, ho, wo).reshape(b, groups, cg * k * k, ho * wo)
    wmat = np.reshape(wd, (groups, o // groups, cg * k * k))
    out = _mm(wmat[None], cols).reshape(b, o, ho, wo)
    if bd is not None:
        out = out + np.reshape(bd, (1, o, 1, 1))

    def backward(g):
        g4 = g.reshape(b, groups, o // groups, ho * wo)
        gw = _mm(g4, np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(np.shape(wd))
        gcols = _mm(np.swapaxes(wmat, -1, -2)[None], g4).reshape(b, c * k * k, ho * wo)
        gx = _col2im(gcols, x.shape, k, stride, padding, ho, wo)
        gb = None if bd is None else g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, lambda g: backward(g)[: len(parents)])


# -- activations and normalisation ----------------------------------------

def softmax(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    """Softmax of ``x / temperature`` along ``axis`` (max-subtracted)."""
    if not temperature > 0:
        raise ParameterError(f"softmax temperature must be positive, got {temperature}")
    z = x.data / temperature
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)) / temperature,)

    return _result(y, (x,), backward)


def topk_mask(x: np.ndarray, k: int, axis: int = -1) -> np.ndarray:
    """Boolean mask of the ``k`` largest entries along ``axis``; ties go to the lower index."""
    n = x.shape[axis]
    if not 1 <= k <= n:
        raise ParameterError(f"top-k requires 1 <= K <= {n}, got K={k}")
    order = np.argsort(-x, axis=axis, kind="stable")
    ranks = np.argsort(order, axis=axis, kind="stable")
    return ranks < k


def topk_softmax(x: Tensor, k: int, axis: int = -1) -> Tensor:
    """Softmax restricted to the top-``k`` entries; the rest are exactly zero.

    Gradients flow only through the retained entries.
    """
    mask = topk_mask(x.data, k, axis)
    z = np.where(mask, x.data, -np.inf)
    e = np.where(mask, np.exp(z - z.max(axis=axis, keepdims=True)), 0.0)
    y = (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor | None = None, shift: Tensor | None = None,
               eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalise each slice along ``axis`` to zero mean, unit variance, then apply gain/shift."""
    axis = axis % x.ndim
    n = x.shape[axis]
    for name, p in (("gain", gain), ("shift", shift)):
        if p is not None and p.shape != (n,):
            raise DimensionError(f"layer_norm {name} must have length {n} (axis {axis}), got {p.shape}")
    bshape = [1] * x.ndim
    bshape[axis] = n
    acc = _acc_dtype(x.dtype)
    xd = x.data.astype(acc, copy=False)
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = None if gain is None else gain.data.reshape(bshape)
    sd = None if shift is None else shift.data.reshape(bshape)
    y = xhat
    if gd is not None:
        y = y * gd
    if sd is not None:
        y = y + sd
    other = tuple(a for a in range(x.ndim) if a != axis)

    def backward(g):
        g = g.astype(acc, copy=False)
        gx_hat = g * gd if gd is not None else g
        gx = rstd * (gx_hat - gx_hat.mean(axis=axis, keepdims=True)
                     - xhat * (gx_hat * xhat).mean(axis=axis, keepdims=True))
        grads = [gx.astype(x.dtype)]
        if gain is not None:
            grads.append((g * xhat).sum(axis=other).astype(gain.dtype))
        if shift is not None:
            grads.append(g.sum(axis=other).astype(shift.dtype))
        return tuple(grads)

    parents = tuple(p for p in (x, gain, shift) if p is not None)
    return _result(y.astype(x.dtype), parents, backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    d = x.data
    t = np.tanh(_GELU_C * (d + 0.044715 * d**3))
    out = 0.5 * d * (1.0 + t)

    def backward(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * dt),)

    return _result(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def gap(x: Tensor) -> Tensor:
    """Global average pooling: [B, C, H, W] -> [B, C]."""
    if x.ndim != 4:
        raise DimensionError(f"gap expects rank 4, got rank {x.ndim}")
    return mean(x, axis=(2, 3))


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


def sobel_gradient(x: Tensor) -> Tensor:
    """Per-channel Sobel magnitude |Gx| + |Gy| with replicate padding.

    Computed as [1, 2, 1]-smoothed central differences, which equals correlation
    with SOBEL_X / SOBEL_Y but is exactly zero on flat regions.
    """
    if x.ndim != 4:
        raise DimensionError(f"sobel_gradient expects rank 4, got rank {x.ndim}")
    h, w = x.shape[2:]
    if h < 3 or w < 3:
        raise DimensionError(f"sobel_gradient needs height and width >= 3, got {h}x{w}")
    xp = replicate_pad2d(x, 1)
    dx = xp[:, :, :, 2:] - xp[:, :, :, :-2]
    gx = dx[:, :, :-2] + dx[:, :, 1:-1] * 2.0 + dx[:, :, 2:]
    dy = xp[:, :, 2:] - xp[:, :, :-2]
    gy = dy[:, :, :, :-2] + dy[:, :, :, 1:-1] * 2.0 + dy[:, :, :, 2:]
    return tabs(gx) + tabs(gy)
