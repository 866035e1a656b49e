"""Dense N-rank tensors with reverse-mode differentiation.

Every op records its parents and a closure that maps the output gradient to
parent gradients. ``Tensor.backward`` walks the recorded graph in reverse
topological order. Leaf tensors with ``requires_grad`` accumulate into
``.grad``; intermediate gradients are discarded after use.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype used for new tensors and parameters."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, sampling, frozen networks)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name: str | None = None

    # construction of op outputs
    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = cls.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` of every reachable leaf that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)
    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)
    def exp(self): return exp(self)
    def log(self): return log(self)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


# elementwise binary ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return Tensor._make(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return Tensor._make(out, (a, b), backward)


def maximum(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("maximum", a, b)
    mask = a.data >= b.data
    return Tensor._make(np.where(mask, a.data, b.data), (a, b),
                        lambda g: (_unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)))


# elementwise unary ----------------------------------------------------------

def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._make(np.log(x), (a,), lambda g: (g / x,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,))


def power(a: Tensor, p: float) -> Tensor:
    x = a.data
    return Tensor._make(x ** p, (a,), lambda g: (g * p * x ** (p - 1),))


def abs_(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._make(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out * (1 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    x = a.data
    scale = np.where(x > 0, 1.0, slope).astype(x.dtype)
    return Tensor._make(x * scale, (a,), lambda g: (g * scale,))


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return Tensor._make(x * s, (a,), lambda g: (g * (s * (1 + x * (1 - s))),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0, x).astype(x.dtype, copy=False)
    return Tensor._make(out, (a,), lambda g: (g * _sigmoid(x),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (a,), backward)


# reductions -----------------------------------------------------------------

def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return sum_(a, axes, keepdims) * (1.0 / n)


# linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; ``a`` may carry leading batch axes, ``b`` is rank-2 or batched alike."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be at least rank-2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), backward)


# shape manipulation ---------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def flip(a: Tensor, axis: int) -> Tensor:
    return Tensor._make(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),))


def getitem(a: Tensor, idx) -> Tensor:
    shape, dtype = a.shape, a.data.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(np.array(a.data[idx]), (a,), backward)


def take_along_axis(a: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather with a permutation-style index; the backward pass scatters by assignment."""
    shape, dtype = a.shape, a.data.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.put_along_axis(full, index, g, axis=axis)
        return (full,)

    return Tensor._make(np.take_along_axis(a.data, index, axis=axis), (a,), backward)


def pad(a: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding; ``widths`` has one (before, after) pair per axis."""
    widths = list(widths)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return Tensor._make(np.pad(a.data, widths), (a,), lambda g: (g[sl],))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, range(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                   for t in tensors], axis=axis)


def broadcast_to(a: Tensor, shape) -> Tensor:
    src = a.shape
    return Tensor._make(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, src),))


def weighted_gather(a: Tensor, index: np.ndarray, weight: np.ndarray) -> Tensor:
    """``out[..., v] = sum_k weight[v, k] * a[..., index[v, k]]`` over the last axis of ``a``."""
    x = a.data
    w = weight.astype(x.dtype)
    out = (x[..., index] * w).sum(axis=-1)
    n = x.shape[-1]

    def backward(g):
        contrib = g[..., None] * w
        full = np.zeros(x.shape[:-1] + (n,), dtype=x.dtype)
        flat_full = full.reshape(-1, n)
        flat_c = contrib.reshape(-1, *index.shape)
        for row in range(flat_full.shape[0]):
            flat_full[row] = np.bincount(index.ravel(), weights=flat_c[row].ravel(), minlength=n)
        return (full,)

    return Tensor._make(out, (a,), backward)


# convolution ----------------------------------------------------------------

def _tuple(v, n) -> tuple[int, ...]:
    if isinstance(v, (tuple, list)):
        if len(v) != n:
            raise ValueError(f"expected {n} values, got {v}")
        return tuple(int(u) for u in v)
    return (int(v),) * n


def _im2col(xp: np.ndarray, ks, stride, dilation, out_sp) -> np.ndarray:
    B, C = xp.shape[:2]
    K = int(np.prod(ks))
    cols = np.empty((B, C, K) + tuple(out_sp), dtype=xp.dtype)
    for k, offs in enumerate(itertools.product(*[range(n) for n in ks])):
        sl = tuple(slice(o * d, o * d + s * (n - 1) + 1, s)
                   for o, d, s, n in zip(offs, dilation, stride, out_sp))
        cols[:, :, k] = xp[(slice(None), slice(None)) + sl]
    return cols


def _col2im(cols: np.ndarray, padded_sp, ks, stride, dilation, out_sp) -> np.ndarray:
    B, C = cols.shape[:2]
    xp = np.zeros((B, C) + tuple(padded_sp), dtype=cols.dtype)
    for k, offs in enumerate(itertools.product(*[range(n) for n in ks])):
        sl = tuple(slice(o * d, o * d + s * (n - 1) + 1, s)
                   for o, d, s, n in zip(offs, dilation, stride, out_sp))
        xp[(slice(None), slice(None)) + sl] += cols[:, :, k]
    return xp


def _batchify(x: Tensor, nsp: int) -> tuple[Tensor, bool]:
    if x.ndim == nsp + 1:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != nsp + 2:
        raise ValueError(f"expected rank {nsp + 1} or {nsp + 2} input, got shape {x.shape}")
    return x, False


def conv(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0, dilation=1) -> Tensor:
    """N-d cross-correlation. ``x``: (B, C, *spatial) or (C, *spatial); ``weight``: (O, C, *kernel)."""
    nsp = weight.ndim - 2
    x, squeeze = _batchify(x, nsp)
    stride, padding, dilation = _tuple(stride, nsp), _tuple(padding, nsp), _tuple(dilation, nsp)
    B, C = x.shape[:2]
    O, Cw = weight.shape[:2]
    ks = weight.shape[2:]
    if C != Cw:
        raise ValueError(f"conv: input has {C} channels but weight expects {Cw} (weight shape {weight.shape})")
    in_sp = x.shape[2:]
    out_sp = tuple((n + 2 * p - d * (k - 1) - 1) // s + 1
                   for n, p, d, k, s in zip(in_sp, padding, dilation, ks, stride))
    if any(n <= 0 for n in out_sp):
        raise ValueError(f"conv: non-positive output extent {out_sp} for input {x.shape}, kernel {tuple(ks)}")
    xd, wd = x.data, weight.data
    xp = np.pad(xd, [(0, 0), (0, 0)] + [(p, p) for p in padding])
    cols = _im2col(xp, ks, stride, dilation, out_sp)
    P = int(np.prod(out_sp))
    K = int(np.prod(ks))
    cols2 = cols.reshape(B, C * K, P)
    w2 = wd.reshape(O, C * K)
    out = (w2 @ cols2).reshape((B, O) + out_sp)
    if bias is not None:
        out = out + bias.data.reshape((1, O) + (1,) * nsp)

    def backward(g):
        g2 = g.reshape(B, O, P)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape((B, C, K) + out_sp)
            gxp = _col2im(dcols, xp.shape[2:], ks, stride, dilation, out_sp)
            gx = gxp[(slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(padding, in_sp))]
        if weight.requires_grad:
            gw = np.tensordot(g2, cols2, axes=([0, 2], [0, 2])).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0,) + tuple(range(2, 2 + nsp)))
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    y = Tensor._make(out, parents, backward)
    return reshape(y, y.shape[1:]) if squeeze else y


def conv_transpose(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0,
                   dilation=1, output_padding=0) -> Tensor:
    """Adjoint of :func:`conv`. ``weight``: (C_in, C_out, *kernel)."""
    nsp = weight.ndim - 2
    x, squeeze = _batchify(x, nsp)
    stride, padding, dilation = _tuple(stride, nsp), _tuple(padding, nsp), _tuple(dilation, nsp)
    output_padding = _tuple(output_padding, nsp)
    B, Cin = x.shape[:2]
    Cw, O = weight.shape[:2]
    ks = weight.shape[2:]
    if Cin != Cw:
        raise ValueError(f"conv_transpose: input has {Cin} channels but weight expects {Cw}")
    in_sp = x.shape[2:]
    full_sp = tuple((n - 1) * s + d * (k - 1) + 1 + op
                    for n, s, d, k, op in zip(in_sp, stride, dilation, ks, output_padding))
    out_sp = tuple(f - 2 * p for f, p in zip(full_sp, padding))
    if any(n <= 0 for n in out_sp):
        raise ValueError(f"conv_transpose: non-positive output extent {out_sp}")
    K = int(np.prod(ks))
    P = int(np.prod(in_sp))
    xd, wd = x.data, weight.data
    w2 = wd.reshape(Cin, O * K)
    x2 = xd.reshape(B, Cin, P)
    cols = (w2.T @ x2).reshape((B, O, K) + in_sp)
    full = _col2im(cols, full_sp, ks, stride, dilation, in_sp)
    crop = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(padding, out_sp))
    out = full[crop]
    if bias is not None:
        out = out + bias.data.reshape((1, O) + (1,) * nsp)

    def backward(g):
        gfull = np.zeros((B, O) + full_sp, dtype=g.dtype)
        gfull[crop] = g
        gcols = _im2col(gfull, ks, stride, dilation, in_sp).reshape(B, O * K, P)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (w2 @ gcols).reshape(xd.shape)
        if weight.requires_grad:
            gw = np.tensordot(x2, gcols, axes=([0, 2], [0, 2])).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0,) + tuple(range(2, 2 + nsp)))
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    y = Tensor._make(np.ascontiguousarray(out), parents, backward)
    return reshape(y, y.shape[1:]) if squeeze else y


def conv3d(x, weight, bias=None, stride=1, padding=0, dilation=1) -> Tensor:
    if weight.ndim != 5:
        raise ValueError(f"conv3d expects a rank-5 weight, got {weight.shape}")
    return conv(x, weight, bias, stride, padding, dilation)


def conv_transpose3d(x, weight, bias=None, stride=1, padding=0, dilation=1, output_padding=0) -> Tensor:
    if weight.ndim != 5:
        raise ValueError(f"conv_transpose3d expects a rank-5 weight, got {weight.shape}")
    return conv_transpose(x, weight, bias, stride, padding, dilation, output_padding)


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1) -> Tensor:
    if weight.ndim != 4:
        raise ValueError(f"conv2d expects a rank-4 weight, got {weight.shape}")
    return conv(x, weight, bias, stride, padding, dilation)


# normalization --------------------------------------------------------------

EPS = 1e-5


def _normalize(x: Tensor, axes: tuple[int, ...], eps: float) -> Tensor:
    mu = mean(x, axes, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axes, keepdims=True)
    return centered * power(var + eps, -0.5)


def layer_norm(x: Tensor, normalized_ndim: int = 1, gain: Tensor | None = None,
               bias: Tensor | None = None, eps: float = EPS) -> Tensor:
    """Normalize over the trailing ``normalized_ndim`` axes, then apply the affine map."""
    axes = tuple(range(x.ndim - normalized_ndim, x.ndim))
    y = _normalize(x, axes, eps)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


def instance_norm(x: Tensor, eps: float = EPS) -> Tensor:
    """Per-sample, per-channel normalization over the spatial axes of (B, C, *spatial)."""
    return _normalize(x, tuple(range(2, x.ndim)), eps)


# misc -----------------------------------------------------------------------

def one_hot(labels: np.ndarray, num_classes: int, axis: int = 1, dtype=None) -> Tensor:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes - 1}]")
    eye = np.eye(num_classes, dtype=dtype or _DEFAULT_DTYPE)
    return Tensor(np.moveaxis(eye[labels], -1, axis), dtype=dtype or _DEFAULT_DTYPE)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)

