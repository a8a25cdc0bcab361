"""Dense tensors with reverse-mode automatic differentiation.

Storage is a numpy array (float32 by default, float64 for gradient checks).
Convolutions run on torch's ATen CPU kernels; the autodiff graph, every other
op and all backward rules are plain numpy.
"""
from __future__ import annotations

import contextlib

import numpy as np
import torch
import torch.nn.functional as F

__all__ = [
    "Tensor", "NonFiniteError", "no_grad", "is_grad_enabled", "tensor",
    "conv2d", "conv_transpose2d", "layer_norm", "linear", "matmul",
    "gelu", "softplus", "sigmoid", "tanh", "exp", "log", "global_avg_pool",
    "cross_entropy", "check_finite",
]

_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf shows up in a forward or backward pass."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {where}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _prev=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward = _backward

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- graph ------------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=False)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        check_finite(self.data, "forward output")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._prev:
                    # interior buffers are not needed after propagation
                    node.grad = None
        for node in order:
            if node.grad is not None:
                check_finite(node.grad, "gradient")

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis, keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def tensor(data, requires_grad=False, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if req:
        return Tensor(data, True, parents, backward)
    return Tensor(data)


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), _bw)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), _bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: a._accumulate(-g))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: a._accumulate(-g * out * out))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * out))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: a._accumulate(g * _sigmoid(x)))


def gelu(a: Tensor) -> Tensor:
    """GeLU, tanh approximation (forward and backward use the same form)."""
    x = torch.from_numpy(np.ascontiguousarray(a.data))
    out = F.gelu(x, approximate="tanh").numpy()

    def _bw(g):
        a._accumulate(torch.ops.aten.gelu_backward(torch.from_numpy(np.ascontiguousarray(g)), x,
                                                   approximate="tanh").numpy())

    return _make(out, (a,), _bw)


# -- shape ----------------------------------------------------------------
def reshape(a: Tensor, shape: tuple) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: a._accumulate(g.transpose(inv)))


def getitem(a: Tensor, idx) -> Tensor:
    def _bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _make(a.data[idx], (a,), _bw)


def concat(tensors: list, axis: int = 0) -> Tensor:
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _bw(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _bw)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(np.asarray(out), (a,), _bw)


# -- linear algebra -------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dims of 3-d operands are batch dims."""

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), _bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, transpose(weight, (1, 0)))
    return out + bias if bias is not None else out


# -- convolution ----------------------------------------------------------
def _t(x: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(x))


def _check_conv(x: np.ndarray, w: np.ndarray, groups: int, transposed: bool) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv expects 4-d input and weight, got {x.shape} and {w.shape}")
    c = x.shape[1]
    if c % groups:
        raise ValueError(f"input channels {c} not divisible by groups {groups}")
    expect = w.shape[0] if transposed else w.shape[1] * groups
    if c != expect:
        raise ValueError(f"input has {c} channels, weight {w.shape} expects {expect} (groups={groups})")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation over NCHW input; output dims (H + 2p - k) // s + 1."""
    _check_conv(x.data, weight.data, groups, False)
    k = weight.shape[2]
    h, w_ = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
    if h < k or w_ < weight.shape[3]:
        raise ValueError(f"padded input {h}x{w_} smaller than kernel {k}x{weight.shape[3]}")
    b = _t(bias.data) if bias is not None else None
    out = F.conv2d(_t(x.data), _t(weight.data), b, stride, padding, 1, groups).numpy()

    def _bw(g):
        gi, gw, _ = torch.ops.aten.convolution_backward(
            _t(g), _t(x.data), _t(weight.data), None, [stride] * 2, [padding] * 2, [1, 1],
            False, [0, 0], groups, [x.requires_grad, weight.requires_grad, False])
        if x.requires_grad:
            x._accumulate(gi.numpy())
        if weight.requires_grad:
            weight._accumulate(gw.numpy())
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, _bw)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0, groups: int = 1) -> Tensor:
    """Transposed convolution; weight layout (C_in, C_out / groups, k, k)."""
    _check_conv(x.data, weight.data, groups, True)
    out = F.conv_transpose2d(_t(x.data), _t(weight.data), None, stride, padding,
                             output_padding, groups).numpy()

    def _bw(g):
        gi, gw, _ = torch.ops.aten.convolution_backward(
            _t(g), _t(x.data), _t(weight.data), None, [stride] * 2, [padding] * 2, [1, 1],
            True, [output_padding] * 2, groups, [x.requires_grad, weight.requires_grad, False])
        if x.requires_grad:
            x._accumulate(gi.numpy())
        if weight.requires_grad:
            weight._accumulate(gw.numpy())

    y = _make(out, (x, weight), _bw)
    return y + bias.reshape(1, -1, 1, 1) if bias is not None else y


# -- normalisation, pooling, losses --------------------------------------
def layer_norm(x: Tensor, axis: int = -1, eps: float = 1e-6) -> Tensor:
    """Zero-mean, unit-variance normalisation along ``axis``; no affine part."""
    d = x.data
    mu = d.mean(axis=axis, keepdims=True)
    xc = d - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv

    def _bw(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        x._accumulate(inv * (g - gm - xhat * gx))

    return _make(xhat, (x,), _bw)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return tsum(x, axis=(2, 3)) * (1.0 / (h * w))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    lsm = log_softmax(logits.data)
    rows = np.arange(n)
    loss = -lsm[rows, labels].mean()

    def _bw(g):
        p = np.exp(lsm)
        p[rows, labels] -= 1.0
        logits._accumulate(g * p / n)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), _bw)
