"""Minimal reverse-mode autodiff over float64 numpy arrays.

Ops execute eagerly and record vector-Jacobian closures on the result
node, so the computation graph is the trace of a forward pass. Gradients
accumulate in a fixed reverse-topological order, which keeps losses and
gradients bit-reproducible for identical inputs.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractError, NumericError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (for evaluation-only forward passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_vjps")

    def __init__(self, data, requires_grad=False, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = None
        self.op = op
        self._vjps = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, op="detach")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take_slice(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, op, vjps) -> Tensor:
    if not _grad_enabled:
        return Tensor(data, op=op)
    vjps = tuple((p, f) for p, f in vjps if p.requires_grad)
    out = Tensor(data, requires_grad=bool(vjps), op=op)
    out._vjps = vjps
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, "add", [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, "sub", [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(-g, b.shape)),
    ])


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, "neg", [(a, lambda g: -g)])


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, "mul", [
        (a, lambda g: _unbroadcast(g * b.data, a.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.shape)),
    ])


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have ndim >= 2")
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}: {exc}") from None

    def vjp_a(g):
        return _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)

    def vjp_b(g):
        return _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)

    return _node(data, "matmul", [(a, vjp_a), (b, vjp_b)])


def conv1d(x, w, bias=None, stride: int = 1) -> Tensor:
    """Cross-correlation with zero same-padding.

    x: (B, C_in, L); w: (C_out, C_in, K); output: (B, C_out, ceil(L/stride)).
    No kernel flip; padding splits the shortfall left = total//2.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects 3-D x and w, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d channel mismatch: x {x.shape}, w {w.shape}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    length = x.shape[2]
    k = w.shape[2]
    l_out = -(-length // stride)
    pad_total = max((l_out - 1) * stride + k - length, 0)
    pl = pad_total // 2
    pr = pad_total - pl
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr)))
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    data = np.einsum("bilk,oik->bol", windows, w.data, optimize=True)
    if bias is not None:
        bias = as_tensor(bias)
        data = data + bias.data[:, None]

    def vjp_x(g):
        gxp = np.zeros_like(xp)
        for kk in range(k):
            contrib = np.einsum("bol,oi->bil", g, w.data[:, :, kk], optimize=True)
            gxp[:, :, kk : kk + stride * l_out : stride] += contrib
        return gxp[:, :, pl : pl + length]

    def vjp_w(g):
        return np.einsum("bilk,bol->oik", windows, g, optimize=True)

    vjps = [(x, vjp_x), (w, vjp_w)]
    if bias is not None:
        vjps.append((bias, lambda g: g.sum(axis=(0, 2))))
    return _node(data, "conv1d", vjps)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)
    return _node(y, "sigmoid", [(x, lambda g: g * y * (1.0 - y))])


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _node(y, "tanh", [(x, lambda g: g * (1.0 - y * y))])


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0  # relu'(0) defined as 0
    return _node(np.where(mask, x.data, 0.0), "relu", [(x, lambda g: g * mask)])


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return y * (g - dot)

    return _node(y, "softmax", [(x, vjp)])


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    vjps = []
    offset = 0
    for t in tensors:
        width = t.shape[axis]
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(offset, offset + width)
        vjps.append((t, lambda g, sl=tuple(sl): g[sl]))
        offset += width
    return _node(data, "concat", vjps)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)
    vjps = [(t, lambda g, i=i: np.take(g, i, axis=axis))
            for i, t in enumerate(tensors)]
    return _node(data, "stack", vjps)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _node(x.data.reshape(shape), "reshape", [(x, lambda g: g.reshape(old))])


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(x.data, axes), "transpose",
                 [(x, lambda g: np.transpose(g, inverse))])


def take_slice(x, idx) -> Tensor:
    """Basic (non-fancy) indexing with gradient scatter-back."""
    x = as_tensor(x)
    data = x.data[idx]
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape)
        gx[idx] = g
        return gx

    return _node(data, "slice", [(x, vjp)])


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    data = x.data.mean(axis=axis)
    shape = x.shape

    def vjp(g):
        if axis is None:
            return np.full(shape, g / x.size)
        count = shape[axis]
        return np.broadcast_to(np.expand_dims(g, axis), shape) / count

    return _node(data, "mean", [(x, vjp)])


def tensor_sum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis)
    shape = x.shape

    def vjp(g):
        if axis is None:
            return np.full(shape, g)
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return _node(data, "sum", [(x, vjp)])


def mse(pred, target) -> Tensor:
    """Mean squared error over all entries (scalar output)."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    return _node(np.asarray((diff * diff).sum() / n), "mse", [
        (pred, lambda g: (2.0 / n) * diff * g),
        (target, lambda g: (-2.0 / n) * diff * g),
    ])


def topo_order(root: Tensor) -> list[Tensor]:
    """Nodes in topological order (inputs before consumers)."""
    order, visited, stack_ = [], set(), [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent, _ in node._vjps:
            if id(parent) not in visited:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor, params=None) -> None:
    """Populate .grad for every requires_grad tensor reachable from loss.

    Parameters listed in ``params`` but unreachable from the loss get zero
    gradients. The loss must be scalar.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    order = topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in node._vjps:
            g = vjp(node.grad)
            parent.grad = g if parent.grad is None else parent.grad + g
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def grad_check(fn, params: dict, eps: float = 1e-5) -> dict:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` rebuilds and returns the scalar loss from the current values of
    ``params`` (a name -> Tensor mapping). Returns name -> max relative
    error, using |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8) per element.
    """
    zero_grads(params.values())
    loss = fn()
    backward(loss, params.values())
    analytic = {}
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        analytic[name] = p.grad.copy()

    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        fd = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn().data)
            flat[i] = orig - eps
            lo = float(fn().data)
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * eps)
        ga = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(fd)), 1e-8)
        errors[name] = float(np.max(np.abs(ga - fd) / denom)) if flat.size else 0.0
    return errors
