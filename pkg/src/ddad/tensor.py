"""Dense tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every forward call records its inputs and a
closure that routes the output gradient back to them.  Tensors default to
float32; pass float64 arrays for gradient checking.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, GraphError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    # -- graph ------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad for every reachable tensor."""
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

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

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ----------------------------------------------------------


def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_binary_shapes(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_binary_shapes(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_binary_shapes(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_binary_shapes(a, b, "div")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), backward)


def square(a):
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), backward)


def absolute(a):
    """|a|; subgradient at exactly 0 is 0."""
    a = _as_tensor(a)
    sign = np.sign(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * sign)

    return _make(np.abs(a.data), (a,), backward)


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    out_data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(out_data, (a,), backward)


def sqrt(a):
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative value")
    out_data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (0.5 / out_data))

    return _make(out_data, (a,), backward)


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def relu(a):
    """max(a, 0); subgradient at 0 is 0."""
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _make(out_data, (a,), backward)


def sigmoid(a):
    a = _as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def clamp(a, lo: float, hi: float):
    """Clip to [lo, hi]; gradient passes through wherever lo <= a <= hi."""
    a = _as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(np.clip(a.data, lo, hi), (a,), backward)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "subtract": sub,
    "mul": mul,
    "multiply": mul,
    "div": div,
    "divide": div,
    "square": square,
    "abs": absolute,
    "log": log,
    "sqrt": sqrt,
    "exp": exp,
    "relu": relu,
    "sigmoid": sigmoid,
    "neg": lambda a: mul(a, -1.0),
}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name (binary kinds take b)."""
    fn = _ELEMENTWISE.get(kind)
    if fn is None:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return fn(a, b) if b is not None else fn(a)


# -- shape ops ------------------------------------------------------------


def reshape(a, shape):
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.data.size} elements) to {shape}")
    old_shape = a.shape

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old_shape))

    return _make(a.data.reshape(shape), (a,), backward)


def reduce(kind: str, a, axes=None, keepdims: bool = False):
    """Sum or mean over the given axes (all axes when None)."""
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduce kind {kind!r}")
    a = _as_tensor(a)
    if axes is None:
        axes_t = tuple(range(a.data.ndim))
    elif isinstance(axes, int):
        axes_t = (axes,)
    else:
        axes_t = tuple(axes)
    count = int(np.prod([a.shape[ax] for ax in axes_t])) if axes_t else 1
    out_data = a.data.sum(axis=axes_t, keepdims=keepdims)
    if kind == "mean":
        out_data = out_data / count

    def backward(g):
        if not a.requires_grad:
            return
        if not keepdims:
            g = np.expand_dims(g, axes_t) if axes_t else g
        g = np.broadcast_to(g, a.shape)
        if kind == "mean":
            g = g / count
        a._accumulate(np.ascontiguousarray(g))

    return _make(out_data, (a,), backward)


def mean(a, axes=None, keepdims: bool = False):
    return reduce("mean", a, axes, keepdims)


def tsum(a, axes=None, keepdims: bool = False):
    return reduce("sum", a, axes, keepdims)


# -- convolution ----------------------------------------------------------


def _im2col(xp: np.ndarray, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
    return cols


def _pad2d(x: np.ndarray, padding: int) -> np.ndarray:
    if not padding:
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    xp[:, :, padding:padding + h, padding:padding + w] = x
    return xp


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    n, ci, h, wd = x.shape
    co, ci2, k, _ = w.shape
    if ci != ci2:
        raise ShapeError(f"conv2d: input has {ci} channels, weight expects {ci2}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: output dims {ho}x{wo} below 1")
    xp = _pad2d(x, padding)
    cols = _im2col(xp, k, s=stride, ho=ho, wo=wo)
    y = np.matmul(
        w.reshape(co, -1)[None], cols.reshape(n, ci * k * k, ho * wo)
    ).reshape(n, co, ho, wo)
    return y, cols


def _conv_dx(dy: np.ndarray, w: np.ndarray, stride: int, padding: int, h: int, wd: int) -> np.ndarray:
    n, co, ho, wo = dy.shape
    _, ci, k, _ = w.shape
    dcols = np.matmul(
        w.reshape(co, -1).T[None], dy.reshape(n, co, ho * wo)
    ).reshape(n, ci, k, k, ho, wo)
    dxp = np.zeros((n, ci, h + 2 * padding, wd + 2 * padding), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    if padding:
        return dxp[:, :, padding:padding + h, padding:padding + wd]
    return dxp


def _conv_dw(cols: np.ndarray, dy: np.ndarray) -> np.ndarray:
    n, ci, k, _, ho, wo = cols.shape
    co = dy.shape[1]
    dw = np.matmul(
        dy.reshape(n, co, ho * wo), cols.reshape(n, ci * k * k, ho * wo).transpose(0, 2, 1)
    ).sum(axis=0)
    return dw.reshape(co, ci, k, k)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0):
    """2-D convolution; x [N,Ci,H,W], weight [Co,Ci,k,k], bias [Co]."""
    x = _as_tensor(x)
    weight = _as_tensor(weight, x)
    y, cols = _conv_fwd(x.data, weight.data, stride, padding)
    parents = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias, x)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({weight.shape[0]},)")
        y = y + bias.data.reshape(1, -1, 1, 1)
        parents.append(bias)
    h, wd = x.shape[2], x.shape[3]

    def backward(g):
        if x.requires_grad:
            x._accumulate(_conv_dx(g, weight.data, stride, padding, h, wd))
        if weight.requires_grad:
            weight._accumulate(_conv_dw(cols, g))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return _make(y, parents, backward)


def conv_transpose2d(x, weight, bias=None, stride: int = 1, padding: int = 0):
    """Transposed convolution; x [N,Ci,H,W], weight [Ci,Co,k,k], bias [Co].

    Forward is the adjoint of conv2d with the same geometry:
    H' = (H-1)*stride - 2*padding + k.
    """
    x = _as_tensor(x)
    weight = _as_tensor(weight, x)
    n, ci, h, wd = x.shape
    ci2, co, k, _ = weight.shape
    if ci != ci2:
        raise ShapeError(f"conv_transpose2d: input has {ci} channels, weight expects {ci2}")
    ho = (h - 1) * stride - 2 * padding + k
    wo = (wd - 1) * stride - 2 * padding + k
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_transpose2d: output dims {ho}x{wo} below 1")
    # weight [Ci,Co,k,k] plays the conv kernel [O=Ci, I=Co, k, k]
    y = _conv_dx(x.data, weight.data, stride, padding, ho, wo)
    parents = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias, x)
        if bias.shape != (co,):
            raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} != ({co},)")
        y = y + bias.data.reshape(1, -1, 1, 1)
        parents.append(bias)

    def backward(g):
        g_cols = None
        if x.requires_grad:
            dx, g_cols = _conv_fwd(g, weight.data, stride, padding)
            x._accumulate(dx)
        if weight.requires_grad:
            if g_cols is None:
                g_cols = _im2col(_pad2d(g, padding), k, stride, h, wd)
            weight._accumulate(_conv_dw(g_cols, x.data))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return _make(y, parents, backward)


# -- linear / batchnorm ---------------------------------------------------


def linear(x, weight, bias=None):
    """y = x @ weight.T + bias; x [N,F_in], weight [F_out,F_in]."""
    x = _as_tensor(x)
    weight = _as_tensor(weight, x)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: x has {x.shape[-1]} features, weight expects {weight.shape[1]}")
    y = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias, x)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        y = y + bias.data
        parents.append(bias)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data)
        if weight.requires_grad:
            weight._accumulate(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    return _make(y, parents, backward)


def batchnorm2d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, eps: float = 1e-5, momentum: float = 0.1):
    """Channel-wise batch normalization over [N,C,H,W].

    Train mode normalizes with biased batch statistics and updates the
    running arrays in place; eval mode treats the running stats as constants.
    """
    x = _as_tensor(x)
    gamma = _as_tensor(gamma, x)
    beta = _as_tensor(beta, x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d: gamma/beta shapes {gamma.shape}/{beta.shape} != ({c},)")
    axes = (0, 2, 3)
    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = ((x.data - mu) ** 2).mean(axis=axes, keepdims=True)  # biased (1/m)
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu.reshape(c).astype(running_mean.dtype)
        running_var *= (1.0 - momentum)
        running_var += momentum * var.reshape(c).astype(running_var.dtype)
        ivar = 1.0 / np.sqrt(var + eps)
    else:
        mu = running_mean.astype(x.dtype).reshape(1, c, 1, 1)
        ivar = (1.0 / np.sqrt(running_var.astype(x.dtype) + eps)).reshape(1, c, 1, 1)
    xhat = (x.data - mu) * ivar
    g4 = gamma.data.reshape(1, c, 1, 1)
    y = xhat * g4 + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * g4
            if training:
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                x._accumulate(ivar * (dxhat - s1 / m - xhat * (s2 / m)))
            else:
                x._accumulate(dxhat * ivar)

    return _make(y, (x, gamma, beta), backward)
