"""Dense float64 tensors with a minimal reverse-mode tape.

Every differentiable operation is a :class:`Function` subclass with a pure
``forward`` over numpy arrays and a pure ``backward`` mapping the output
gradient to one gradient per input.  ``Function.apply`` records the call on the
output tensor; :func:`grad` / :meth:`Tensor.backward` replay the records in
reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_fn", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._fn: Function | None = None
        self._parents: tuple[Tensor, ...] = ()

    # -- basic info -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators --------------------------------------------------------
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        for leaf, g in backprop(self, seed).items():
            leaf.grad = g if leaf.grad is None else leaf.grad + g


class Parameter(Tensor):
    """A leaf tensor that is trained."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """One differentiable operation.

    Subclasses implement ``forward(*arrays, **kwargs) -> array`` and
    ``backward(grad) -> tuple`` with one entry per positional input (``None``
    for inputs that receive no gradient).  State needed by ``backward`` is
    stashed on ``self`` during ``forward``.
    """

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        fn = cls()
        tensors = tuple(as_tensor(x) for x in inputs)
        out = Tensor(fn.forward(*(t.data for t in tensors), **kwargs))
        if _grad_enabled and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._fn = fn
            out._parents = tensors
        return out


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backprop(output: Tensor, seed=None) -> dict[Tensor, np.ndarray]:
    """Gradients of ``output`` (weighted by ``seed``) for every reachable leaf.

    Gradients from fan-out are summed.  Leaves that do not influence the
    output are absent from the result; :func:`grad` maps them to zeros.
    """
    if seed is None:
        if output.size != 1:
            raise ValueError(f"backprop needs a seed for non-scalar output of shape {output.shape}")
        seed = np.ones_like(output.data)
    seed = np.broadcast_to(np.asarray(seed, dtype=DTYPE), output.shape).copy()
    if not output.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(output): seed}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topo_order(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._fn is None:
            leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._fn.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return leaves


def grad(output: Tensor, inputs: Sequence[Tensor], seed=None) -> list[np.ndarray]:
    """Functional gradient; unreachable inputs get zeros."""
    found = backprop(output, seed)
    return [found.get(t, np.zeros_like(t.data)) for t in inputs]


# ---------------------------------------------------------------------------
# elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Add(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(-g, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = g / self.b
        gb = -g * self.a / (self.b * self.b)
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, g):
        return (g * self.out,)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, g):
        return (g / self.a,)


class Sqrt(Function):
    # d sqrt / dx at 0 is taken as 0 so clamped radicands stay finite
    def forward(self, a):
        self.out = np.sqrt(a)
        return self.out

    def backward(self, g):
        safe = np.where(self.out > 0, self.out, 1.0)
        return (np.where(self.out > 0, 0.5 * g / safe, 0.0),)


class ClampMin(Function):
    def forward(self, a, lo=0.0):
        self.keep = a >= lo
        return np.maximum(a, lo)

    def backward(self, g):
        return (g * self.keep,)


class Sigmoid(Function):
    def forward(self, a):
        self.out = 0.5 * (1.0 + np.tanh(0.5 * a))
        return self.out

    def backward(self, g):
        return (g * self.out * (1.0 - self.out),)


class ReLU(Function):
    def forward(self, a):
        self.mask = a > 0
        return a * self.mask

    def backward(self, g):
        return (g * self.mask,)


class LeakyReLU(Function):
    def forward(self, a, slope=0.2):
        self.scale = np.where(a > 0, 1.0, slope)
        return a * self.scale

    def backward(self, g):
        return (g * self.scale,)


_GELU_C = np.sqrt(2.0 / np.pi)


class GELU(Function):
    """tanh approximation of GELU."""

    def forward(self, a):
        self.a = a
        self.t = np.tanh(_GELU_C * (a + 0.044715 * a**3))
        return 0.5 * a * (1.0 + self.t)

    def backward(self, g):
        a, t = self.a, self.t
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * dt),)


def add(a, b):
    return Add.apply(a, b)


def sub(a, b):
    return Sub.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def div(a, b):
    return Div.apply(a, b)


def neg(a):
    return Neg.apply(a)


def exp(a):
    return Exp.apply(a)


def log(a):
    return Log.apply(a)


def sqrt(a):
    return Sqrt.apply(a)


def clamp_min(a, lo=0.0):
    return ClampMin.apply(a, lo=lo)


def sigmoid(a):
    return Sigmoid.apply(a)


def relu(a):
    return ReLU.apply(a)


def leaky_relu(a, slope=0.2):
    return LeakyReLU.apply(a, slope=slope)


def gelu(a):
    return GELU.apply(a)


# ---------------------------------------------------------------------------
# reductions and shape plumbing


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.shape).copy(),)


def tsum(a, axis=None, keepdims=False):
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


class Reshape(Function):
    def forward(self, a, shape=()):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.axes = axes if axes is not None else tuple(reversed(range(a.ndim)))
        return a.transpose(self.axes)

    def backward(self, g):
        return (g.transpose(np.argsort(self.axes)),)


class GetItem(Function):
    def forward(self, a, index=None):
        self.shape, self.index = a.shape, index
        return a[index]

    def backward(self, g):
        out = np.zeros(self.shape, dtype=DTYPE)
        if _is_basic_index(self.index):
            out[self.index] += g
        else:
            np.add.at(out, self.index, g)
        return (out,)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        return tuple(np.split(g, self.splits, axis=self.axis))


class Roll(Function):
    def forward(self, a, shift=0, axis=None):
        self.shift, self.axis = shift, axis
        return np.roll(a, shift, axis=axis)

    def backward(self, g):
        neg_shift = tuple(-s for s in self.shift) if isinstance(self.shift, tuple) else -self.shift
        return (np.roll(g, neg_shift, axis=self.axis),)


def reshape(a, shape):
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes=None):
    return Transpose.apply(a, axes=tuple(axes) if axes else None)


def getitem(a, index):
    return GetItem.apply(a, index=index)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def roll(a, shift, axis):
    return Roll.apply(a, shift=shift, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra and normalisation


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, g):
        ga = g @ np.swapaxes(self.b, -1, -2)
        gb = np.swapaxes(self.a, -1, -2) @ g
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


def matmul(a, b):
    return MatMul.apply(a, b)


def linear(x, weight, bias=None):
    """``x @ weight (+ bias)`` with weight stored as (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else y + bias


class Softmax(Function):
    def forward(self, a, axis=-1):
        z = np.exp(a - a.max(axis=axis, keepdims=True))
        self.out = z / z.sum(axis=axis, keepdims=True)
        self.axis = axis
        return self.out

    def backward(self, g):
        y = self.out
        return (y * (g - (g * y).sum(axis=self.axis, keepdims=True)),)


def softmax(a, axis=-1):
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"softmax axis {axis} out of range for rank {a.ndim}")
    return Softmax.apply(a, axis=axis)


class LayerNorm(Function):
    def forward(self, x, gamma, beta, eps=1e-5):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.rstd = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.rstd
        self.gamma = gamma
        self.xshape = x.shape
        return self.xhat * gamma + beta

    def backward(self, g):
        xhat, rstd = self.xhat, self.rstd
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * self.gamma
        dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
        return dx, dgamma, dbeta


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    x, gamma = as_tensor(x), as_tensor(gamma)
    if x.shape[-1] != gamma.shape[-1]:
        raise ValueError(f"layer_norm: last extent {x.shape[-1]} != {gamma.shape[-1]}")
    return LayerNorm.apply(x, gamma, beta, eps=eps)


# ---------------------------------------------------------------------------
# spatial ops


class Conv2d(Function):
    """Cross-correlation of a single ``C×H×W`` map with zero padding."""

    def forward(self, x, w, b=None, stride=1, pad=0):
        cin, h, wd = x.shape
        cout, cin_k, kh, kw = w.shape
        if cin != cin_k:
            raise ValueError(f"conv2d: input has {cin} channels, kernel expects {cin_k}")
        if kh > h + 2 * pad or kw > wd + 2 * pad:
            raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        ho, wo = win.shape[1], win.shape[2]
        cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, cin * kh * kw)
        wmat = w.reshape(cout, -1)
        out = (cols @ wmat.T).T.reshape(cout, ho, wo)
        if b is not None:
            out = out + b[:, None, None]
        self.cols, self.wmat, self.wshape = cols, wmat, w.shape
        self.xpshape, self.stride, self.pad, self.out_hw = xp.shape, stride, pad, (ho, wo)
        self.has_bias = b is not None
        return out

    def backward(self, g):
        cout, cin, kh, kw = self.wshape
        ho, wo = self.out_hw
        s = self.stride
        g2 = g.reshape(cout, ho * wo)
        gw = (g2 @ self.cols).reshape(self.wshape)
        dcols = (g2.T @ self.wmat).reshape(ho, wo, cin, kh, kw)
        gxp = np.zeros(self.xpshape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, i, j].transpose(2, 0, 1)
        p = self.pad
        gx = gxp[:, p : gxp.shape[1] - p, p : gxp.shape[2] - p] if p else gxp
        gb = g.sum(axis=(1, 2)) if self.has_bias else None
        return gx, gw, gb


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    if b is None:
        return Conv2d.apply(x, w, stride=stride, pad=pad)
    return Conv2d.apply(x, w, b, stride=stride, pad=pad)


class UpsampleNearest2x(Function):
    def forward(self, x):
        return x.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(self, g):
        *lead, h, w = g.shape
        return (g.reshape(*lead, h // 2, 2, w // 2, 2).sum(axis=(-3, -1)),)


def upsample_nearest2x(x):
    return UpsampleNearest2x.apply(x)


class BilinearSample(Function):
    """Sample ``map[..., C, H, W]`` at ``points[..., P, 2]`` (x=column, y=row, pixel units).

    Neighbours outside the map contribute zero.  Leading dims of ``map`` and
    ``points`` must match.  The blend is held as a sparse ``(B·P, B·H·W)``
    interpolation matrix so the map gradient is one transposed product.
    """

    def forward(self, fmap, points):
        *lead, c, h, w = fmap.shape
        nb = int(np.prod(lead)) if lead else 1
        p = points.shape[-2]
        rows = fmap.reshape(nb, c, h * w).transpose(0, 2, 1).reshape(nb * h * w, c)
        pts = points.reshape(nb * p, 2)
        x, y = pts[:, 0], pts[:, 1]
        x0, y0 = np.floor(x), np.floor(y)
        fx, fy = x - x0, y - y0
        x0, y0 = x0.astype(np.int64), y0.astype(np.int64)
        offset = np.repeat(np.arange(nb) * (h * w), p)
        idx = np.empty((nb * p, 4), dtype=np.int64)
        wts = np.empty((nb * p, 4), dtype=DTYPE)
        dwx = np.empty_like(wts)
        dwy = np.empty_like(wts)
        for j, (dx, dy) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
            xi, yi = x0 + dx, y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            idx[:, j] = np.where(valid, yi * w + xi, 0) + offset
            wx = fx if dx else 1.0 - fx
            wy = fy if dy else 1.0 - fy
            wts[:, j] = wx * wy * valid
            dwx[:, j] = (wy if dx else -wy) * valid
            dwy[:, j] = (wx if dy else -wx) * valid
        shape = (nb * p, nb * h * w)
        self.pattern = (idx.ravel(), np.arange(0, 4 * nb * p + 1, 4))
        self.interp = sparse.csr_matrix((wts.ravel(), *self.pattern), shape=shape)
        self.dwx, self.dwy, self.rows, self.shape2d = dwx, dwy, rows, shape
        self.dims, self.map_shape, self.pts_shape = (nb, c, h, w, p), fmap.shape, points.shape
        out = self.interp @ rows
        return out.reshape(nb, p, c).transpose(0, 2, 1).reshape(*lead, c, p)

    def backward(self, g):
        nb, c, h, w, p = self.dims
        gr = g.reshape(nb, c, p).transpose(0, 2, 1).reshape(nb * p, c)
        grows = self.interp.T @ gr
        gmap = grows.reshape(nb, h * w, c).transpose(0, 2, 1).reshape(self.map_shape)
        ddx = sparse.csr_matrix((self.dwx.ravel(), *self.pattern), shape=self.shape2d) @ self.rows
        ddy = sparse.csr_matrix((self.dwy.ravel(), *self.pattern), shape=self.shape2d) @ self.rows
        gx = np.einsum("pc,pc->p", gr, ddx)
        gy = np.einsum("pc,pc->p", gr, ddy)
        return gmap, np.stack([gx, gy], axis=-1).reshape(self.pts_shape)


def bilinear_sample(fmap, points) -> Tensor:
    return BilinearSample.apply(fmap, points)


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-interpolation matrix for half-pixel (align-corners-false) bilinear resize, edges clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    r = np.zeros((n_out, n_in), dtype=DTYPE)
    r[np.arange(n_out), lo] += 1.0 - frac
    r[np.arange(n_out), hi] += frac
    return r


def resize_bilinear(x, size: tuple[int, int]) -> Tensor:
    """Differentiable bilinear resize of ``[..., H, W]`` to ``size``."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    ry = Tensor(resize_matrix(h, size[0]))
    rxt = Tensor(resize_matrix(w, size[1]).T)
    return matmul(matmul(ry, x), rxt)
