"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors store float32 data (row-major numpy arrays) and an optional grad of
the same shape.  Every op records a closure that pushes the incoming gradient
into its parents; ``Tensor.backward`` walks the recorded graph in reverse
topological order.  Reductions accumulate in float64 before casting back.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import DimensionError, GraphError

LOG_EPS = 1e-7  # clamp for log() inside loss terms


class Tensor:
    """Dense n-d float32 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def accum_grad(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float32, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Backpropagate from a scalar loss; consumes the recorded graph."""
        if self.data.size != 1:
            raise GraphError("backward() requires a scalar, got shape %s" % (self.shape,))
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # free the graph; leaf grads stay
        for node in topo:
            node._backward = None
            node._parents = ()

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast to reach g's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.astype(np.float32, copy=False)


# -- elementwise arithmetic ---------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        a.accum_grad(_unbroadcast(g, a.shape))
        b.accum_grad(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        a.accum_grad(_unbroadcast(g, a.shape))
        b.accum_grad(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        a.accum_grad(_unbroadcast(g * b.data, a.shape))
        b.accum_grad(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-d operands")

    def bwd(g):
        a.accum_grad(g @ b.data.T)
        b.accum_grad(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bwd)


def tabs(a) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        a.accum_grad(g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bwd)


def log_clamped(a, eps: float = LOG_EPS) -> Tensor:
    """log(max(x, eps)); gradient is zero on the clamped region."""
    a = _as_tensor(a)
    u = np.maximum(a.data, eps)

    def bwd(g):
        a.accum_grad(np.where(a.data >= eps, g / u, 0.0).astype(np.float32))

    return _make(np.log(u), (a,), bwd)


# -- activations --------------------------------------------------------

def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        a.accum_grad(np.where(a.data >= 0, g, np.float32(slope) * g))

    return _make(np.where(a.data >= 0, a.data, np.float32(slope) * a.data), (a,), bwd)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def bwd(g):
        a.accum_grad(g * (1.0 - out * out))

    return _make(out, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = expit(a.data).astype(np.float32)

    def bwd(g):
        a.accum_grad(g * out * (1.0 - out))

    return _make(out, (a,), bwd)


# -- shape ops ----------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape

    def bwd(g):
        a.accum_grad(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t.accum_grad(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bwd)


# -- reductions (float64 accumulation) ----------------------------------

def tsum(a) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        a.accum_grad(np.full(a.shape, g.reshape(-1)[0], dtype=np.float32))

    return _make(np.float32(a.data.sum(dtype=np.float64)), (a,), bwd)


def tmean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size

    def bwd(g):
        a.accum_grad(np.full(a.shape, g.reshape(-1)[0] / n, dtype=np.float32))

    return _make(np.float32(a.data.mean(dtype=np.float64)), (a,), bwd)


# -- convolution --------------------------------------------------------

def _check_conv_geom(h, w, kh, kw, stride, pad):
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise DimensionError("input smaller than kernel after padding")
    if (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride:
        raise DimensionError("padded size minus kernel not divisible by stride")


def _im2col(x, kh, kw, stride, pad):
    """Strided windows of the zero-padded input: (N, C, Ho, Wo, kh, kw)."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride, :, :]


def _col2im(gcols, out_shape, stride, pad):
    """Adjoint of _im2col: scatter-add windows back onto a (N,C,H,W) canvas."""
    n, c, ho, wo, kh, kw = gcols.shape
    _, _, h, w = out_shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + (ho - 1) * stride + 1 : stride,
               j : j + (wo - 1) * stride + 1 : stride] += gcols[:, :, :, :, i, j]
    return xp[:, :, pad : pad + h, pad : pad + w]


def conv2d(x, kernels, stride: int = 1, pad: int = 0) -> Tensor:
    """Strided cross-correlation.  Input (N,Cin,H,W) or (Cin,H,W); kernels
    (Cout,Cin,kh,kw).  Zero padding; no kernel flip."""
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.data.ndim != 4:
        raise DimensionError("conv2d expects 3/4-d input and 4-d kernels")
    n, cin, h, w = xd.shape
    cout, kcin, kh, kw = kernels.shape
    if cin != kcin:
        raise DimensionError("input has %d channels, kernels expect %d" % (cin, kcin))
    _check_conv_geom(h, w, kh, kw, stride, pad)
    cols = _im2col(xd, kh, kw, stride, pad)
    out = np.einsum("nchwij,ocij->nohw", cols, kernels.data, optimize=True)

    def bwd(g):
        g4 = g[None] if squeeze else g
        gk = np.einsum("nohw,nchwij->ocij", g4, cols, optimize=True)
        kernels.accum_grad(gk.astype(np.float32))
        gcols = np.einsum("nohw,ocij->nchwij", g4, kernels.data, optimize=True)
        gx = _col2im(gcols.astype(np.float32), xd.shape, stride, pad)
        x.accum_grad(gx[0] if squeeze else gx)

    return _make(out[0] if squeeze else out, (x, kernels), bwd)


def conv2d_transpose(x, kernels, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed convolution, the exact adjoint of ``conv2d``.  Input
    (N,Cin,H,W) or (Cin,H,W); kernels (Cin,Cout,kh,kw)."""
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.data.ndim != 4:
        raise DimensionError("conv2d_transpose expects 3/4-d input and 4-d kernels")
    n, cin, h, w = xd.shape
    kcin, cout, kh, kw = kernels.shape
    if cin != kcin:
        raise DimensionError("input has %d channels, kernels expect %d" % (cin, kcin))
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (w - 1) * stride - 2 * pad + kw
    if ho <= 0 or wo <= 0:
        raise DimensionError("non-positive transposed-conv output size")
    gcols = np.einsum("nohw,ocij->nchwij", xd, kernels.data, optimize=True)
    out = _col2im(gcols.astype(np.float32), (n, cout, ho, wo), stride, pad)

    def bwd(g):
        g4 = g[None] if squeeze else g
        cols = _im2col(g4, kh, kw, stride, pad)
        gx = np.einsum("nchwij,ocij->nohw", cols, kernels.data, optimize=True)
        gk = np.einsum("nohw,nchwij->ocij", xd, cols, optimize=True)
        kernels.accum_grad(gk.astype(np.float32))
        x.accum_grad(gx[0].astype(np.float32) if squeeze else gx.astype(np.float32))

    return _make(out[0] if squeeze else out, (x, kernels), bwd)


# -- batch normalization ------------------------------------------------

def batch_norm(x, gamma, beta, running_mean, running_var, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (N, H, W) for 4-d input or (N,) for 2-d.

    ``running_mean``/``running_var`` are plain numpy arrays updated in place
    during training and used verbatim in eval mode.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    nd = x.data.ndim
    axes = (0, 2, 3) if nd == 4 else (0,)
    shape = (1, -1, 1, 1) if nd == 4 else (1, -1)
    gb = gamma.data.reshape(shape)
    bb = beta.data.reshape(shape)
    if training:
        mu = x.data.mean(axis=axes, dtype=np.float64)
        var = x.data.var(axis=axes, dtype=np.float64)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    std = np.sqrt(var + eps).astype(np.float32)
    xhat = ((x.data - mu.reshape(shape)) / std.reshape(shape)).astype(np.float32)
    out = gb * xhat + bb
    nred = x.data.size // x.data.shape[1]

    def bwd(g):
        dbeta = g.sum(axis=axes, dtype=np.float64).astype(np.float32)
        dgamma = (g * xhat).sum(axis=axes, dtype=np.float64).astype(np.float32)
        beta.accum_grad(dbeta)
        gamma.accum_grad(dgamma)
        if training:
            gx = (gb / std.reshape(shape) / nred) * (
                nred * g - dbeta.reshape(shape) - xhat * dgamma.reshape(shape)
            )
        else:
            gx = g * gb / std.reshape(shape)
        x.accum_grad(gx.astype(np.float32))

    return _make(out, (x, gamma, beta), bwd)
