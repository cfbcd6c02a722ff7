"""Dense tensors with reverse-mode automatic differentiation.

Covers exactly the operation set the three GAN architectures need:
convolution, affine maps, leaky ReLU, tanh, nearest 2x upsampling,
2x average-pool downsampling, pixelwise feature normalization,
minibatch standard deviation, plus the elementwise/reduction glue
(add, mul, softplus, mean, reshape, concat) used by the losses.

Arithmetic is float32 by default; float64 exists for gradient checks.
Tensors are immutable once an operation has produced them; only the
optimizer mutates parameter values in place.
"""

from __future__ import annotations

import os

import numpy as np

from lesionforge import _kernels

DEFAULT_DTYPE = np.float32
_ALLOWED_DTYPES = (np.float32, np.float64)

# When enabled, every op output is checked for NaN/Inf.
DEBUG_FINITE = bool(os.environ.get("LESIONFORGE_DEBUG_FINITE"))

_grad_enabled = True


class TensorError(ValueError):
    pass


class ShapeError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


class no_grad:
    """Context manager disabling graph construction (used for sampling)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is not None and np.dtype(dtype) not in _ALLOWED_DTYPES:
            raise TensorError(f"unsupported dtype {dtype}; use float32 or float64")
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype != DEFAULT_DTYPE:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        if DEBUG_FINITE and not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor constructed with non-finite elements")

    # --- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # --- graph management ----------------------------------------------
    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.dtype)

    def astype(self, dtype):
        """Leaf copy in another precision (graph not carried over)."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self):
        if self.size != 1:
            raise TensorError(f"backward() needs a scalar, got shape {self.shape}")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # --- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)


class Parameter(Tensor):
    """Trainable tensor with a unique dotted name and fan-in bookkeeping.

    ``lr_scale`` is sqrt(2 / fan_in) when equalized learning rate is on,
    and 1.0 otherwise; the optimizer multiplies its effective step by it.
    """

    __slots__ = ("name", "fan_in", "lr_scale")

    def __init__(self, data, name, fan_in, equalized=False, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        if not name:
            raise TensorError("parameter needs a name")
        if fan_in < 1:
            raise TensorError(f"fan_in must be positive, got {fan_in}")
        self.name = name
        self.fan_in = int(fan_in)
        self.lr_scale = float(np.sqrt(2.0 / fan_in)) if equalized else 1.0

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape}, lr_scale={self.lr_scale:.4g})"


# --- op plumbing ---------------------------------------------------------

def _wrap(out_data, parents, backward_fn):
    if DEBUG_FINITE and not np.all(np.isfinite(out_data)):
        raise NonFiniteError("operation produced non-finite elements")
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    t = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    if needs:
        t._parents = tuple(parents)
        t._backward = backward_fn
    return t


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


# --- elementwise & reductions ---------------------------------------------

def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g if a.shape == out.shape else np.sum(g).reshape(a.shape))
        if b.requires_grad:
            b._accumulate(g if b.shape == out.shape else np.sum(g).reshape(b.shape))

    return _wrap(out, (a, b), bwd)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            ga = g * b.data
            a._accumulate(ga if a.shape == out.shape else np.sum(ga).reshape(a.shape))
        if b.requires_grad:
            gb = g * a.data
            b._accumulate(gb if b.shape == out.shape else np.sum(gb).reshape(b.shape))

    return _wrap(out, (a, b), bwd)


def tsum(x):
    x = _as_tensor(x)
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g, x.shape).astype(x.dtype))

    return _wrap(out, (x,), bwd)


def tmean(x):
    x = _as_tensor(x)
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    inv = 1.0 / x.size

    def bwd(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g * inv, x.shape).astype(x.dtype))

    return _wrap(out, (x,), bwd)


def reshape(x, shape):
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    return _wrap(out, (x,), bwd)


def flatten(x):
    return reshape(x, (x.shape[0], -1))


def concat_channels(parts):
    """Concatenate N,C,H,W tensors along the channel axis."""
    parts = [_as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.shape[1] for p in parts]

    def bwd(g):
        off = 0
        for p, c in zip(parts, sizes):
            if p.requires_grad:
                p._accumulate(g[:, off:off + c])
            off += c

    return _wrap(out, tuple(parts), bwd)


def broadcast_spatial(x, h, w):
    """Broadcast an N,C,1,1 tensor to N,C,h,w (gradient sums spatially)."""
    x = _as_tensor(x)
    if x.ndim != 4 or x.shape[2] != 1 or x.shape[3] != 1:
        raise ShapeError(f"broadcast_spatial expects N,C,1,1 input, got {x.shape}")
    out = np.broadcast_to(x.data, (x.shape[0], x.shape[1], h, w)).copy()

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.sum(axis=(2, 3), keepdims=True))

    return _wrap(out, (x,), bwd)


# --- activations ----------------------------------------------------------

def leaky_relu(x, slope=0.2):
    x = _as_tensor(x)
    mask = x.data >= 0
    out = np.where(mask, x.data, x.data * x.dtype.type(slope))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(np.where(mask, g, g * x.dtype.type(slope)))

    return _wrap(out, (x,), bwd)


def tanh_act(x):
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - out * out))

    return _wrap(out, (x,), bwd)


def softplus(x):
    """log(1 + exp(x)) in the overflow-safe form max(x,0) + log1p(exp(-|x|))."""
    x = _as_tensor(x)
    out = np.maximum(x.data, 0) + np.log1p(np.exp(-np.abs(x.data)))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * _sigmoid(x.data))

    return _wrap(out, (x,), bwd)


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_values(x):
    """Plain-array sigmoid of a tensor's values (metrics only, no graph)."""
    return _sigmoid(x.data if isinstance(x, Tensor) else np.asarray(x))


# --- structured ops ---------------------------------------------------------

def conv2d(x, weights, bias=None, stride=1, padding=0):
    """2-D cross-correlation over N,Cin,H,W with Cout,Cin,kh,kw weights."""
    x = _as_tensor(x)
    weights = _as_tensor(weights)
    if stride < 1 or padding < 0:
        raise ShapeError(f"bad stride/padding: {stride}/{padding}")
    try:
        out = _kernels.conv_forward(x.data, weights.data, stride, padding)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weights.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} != ({weights.shape[0]},)")
        out = out + bias.data.reshape(1, -1, 1, 1)

    def bwd(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x._accumulate(_kernels.conv_grad_input(g, weights.data, x.shape, stride, padding))
        if weights.requires_grad:
            weights._accumulate(_kernels.conv_grad_weight(g, x.data, weights.shape, stride, padding))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, weights) if bias is None else (x, weights, bias)
    return _wrap(out, parents, bwd)


def dense(x, weights, bias=None):
    """Affine map: (N,D) @ (D,K) + (K,)."""
    x = _as_tensor(x)
    weights = _as_tensor(weights)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense shapes do not chain: {x.shape} @ {weights.shape}")
    if x.dtype != weights.dtype:
        raise ShapeError(f"dtype mismatch: input {x.dtype}, weights {weights.dtype}")
    out = x.data @ weights.data
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weights.shape[1],):
            raise ShapeError(f"bias shape {bias.shape} != ({weights.shape[1]},)")
        out = out + bias.data

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g @ weights.data.T)
        if weights.requires_grad:
            weights._accumulate(x.data.T @ g)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    parents = (x, weights) if bias is None else (x, weights, bias)
    return _wrap(out, parents, bwd)


def upsample2x_nearest(x):
    """Replicate each pixel into a 2x2 block; gradient sums the block."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"expected N,C,H,W input, got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def bwd(g):
        if x.requires_grad:
            N, C, H2, W2 = g.shape
            x._accumulate(g.reshape(N, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5)))

    return _wrap(out, (x,), bwd)


def downsample2x_avg(x):
    """Average each 2x2 block into one pixel. Extents must be even."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"expected N,C,H,W input, got {x.shape}")
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"downsample2x_avg needs even extents, got {H}x{W}")
    out = x.data.reshape(N, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.repeat(2, axis=2).repeat(2, axis=3) * x.dtype.type(0.25))

    return _wrap(out, (x,), bwd)


def pixelnorm(x, epsilon=1e-8):
    """Scale each pixel's channel vector to (near) unit RMS."""
    x = _as_tensor(x)
    if x.ndim != 4 or x.shape[1] < 1:
        raise ShapeError(f"expected N,C,H,W input, got {x.shape}")
    C = x.shape[1]
    m = (x.data * x.data).mean(axis=1, keepdims=True) + x.dtype.type(epsilon)
    r = 1.0 / np.sqrt(m)
    out = x.data * r

    def bwd(g):
        if x.requires_grad:
            # d/dx [x * r(x)] with r = (mean_c x^2 + eps)^-1/2
            dot = (g * x.data).sum(axis=1, keepdims=True)
            x._accumulate(g * r - x.data * (r ** 3) * (dot / C))

    return _wrap(out, (x,), bwd)


def minibatch_stddev(x):
    """Append one channel holding the batch-diversity statistic.

    The statistic is the mean over channels and positions of the per-position
    across-batch standard deviation, broadcast to every sample and pixel.
    """
    x = _as_tensor(x)
    if x.ndim != 4 or x.shape[0] < 1:
        raise ShapeError(f"expected N,C,H,W input, got {x.shape}")
    N, C, H, W = x.shape
    # float64 throughout so a batch of identical images yields exactly zero
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=0, keepdims=True)
    centered = x64 - mu
    var = (centered * centered).mean(axis=0, keepdims=True)
    std = np.sqrt(var)
    s = std.mean()
    extra = np.full((N, 1, H, W), s, dtype=x.dtype)
    out = np.concatenate([x.data, extra], axis=1)

    def bwd(g):
        if x.requires_grad:
            gx = g[:, :C].astype(np.float64)
            gs = g[:, C:].sum()
            # ds/dx = centered / (N * std * C*H*W); zero where std == 0
            denom = np.where(std > 0, std, 1.0)
            coef = gs / (N * C * H * W)
            gx += np.where(std > 0, centered / denom, 0.0) * coef
            x._accumulate(gx.astype(x.dtype))

    return _wrap(out, (x,), bwd)


def backward(loss):
    """Run reverse-mode differentiation from a scalar loss tensor."""
    if not isinstance(loss, Tensor):
        raise TensorError("backward expects a Tensor")
    loss.backward()
