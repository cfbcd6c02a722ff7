"""Layer primitives and the composable network graph.

Layers are thin param-holding wrappers over the tensor ops; a
NetworkGraph chains them with shape checking at construction time and
optionally embeds a noise vector that is broadcast and concatenated
with the spatial input (the conditioning used by residual generators).
"""

from __future__ import annotations

import numpy as np

from lesionforge import tensor as T
from lesionforge.tensor import Parameter, ShapeError


class Layer:
    kind = "?"

    def params(self):
        return []

    def out_shape(self, in_shape):
        raise NotImplementedError

    def forward(self, x):
        raise NotImplementedError

    def spec(self):
        return {"kind": self.kind}


class Conv(Layer):
    kind = "conv"

    def __init__(self, name, cin, cout, k, rng, stride=1, pad=0,
                 equalized=False, init_std=0.02):
        fan_in = cin * k * k
        if equalized:
            w = rng.standard_normal((cout, cin, k, k))
        else:
            w = rng.normal(0.0, init_std, (cout, cin, k, k))
        self.w = Parameter(w, name=f"{name}.w", fan_in=fan_in, equalized=equalized,
                           dtype=T.DEFAULT_DTYPE)
        self.b = Parameter(np.zeros(cout), name=f"{name}.b", fan_in=fan_in,
                           dtype=T.DEFAULT_DTYPE)
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.pad = stride, pad
        self.name = name

    def params(self):
        return [self.w, self.b]

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.cin:
            raise ShapeError(f"{self.name}: expected ({self.cin},H,W), got {in_shape}")
        C, H, W = in_shape
        Ho = (H + 2 * self.pad - self.k) // self.stride + 1
        Wo = (W + 2 * self.pad - self.k) // self.stride + 1
        if Ho < 1 or Wo < 1:
            raise ShapeError(f"{self.name}: kernel does not fit input {in_shape}")
        return (self.cout, Ho, Wo)

    def forward(self, x):
        w = T.mul(self.w, self.w.lr_scale) if self.w.lr_scale != 1.0 else self.w
        return T.conv2d(x, w, bias=self.b, stride=self.stride, padding=self.pad)

    def spec(self):
        return {"kind": self.kind, "name": self.name, "cin": self.cin,
                "cout": self.cout, "k": self.k, "stride": self.stride,
                "pad": self.pad, "equalized": self.w.lr_scale != 1.0}


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, din, dout, rng, equalized=False, init_std=0.02):
        if equalized:
            w = rng.standard_normal((din, dout))
        else:
            w = rng.normal(0.0, init_std, (din, dout))
        self.w = Parameter(w, name=f"{name}.w", fan_in=din, equalized=equalized,
                           dtype=T.DEFAULT_DTYPE)
        self.b = Parameter(np.zeros(dout), name=f"{name}.b", fan_in=din,
                           dtype=T.DEFAULT_DTYPE)
        self.din, self.dout = din, dout
        self.name = name

    def params(self):
        return [self.w, self.b]

    def out_shape(self, in_shape):
        if in_shape != (self.din,):
            raise ShapeError(f"{self.name}: expected ({self.din},), got {in_shape}")
        return (self.dout,)

    def forward(self, x):
        w = T.mul(self.w, self.w.lr_scale) if self.w.lr_scale != 1.0 else self.w
        return T.dense(x, w, bias=self.b)

    def spec(self):
        return {"kind": self.kind, "name": self.name, "din": self.din,
                "dout": self.dout, "equalized": self.w.lr_scale != 1.0}


class LeakyRelu(Layer):
    kind = "leaky_relu"

    def __init__(self, slope=0.2):
        self.slope = slope

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        return T.leaky_relu(x, slope=self.slope)

    def spec(self):
        return {"kind": self.kind, "slope": self.slope}


class Tanh(Layer):
    kind = "tanh"

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        return T.tanh_act(x)


class Upsample2x(Layer):
    kind = "upsample2x"

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"upsample needs C,H,W, got {in_shape}")
        C, H, W = in_shape
        return (C, 2 * H, 2 * W)

    def forward(self, x):
        return T.upsample2x_nearest(x)


class Downsample2x(Layer):
    kind = "downsample2x"

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"downsample needs C,H,W, got {in_shape}")
        C, H, W = in_shape
        if H % 2 or W % 2:
            raise ShapeError(f"downsample needs even extents, got {in_shape}")
        return (C, H // 2, W // 2)

    def forward(self, x):
        return T.downsample2x_avg(x)


class PixelNorm(Layer):
    kind = "pixelnorm"

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"pixelnorm needs C,H,W, got {in_shape}")
        return in_shape

    def forward(self, x):
        return T.pixelnorm(x)


class MinibatchStddev(Layer):
    kind = "minibatch_stddev"

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"minibatch_stddev needs C,H,W, got {in_shape}")
        C, H, W = in_shape
        return (C + 1, H, W)

    def forward(self, x):
        return T.minibatch_stddev(x)


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return T.flatten(x)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, target):
        self.target = tuple(int(t) for t in target)

    def out_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.target)):
            raise ShapeError(f"cannot reshape {in_shape} to {self.target}")
        return self.target

    def forward(self, x):
        return T.reshape(x, (x.shape[0],) + self.target)

    def spec(self):
        return {"kind": self.kind, "target": list(self.target)}


class NetworkGraph:
    """Ordered layer chain with construction-time shape composition.

    ``z_layers``, when given, embed a latent vector which is broadcast
    over the spatial input and concatenated channel-wise before the main
    chain runs (conditional residual generators use this).

    role="generator" requires the chain to end in tanh; role="discriminator"
    requires a single logit per sample.
    """

    def __init__(self, layers, input_shape, role=None, z_layers=None, z_dim=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.role = role
        self.z_layers = list(z_layers) if z_layers else None
        self.z_dim = z_dim

        shape = self.input_shape
        if self.z_layers:
            if z_dim is None:
                raise ShapeError("z_layers given without z_dim")
            if len(self.input_shape) != 3:
                raise ShapeError("conditional graphs need a C,H,W input")
            zshape = (z_dim,)
            for lay in self.z_layers:
                zshape = lay.out_shape(zshape)
            if len(zshape) != 1:
                raise ShapeError(f"noise embedding must end as a vector, got {zshape}")
            self.embed_channels = zshape[0]
            shape = (shape[0] + zshape[0], shape[1], shape[2])
        for lay in self.layers:
            shape = lay.out_shape(shape)
        self.output_shape = shape

        if role == "generator" and (not self.layers or self.layers[-1].kind != "tanh"):
            raise ShapeError("generator graphs must end in tanh")
        if role == "discriminator" and shape != (1,):
            raise ShapeError(f"discriminator must emit one logit per sample, got {shape}")

    def params(self):
        out = []
        for lay in (self.z_layers or []):
            out.extend(lay.params())
        for lay in self.layers:
            out.extend(lay.params())
        return out

    def forward(self, x, z=None):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"graph expects {self.input_shape} per sample, got {tuple(x.shape[1:])}")
        if self.z_layers:
            if z is None:
                raise ShapeError("conditional graph needs a latent input")
            e = z
            for lay in self.z_layers:
                e = lay.forward(e)
            e = T.reshape(e, (e.shape[0], e.shape[1], 1, 1))
            e = T.broadcast_spatial(e, x.shape[2], x.shape[3])
            h = T.concat_channels([x, e])
        elif z is not None:
            raise ShapeError("graph is unconditional, got a latent input")
        else:
            h = x
        for lay in self.layers:
            h = lay.forward(h)
        return h

    __call__ = forward

    def spec(self):
        d = {"input_shape": list(self.input_shape), "role": self.role,
             "layers": [lay.spec() for lay in self.layers]}
        if self.z_layers:
            d["z_dim"] = self.z_dim
            d["z_layers"] = [lay.spec() for lay in self.z_layers]
        return d
