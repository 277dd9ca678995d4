"""Layer specifications, parameter shapes, and per-layer forward/backward.

Spatial tensors are channels-last: ``N x H x W x C`` for 2-D layers and
``N x L x C`` for 1-D layers. Dense layers flatten every non-batch axis.
"""
from dataclasses import dataclass
from math import prod

import numpy as np

from ..errors import ConfigError
from . import activations, kernels

KINDS = ("dense", "conv2d", "dwconv2d", "conv1d", "dwconv1d", "maxpool", "upsample", "instancenorm")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0  # units for dense
    kernel: int = 1
    stride: int = 1
    activation: str = "identity"
    eps: float = 1e-5
    factor: int = 2
    softmax_slice: tuple | None = None
    use_bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.activation not in activations.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.kernel < 1 or self.stride < 1:
            raise ConfigError(f"{self.kind}: kernel and stride must be >= 1")
        if self.kind in ("maxpool", "upsample") and self.factor != 2:
            raise ConfigError(f"{self.kind}: only factor 2 is supported")
        if self.kind in ("dense", "conv2d", "conv1d") and self.out_channels < 1:
            raise ConfigError(f"{self.kind}: out_channels must be >= 1")

    @property
    def learned(self):
        return self.kind not in ("maxpool", "upsample")


# convenience constructors ------------------------------------------------

def Dense(units, activation="identity", softmax_slice=None):
    return LayerSpec("dense", out_channels=units, activation=activation, softmax_slice=softmax_slice)


def Conv2D(out_channels, kernel=3, activation="identity", stride=1, use_bias=True):
    return LayerSpec("conv2d", out_channels=out_channels, kernel=kernel, stride=stride, activation=activation,
                     use_bias=use_bias)


def DepthwiseConv2D(kernel=3, activation="identity", stride=1, use_bias=True):
    return LayerSpec("dwconv2d", kernel=kernel, stride=stride, activation=activation, use_bias=use_bias)


def Conv1D(out_channels, kernel=5, stride=1, activation="identity"):
    return LayerSpec("conv1d", out_channels=out_channels, kernel=kernel, stride=stride, activation=activation)


def DepthwiseConv1D(kernel=5, stride=1, activation="identity"):
    return LayerSpec("dwconv1d", kernel=kernel, stride=stride, activation=activation)


def MaxPool():
    return LayerSpec("maxpool")


def UpsampleNearest():
    return LayerSpec("upsample")


def InstanceNorm(activation="identity", eps=1e-5):
    return LayerSpec("instancenorm", activation=activation, eps=eps)


# shape algebra -----------------------------------------------------------

def output_shape(spec, in_shape, where=""):
    """Per-sample output shape of ``spec`` for a per-sample ``in_shape``."""
    tag = where or spec.kind

    def need_rank(r):
        if len(in_shape) != r:
            raise ConfigError(f"layer {tag}: expected rank-{r} input per sample, got shape {in_shape}")

    k = spec.kind
    if k == "dense":
        if spec.softmax_slice is not None:
            a, b = spec.softmax_slice
            if not 0 <= a < b <= spec.out_channels:
                raise ConfigError(f"layer {tag}: softmax slice {spec.softmax_slice} out of range")
        return (spec.out_channels,)
    if k in ("conv2d", "dwconv2d"):
        need_rank(3)
        h, w, c = in_shape
        ho = -(-h // spec.stride)
        wo = -(-w // spec.stride)
        return (ho, wo, spec.out_channels if k == "conv2d" else c)
    if k in ("conv1d", "dwconv1d"):
        need_rank(2)
        length, c = in_shape
        if length % spec.stride:
            raise ConfigError(f"layer {tag}: length {length} not divisible by stride {spec.stride}")
        return (length // spec.stride, spec.out_channels if k == "conv1d" else c)
    if k == "maxpool":
        need_rank(3)
        h, w, c = in_shape
        if h % 2 or w % 2:
            raise ConfigError(f"layer {tag}: extents {h}x{w} not divisible by 2")
        return (h // 2, w // 2, c)
    if k == "upsample":
        need_rank(3)
        h, w, c = in_shape
        return (h * 2, w * 2, c)
    if k == "instancenorm":
        need_rank(3)
        return tuple(in_shape)
    raise ConfigError(f"unknown layer kind {k!r}")  # pragma: no cover


def param_shapes(spec, in_shape):
    """Ordered ``{tensor name: shape}`` for the learned tensors of ``spec``."""
    shapes = _param_shapes(spec, in_shape)
    if not spec.use_bias:
        shapes.pop("bias", None)
    return shapes


def _param_shapes(spec, in_shape):
    k = spec.kind
    c = in_shape[-1]
    if k == "dense":
        return {"kernel": (prod(in_shape), spec.out_channels), "bias": (spec.out_channels,)}
    if k == "conv2d":
        return {"kernel": (spec.kernel, spec.kernel, c, spec.out_channels), "bias": (spec.out_channels,)}
    if k == "dwconv2d":
        return {"kernel": (spec.kernel, spec.kernel, c), "bias": (c,)}
    if k == "conv1d":
        return {"kernel": (spec.kernel, c, spec.out_channels), "bias": (spec.out_channels,)}
    if k == "dwconv1d":
        return {"kernel": (spec.kernel, c), "bias": (c,)}
    if k == "instancenorm":
        return {"scale": (c,), "shift": (c,)}
    return {}


def fan_in_out(spec, in_shape):
    shapes = param_shapes(spec, in_shape)
    kshape = shapes.get("kernel")
    k = spec.kind
    if k == "dense":
        return kshape
    if k == "conv2d":
        return spec.kernel ** 2 * kshape[2], spec.kernel ** 2 * kshape[3]
    if k == "dwconv2d":
        return spec.kernel ** 2, spec.kernel ** 2
    if k == "conv1d":
        return spec.kernel * kshape[1], spec.kernel * kshape[2]
    if k == "dwconv1d":
        return spec.kernel, spec.kernel
    return None


# forward / backward --------------------------------------------------------

def linear_forward(spec, p, x):
    """Pre-activation output of one layer and any auxiliary state for backward."""
    k = spec.kind
    if not spec.use_bias and "kernel" in p:
        n = p["kernel"].shape[-1]
        p = dict(p, bias=np.zeros(n, p["kernel"].dtype))
    if k == "dense":
        return x.reshape(x.shape[0], -1) @ p["kernel"] + p["bias"], None
    if k == "conv2d":
        return kernels.conv2d_forward(x, p["kernel"], p["bias"], (spec.stride, spec.stride)), None
    if k == "dwconv2d":
        return kernels.dwconv2d_forward(x, p["kernel"], p["bias"], (spec.stride, spec.stride)), None
    if k == "conv1d":
        y = kernels.conv2d_forward(x[:, None], p["kernel"][None], p["bias"], (1, spec.stride))
        return y[:, 0], None
    if k == "dwconv1d":
        y = kernels.dwconv2d_forward(x[:, None], p["kernel"][None], p["bias"], (1, spec.stride))
        return y[:, 0], None
    if k == "maxpool":
        return kernels.maxpool2_forward(x)
    if k == "upsample":
        return kernels.upsample2_forward(x), None
    if k == "instancenorm":
        mean = x.mean(axis=(1, 2), keepdims=True)
        var = x.var(axis=(1, 2), keepdims=True)
        inv = 1.0 / np.sqrt(var + spec.eps)
        xhat = (x - mean) * inv
        return xhat * p["scale"] + p["shift"], (xhat, inv)
    raise ConfigError(f"unknown layer kind {k!r}")  # pragma: no cover


def linear_backward(spec, p, x, aux, dz):
    """Return ``(dx, grads)`` where ``grads`` mirrors ``p``."""
    dx, grads = _linear_backward(spec, p, x, aux, dz)
    if not spec.use_bias:
        grads.pop("bias", None)
    return dx, grads


def _linear_backward(spec, p, x, aux, dz):
    k = spec.kind
    if k == "dense":
        x2 = x.reshape(x.shape[0], -1)
        grads = {"kernel": x2.T @ dz, "bias": dz.sum(axis=0)}
        return (dz @ p["kernel"].T).reshape(x.shape), grads
    if k == "conv2d":
        dx, dw, db = kernels.conv2d_backward(x, p["kernel"], dz, (spec.stride, spec.stride))
        return dx, {"kernel": dw, "bias": db}
    if k == "dwconv2d":
        dx, dw, db = kernels.dwconv2d_backward(x, p["kernel"], dz, (spec.stride, spec.stride))
        return dx, {"kernel": dw, "bias": db}
    if k == "conv1d":
        dx, dw, db = kernels.conv2d_backward(x[:, None], p["kernel"][None], dz[:, None], (1, spec.stride))
        return dx[:, 0], {"kernel": dw[0], "bias": db}
    if k == "dwconv1d":
        dx, dw, db = kernels.dwconv2d_backward(x[:, None], p["kernel"][None], dz[:, None], (1, spec.stride))
        return dx[:, 0], {"kernel": dw[0], "bias": db}
    if k == "maxpool":
        return kernels.maxpool2_backward(aux, dz), {}
    if k == "upsample":
        return kernels.upsample2_backward(dz), {}
    if k == "instancenorm":
        xhat, inv = aux
        m = x.shape[1] * x.shape[2]
        grads = {"scale": (dz * xhat).sum(axis=(0, 1, 2)), "shift": dz.sum(axis=(0, 1, 2))}
        dxhat = dz * p["scale"]
        dx = inv / m * (m * dxhat - dxhat.sum(axis=(1, 2), keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=(1, 2), keepdims=True))
        return dx, grads
    raise ConfigError(f"unknown layer kind {k!r}")  # pragma: no cover
