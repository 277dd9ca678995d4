"""Sequential networks: shape checking, initialization, forward and backward."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, UsageError
from ..rng import SplitMix64
from . import activations
from .layers import fan_in_out, linear_backward, linear_forward, output_shape, param_shapes


@dataclass
class NetworkGraph:
    """Ordered layers plus their weights.

    ``weights`` maps a group name (one per learned layer, e.g. ``"03_conv1d"``)
    to an ordered dict of tensors. ``input_shape`` excludes the batch axis.
    """
    layers: list
    input_shape: tuple
    weights: dict = field(default_factory=dict)
    name: str = "net"

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.shapes = infer_shapes(self.layers, self.input_shape)
        self.group_names = [group_name(i, spec) for i, spec in enumerate(self.layers)]

    @property
    def output_shape(self):
        return self.shapes[-1]

    @property
    def dtype(self):
        for group in self.weights.values():
            for t in group.values():
                return t.dtype
        return np.dtype(np.float32)

    def astype(self, dtype):
        """Copy of the network with every weight tensor cast to ``dtype``."""
        w = {g: {k: t.astype(dtype) for k, t in ts.items()} for g, ts in self.weights.items()}
        return NetworkGraph(list(self.layers), self.input_shape, w, self.name)

    def copy(self):
        return self.astype(self.dtype)


def group_name(index, spec):
    return f"{index:02d}_{spec.kind}"


def infer_shapes(layers, input_shape):
    """Per-sample shapes ``[input, after layer 0, ...]``; raises on any mismatch."""
    shapes = [tuple(input_shape)]
    for i, spec in enumerate(layers):
        shapes.append(output_shape(spec, shapes[-1], where=group_name(i, spec)))
    for i, spec in enumerate(layers):
        if spec.activation == "softmax" and (i != len(layers) - 1 or spec.kind != "dense"):
            raise ConfigError(f"layer {group_name(i, spec)}: softmax only allowed on the final dense layer")
    return shapes


def build(layers, input_shape, seed=0, name="net", dtype=np.float32):
    """Create a network and draw weights: uniform +-sqrt(6 / (fan_in + fan_out)), zero bias."""
    net = NetworkGraph(list(layers), input_shape, {}, name)
    rng = SplitMix64(seed)
    for i, spec in enumerate(net.layers):
        shapes = param_shapes(spec, net.shapes[i])
        if not shapes:
            continue
        group = {}
        for tname, shape in shapes.items():
            n = int(np.prod(shape))
            if tname == "kernel":
                fi, fo = fan_in_out(spec, net.shapes[i])
                limit = np.sqrt(6.0 / (fi + fo))
                group[tname] = rng.uniform(n, -limit, limit).reshape(shape).astype(dtype)
            elif tname == "scale":
                group[tname] = np.ones(shape, dtype=dtype)
            else:
                group[tname] = np.zeros(shape, dtype=dtype)
        net.weights[net.group_names[i]] = group
    return net


def param_count(net):
    return int(sum(t.size for group in net.weights.values() for t in group.values()))


@dataclass
class ForwardCache:
    weights: dict
    inputs: list   # input to each layer
    pre: list      # pre-activation output of each layer
    post: list     # activated output of each layer
    aux: list


def forward(net, x):
    """Run the network on a batch ``x`` of shape ``(N,) + net.input_shape``."""
    x = np.asarray(x)
    if x.ndim == len(net.input_shape):
        raise UsageError(f"{net.name}: input needs a leading batch axis; got {x.shape}")
    if tuple(x.shape[1:]) != net.input_shape:
        raise ConfigError(f"{net.name}: input shape {x.shape[1:]} does not match declared {net.input_shape}")
    x = x.astype(net.dtype, copy=False)
    cache = ForwardCache(net.weights, [], [], [], [])
    for i, spec in enumerate(net.layers):
        p = net.weights.get(net.group_names[i], {})
        z, aux = linear_forward(spec, p, x)
        a = activations.apply(spec.activation, z, spec.softmax_slice)
        cache.inputs.append(x)
        cache.pre.append(z)
        cache.post.append(a)
        cache.aux.append(aux)
        x = a
    return x, cache


def backward(net, cache, d_output):
    """Return ``(d_input, grads)``; ``grads`` has the same nesting as ``net.weights``."""
    if cache.weights is not net.weights or len(cache.pre) != len(net.layers):
        raise UsageError(f"{net.name}: cache was produced by a different network or weight set")
    d = np.asarray(d_output, dtype=net.dtype)
    if d.shape != cache.post[-1].shape:
        raise UsageError(f"{net.name}: d_output shape {d.shape} != output shape {cache.post[-1].shape}")
    grads = {}
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        gname = net.group_names[i]
        dz = activations.backward(spec.activation, cache.pre[i], cache.post[i], d, spec.softmax_slice)
        d, g = linear_backward(spec, net.weights.get(gname, {}), cache.inputs[i], cache.aux[i], dz)
        if g:
            grads[gname] = g
    return d, {g: grads[g] for g in net.weights}


def kink_signature(net, cache):
    """Concatenated piecewise-region pattern of all ReLU / hard-sigmoid / max-pool units."""
    parts = []
    for i, spec in enumerate(net.layers):
        sig = activations.kink_signature(spec.activation, cache.pre[i])
        if sig is not None:
            parts.append(np.asarray(sig, dtype=np.int8).ravel())
        if spec.kind == "maxpool":
            parts.append(cache.aux[i].astype(np.int8).ravel())
    return np.concatenate(parts) if parts else np.zeros(0, np.int8)
