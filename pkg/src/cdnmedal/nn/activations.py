import numpy as np

# Hard sigmoid: clamp(0.2 * y + 0.5, 0, 1); live region is the open interval (-2.5, 2.5).
HS_SLOPE = 0.2
HS_EDGE = 2.5


def hard_sigmoid(y):
    y = np.asarray(y)
    return np.clip(HS_SLOPE * y + 0.5, 0.0, 1.0).astype(y.dtype if y.dtype.kind == "f" else np.float64)


def hard_sigmoid_grad(y):
    """Derivative of :func:`hard_sigmoid`; 0.2 strictly inside the ramp, 0 elsewhere."""
    y = np.asarray(y)
    live = (y > -HS_EDGE) & (y < HS_EDGE)
    dt = y.dtype if y.dtype.kind == "f" else np.float64
    return np.where(live, HS_SLOPE, 0.0).astype(dt)


def relu(y):
    return np.maximum(y, 0)


def softmax(y, axis=-1):
    y = np.asarray(y)
    z = y - y.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(p, dp, axis=-1):
    """Vector-Jacobian product of softmax given its output ``p``."""
    return p * (dp - (dp * p).sum(axis=axis, keepdims=True))


ACTIVATIONS = ("identity", "relu", "hard_sigmoid", "softmax")


def apply(kind, z, softmax_slice=None):
    if kind == "identity":
        return z
    if kind == "relu":
        return relu(z)
    if kind == "hard_sigmoid":
        return hard_sigmoid(z)
    if kind == "softmax":
        out = z.copy()
        s = slice(*softmax_slice) if softmax_slice else slice(None)
        out[:, s] = softmax(z[:, s], axis=-1)
        return out
    raise ValueError(f"unknown activation {kind!r}")


def backward(kind, z, a, da, softmax_slice=None):
    """Gradient w.r.t. the preactivation ``z`` given output ``a`` and its gradient ``da``."""
    if kind == "identity":
        return da
    if kind == "relu":
        return da * (z > 0)
    if kind == "hard_sigmoid":
        return da * hard_sigmoid_grad(z)
    if kind == "softmax":
        dz = da.copy()
        s = slice(*softmax_slice) if softmax_slice else slice(None)
        dz[:, s] = softmax_backward(a[:, s], da[:, s], axis=-1)
        return dz
    raise ValueError(f"unknown activation {kind!r}")


def kink_signature(kind, z):
    """Boolean pattern that changes whenever ``z`` crosses a non-differentiable point."""
    if kind == "relu":
        return z > 0
    if kind == "hard_sigmoid":
        return np.sign(np.clip(z, -HS_EDGE, HS_EDGE) - z) + 2 * (np.abs(z) < HS_EDGE)
    return None
