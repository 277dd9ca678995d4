"""Central finite differences, used as the oracle for every analytic gradient."""
from dataclasses import dataclass

import numpy as np

from ..rng import SplitMix64
from .network import backward, forward, kink_signature


def finite_diff_grad(loss_fn, weights, h=1e-4, coords=None):
    """Central differences ``(L(w + h) - L(w - h)) / 2h`` in float64.

    ``weights`` is a flat array or a nested ``{group: {name: array}}`` dict. For
    a flat array the result has the same shape; for a dict, the same nesting.
    ``coords`` optionally limits evaluation to a list of flat indices (other
    entries are left at zero).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if isinstance(weights, dict):
        flat, unflatten = flatten(weights)
        g = finite_diff_grad(lambda v: loss_fn(unflatten(v)), flat, h, coords)
        return unflatten(g)
    w = np.array(weights, dtype=np.float64)
    flat = w.ravel()
    grad = np.zeros_like(flat)
    for i in (range(flat.size) if coords is None else coords):
        orig = flat[i]
        flat[i] = orig + h
        up = float(loss_fn(w))
        flat[i] = orig - h
        down = float(loss_fn(w))
        flat[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad.reshape(w.shape)


def flatten(weights):
    keys = [(g, k) for g, ts in weights.items() for k in ts]
    shapes = [weights[g][k].shape for g, k in keys]
    flat = np.concatenate([np.asarray(weights[g][k], np.float64).ravel() for g, k in keys]) if keys else np.zeros(0)

    def unflatten(v):
        out, pos = {}, 0
        for (g, k), s in zip(keys, shapes):
            n = int(np.prod(s))
            out.setdefault(g, {})[k] = v[pos:pos + n].reshape(s)
            pos += n
        return out

    return flat, unflatten


def relative_error(a, b, floor=1e-6):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int

    @property
    def ok(self):
        return self.max_rel_error <= 1e-4


def check_network(net, x, loss_and_grad, n_coords=100, h=1e-4, seed=0):
    """Compare backward against finite differences on sampled weight coordinates.

    ``loss_and_grad(output) -> (loss, d_output)`` defines the scalar loss on the
    network output. Runs in float64. Coordinates whose perturbation moves any
    ReLU, hard-sigmoid or max-pool unit across a kink are skipped and resampled.
    """
    net64 = net.astype(np.float64)
    x = np.asarray(x, np.float64)
    out, cache = forward(net64, x)
    _, d_out = loss_and_grad(out)
    _, grads = backward(net64, cache, d_out)
    flat_w, unflatten = flatten(net64.weights)
    flat_g, _ = flatten(grads)

    def run(v):
        net64.weights = unflatten(v)
        y, c = forward(net64, x)
        return loss_and_grad(y)[0], kink_signature(net64, c)

    base_sig = kink_signature(net64, cache)
    order = SplitMix64(seed).permutation(flat_w.size)
    errs, skipped = [], 0
    for idx in order:
        if len(errs) >= n_coords:
            break
        v = flat_w.copy()
        v[idx] += h
        up, sig_up = run(v)
        v[idx] -= 2 * h
        down, sig_down = run(v)
        if not (np.array_equal(sig_up, base_sig) and np.array_equal(sig_down, base_sig)):
            skipped += 1
            continue
        fd = (up - down) / (2 * h)
        errs.append(relative_error(flat_g[idx], fd))
    net64.weights = unflatten(flat_w)
    return GradCheckResult(float(max(errs)) if errs else 0.0, len(errs), skipped)
