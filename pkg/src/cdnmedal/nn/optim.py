from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(weights, beta1=0.9, beta2=0.999, eps=1e-8):
    zeros = {g: {k: np.zeros_like(t) for k, t in ts.items()} for g, ts in weights.items()}
    zeros2 = {g: {k: np.zeros_like(t) for k, t in ts.items()} for g, ts in weights.items()}
    return AdamState(zeros, zeros2, 0, beta1, beta2, eps)


def adam_step(weights, grads, state, lr):
    """One bias-corrected Adam update. Inputs are left untouched; returns ``(weights, state)``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for g, ts in grads.items():
        for k, t in ts.items():
            if not np.all(np.isfinite(t)):
                raise TrainingError(f"non-finite gradient in layer {g} ({k})")
            if t.shape != weights[g][k].shape:
                raise ValueError(f"gradient shape {t.shape} != weight shape {weights[g][k].shape} for {g}/{k}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_w, new_m, new_v = {}, {}, {}
    for g, ts in weights.items():
        new_w[g], new_m[g], new_v[g] = {}, {}, {}
        for k, w in ts.items():
            grad = grads[g][k]
            m = b1 * state.m[g][k] + (1 - b1) * grad
            v = b2 * state.v[g][k] + (1 - b2) * grad * grad
            step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
            new_w[g][k] = (w - step).astype(w.dtype)
            new_m[g][k] = m.astype(w.dtype)
            new_v[g][k] = v.astype(w.dtype)
    return new_w, AdamState(new_m, new_v, t, b1, b2, state.eps)
