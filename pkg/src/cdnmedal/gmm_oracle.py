"""Slow, independent references for the mixture model: EM and a histogram mode.

Nothing here calls into the network code; only the final NLL reported by
:func:`em_fit` goes through :func:`cdnmedal.cdn_gm.nll_loss` so that both
sides are scored by the same function.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .cdn_gm import MixtureParams, nll_loss, select_background
from .errors import UsageError

PI_FLOOR = 1e-6


@dataclass
class OracleFit:
    params: MixtureParams
    nll: float
    iterations: int
    converged: bool
    trace: list


def _init_means(x, K):
    order = np.argsort(x.mean(axis=1), kind="stable")
    qs = [0.1, 0.5, 0.9] if K == 3 else [(k + 0.5) / K for k in range(K)]
    idx = [order[min(int(round(q * (len(x) - 1))), len(x) - 1)] for q in qs]
    return x[idx].copy()


def _em_nll(x, pi, sigma, mu):
    c = x.shape[1]
    d2 = ((x[:, None, :] - mu[None]) ** 2).sum(-1)
    logn = -0.5 * c * np.log(2 * np.pi * sigma)[None] - d2 / (2 * sigma[None])
    a = np.log(pi)[None] + logn
    return a, logsumexp(a, axis=1)


def em_fit(history, K=3, bounds=(16 / 255, 32 / 255), max_iter=500, tol=1e-8):
    """Expectation-maximization for the shared-variance mixture, variance clamped to ``bounds``."""
    x = np.asarray(history, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    T, c = x.shape
    if T < K:
        raise UsageError(f"history length {T} is shorter than K={K}")
    lo, hi = bounds
    mu = _init_means(x, K)
    pi = np.full(K, 1.0 / K)
    spread = ((x - x.mean(0)) ** 2).sum(1).mean() / c
    sigma = np.full(K, np.clip(spread, lo, hi))
    _, lse = _em_nll(x, pi, sigma, mu)
    prev = -lse.sum()
    trace = [prev]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        a, lse = _em_nll(x, pi, sigma, mu)
        r = np.exp(a - lse[:, None])
        nk = r.sum(0)
        pi = np.maximum(nk / T, PI_FLOOR)
        pi /= pi.sum()
        for k in range(K):
            if nk[k] > 1e-12:
                mu[k] = (r[:, k:k + 1] * x).sum(0) / nk[k]
                d2 = ((x - mu[k]) ** 2).sum(1)
                sigma[k] = np.clip((r[:, k] * d2).sum() / (c * nk[k]), lo, hi)
        _, lse = _em_nll(x, pi, sigma, mu)
        cur = -lse.sum()
        trace.append(cur)
        if prev - cur < tol:
            converged = True
            break
        prev = cur
    params = MixtureParams(pi, sigma, np.clip(mu, 0.0, 1.0))
    return OracleFit(params, float(nll_loss(params, x)), it, converged, trace)


def oracle_background(history, bins=32):
    """Centre of the most populated joint-histogram cell (lowest flat index on ties)."""
    if bins < 2:
        raise UsageError("bins must be >= 2")
    x = np.asarray(history, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    cells = np.clip(np.floor(x * bins).astype(np.int64), 0, bins - 1)
    flat = np.ravel_multi_index(cells.T, (bins,) * x.shape[1])
    best = int(np.argmax(np.bincount(flat, minlength=bins ** x.shape[1])))
    return (np.array(np.unravel_index(best, (bins,) * x.shape[1])) + 0.5) / bins


def compare_fits(a, b, history):
    if a.K != b.K or a.c != b.c:
        raise UsageError("fits have different K or c")
    bg_a, _ = select_background(a)
    bg_b, _ = select_background(b)
    return {
        "nll_a": float(nll_loss(a, history)),
        "nll_b": float(nll_loss(b, history)),
        "bg_distance": float(np.abs(bg_a - bg_b).max()),
    }
