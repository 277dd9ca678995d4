"""Density network over pixel histories.

A small 1-D convolutional network reads a ``T x c`` pixel history and emits a
raw head of ``(c + 2) * K`` numbers laid out as ``[y_mu (K*c), y_sigma (K),
y_pi (K)]``. :func:`constrain` maps it to a Gaussian mixture with one shared
variance per component:

* ``pi = softmax(y_pi)``
* ``sigma = (s_min * (1 - h) + s_max * h) / 255`` with ``h = hard_sigmoid(y_sigma)``
* ``mu = hard_sigmoid(y_mu)``

and the density of a colour ``x`` is
``sum_k pi_k (2 pi sigma_k)^(-c/2) exp(-|x - mu_k|^2 / (2 sigma_k))``.

Head gradients of the per-sample loss ``-ln p(x)``, with ``R_k`` the posterior
responsibility of component ``k`` for ``x``::

    d/dy_pi_k    = pi_k - R_k
    d/dy_sigma_k = 0.2 * (s_max - s_min) / 255 * R_k * (c / (2 sigma_k) - |x - mu_k|^2 / (2 sigma_k^2))
    d/dy_mu_kl   = -0.2 * R_k * (x_l - mu_kl) / sigma_k

where the 0.2 factors vanish outside the open ramp ``(-2.5, 2.5)``. These are
checked against central finite differences in the test suite.
"""
from dataclasses import dataclass, field
import itertools
import logging
import math

import numpy as np

from ._accel import USE_NUMBA, njit
from .errors import ConfigError, TrainingError, UsageError
from .nn import activations
from .nn.layers import Conv1D, Dense, DepthwiseConv1D
from .nn.network import backward, build, forward
from .nn.optim import adam_init, adam_step
from .rng import SplitMix64

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-12
LOG_FLOOR = math.log(DENSITY_FLOOR)
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class CdnGmConfig:
    K: int = 3
    c: int = 3
    T: int = 96
    sigma_min_gray: float = 16.0
    sigma_max_gray: float = 32.0
    lr: float = 5e-3
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0
    conv_stride: int = 4
    conv_channels: tuple = (8, 12)
    dense_units: tuple = (32, 24)
    spread_init: bool = True
    sigma_init_bias: float = -2.0
    warmup_steps: int = 50
    augment: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.c not in (1, 3):
            raise ConfigError("c must be 1 or 3")
        if not 0 < self.sigma_min_gray < self.sigma_max_gray <= 255:
            raise ConfigError("need 0 < sigma_min_gray < sigma_max_gray <= 255")
        if self.T < 1 or self.T % (self.conv_stride ** 2):
            raise ConfigError(f"T={self.T} must be a positive multiple of {self.conv_stride ** 2}")

    @property
    def head_size(self):
        return (self.c + 2) * self.K

    @property
    def sigma_bounds(self):
        return self.sigma_min_gray / 255.0, self.sigma_max_gray / 255.0


@dataclass
class MixtureParams:
    """Mixture with optional leading batch axes: ``pi (..., K)``, ``sigma (..., K)``, ``mu (..., K, c)``."""
    pi: np.ndarray
    sigma: np.ndarray
    mu: np.ndarray

    @property
    def K(self):
        return self.pi.shape[-1]

    @property
    def c(self):
        return self.mu.shape[-1]

    def __getitem__(self, idx):
        return MixtureParams(self.pi[idx], self.sigma[idx], self.mu[idx])

    def astype(self, dtype):
        return MixtureParams(self.pi.astype(dtype), self.sigma.astype(dtype), self.mu.astype(dtype))


def build_cdn_gm(config=None, seed=None):
    """Seven learned layers: two depthwise 1-D convs, two strided 1-D convs, three dense."""
    config = config or CdnGmConfig()
    s = config.conv_stride
    layers = [
        DepthwiseConv1D(5),
        DepthwiseConv1D(5),
        Conv1D(config.conv_channels[0], 5, stride=s, activation="relu"),
        Conv1D(config.conv_channels[1], 5, stride=s, activation="relu"),
        Dense(config.dense_units[0], "relu"),
        Dense(config.dense_units[1], "relu"),
        Dense(config.head_size),
    ]
    net = build(layers, (config.T, config.c), seed=config.seed if seed is None else seed, name="cdn_gm")
    if config.spread_init:
        # start the component means evenly spread over (0, 1) instead of all at 0.5
        K, c = config.K, config.c
        bias = net.weights[net.group_names[-1]]["bias"]
        targets = (np.arange(K) + 0.5) / K
        bias[:K * c] = np.repeat((targets - 0.5) / 0.2, c)
        bias[K * c:K * c + K] = config.sigma_init_bias
    return net


# ---------------------------------------------------------------------------
# head
# ---------------------------------------------------------------------------

def split_head(raw, K, c):
    raw = np.asarray(raw)
    if raw.shape[-1] != (c + 2) * K:
        raise UsageError(f"raw head has {raw.shape[-1]} entries, expected (c+2)K = {(c + 2) * K}")
    lead = raw.shape[:-1]
    y_mu = raw[..., :K * c].reshape(lead + (K, c))
    y_sigma = raw[..., K * c:K * c + K]
    y_pi = raw[..., K * c + K:]
    return y_mu, y_sigma, y_pi


def constrain(raw, config):
    y_mu, y_sigma, y_pi = split_head(raw, config.K, config.c)
    smin, smax = config.sigma_min_gray, config.sigma_max_gray
    h = activations.hard_sigmoid(y_sigma)
    sigma = (smin * (1.0 - h) + smax * h) / 255.0
    return MixtureParams(activations.softmax(y_pi, axis=-1), sigma, activations.hard_sigmoid(y_mu))


def log_component_densities(x, params):
    """``ln N(x | mu_k, sigma_k)`` for samples ``x (..., T, c)``; returns ``(..., T, K)``."""
    x = np.asarray(x)
    c = params.c
    d2 = ((x[..., :, None, :] - params.mu[..., None, :, :]) ** 2).sum(axis=-1)
    sig = params.sigma[..., None, :]
    return -0.5 * c * (LOG_2PI + np.log(sig)) - d2 / (2.0 * sig)


def _logsumexp(a, axis=-1):
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def gmm_pdf(x, params):
    """Mixture density at colour(s) ``x (..., c)``; samples may carry extra axes before ``c``."""
    x = np.asarray(x)
    single = x.ndim == params.mu.ndim - 1
    xs = x[..., None, :] if single else x
    logp = _logsumexp(np.log(params.pi)[..., None, :] + log_component_densities(xs, params))
    return np.exp(logp[..., 0] if single else logp)


def nll_loss(params, history):
    """``sum_j -ln max(p(x_j), 1e-12)`` over the history's samples (per history for batches)."""
    a = np.log(params.pi)[..., None, :] + log_component_densities(history, params)
    lse = _logsumexp(a)
    return -np.maximum(lse, LOG_FLOOR).sum(axis=-1)


def responsibilities(params, x):
    """Posterior component probabilities for colour(s) ``x``, via log-sum-exp."""
    x = np.asarray(x)
    single = x.ndim == params.mu.ndim - 1
    xs = x[..., None, :] if single else x
    a = np.log(params.pi)[..., None, :] + log_component_densities(xs, params)
    r = np.exp(a - a.max(axis=-1, keepdims=True))
    r /= r.sum(axis=-1, keepdims=True)
    return r[..., 0, :] if single else r


# ---------------------------------------------------------------------------
# loss + gradient w.r.t. the raw head
# ---------------------------------------------------------------------------

def head_gradients_numpy(raw, history, config):
    raw = np.asarray(raw)
    history = np.asarray(history, dtype=raw.dtype)
    K, c = config.K, config.c
    y_mu, y_sigma, y_pi = split_head(raw, K, c)
    p = constrain(raw, config)
    diff = history[..., :, None, :] - p.mu[..., None, :, :]          # N,T,K,c
    d2 = (diff ** 2).sum(axis=-1)                                    # N,T,K
    sig = p.sigma[..., None, :]
    a = np.log(p.pi)[..., None, :] - 0.5 * c * (LOG_2PI + np.log(sig)) - d2 / (2.0 * sig)
    lse = _logsumexp(a)
    live = (lse > LOG_FLOOR).astype(raw.dtype)
    R = np.exp(a - lse[..., None]) * live[..., None]
    loss = -np.maximum(lse, LOG_FLOOR).sum(axis=-1)
    g_pi = (p.pi[..., None, :] * live[..., None] - R).sum(axis=-2)
    g_sigma = (R * (0.5 * c / sig - d2 / (2.0 * sig ** 2))).sum(axis=-2)
    g_sigma *= activations.hard_sigmoid_grad(y_sigma) * ((config.sigma_max_gray - config.sigma_min_gray) / 255.0)
    g_mu = -(R[..., None] * diff).sum(axis=-3) / p.sigma[..., :, None]
    g_mu *= activations.hard_sigmoid_grad(y_mu)
    lead = raw.shape[:-1]
    grad = np.concatenate([g_mu.reshape(lead + (K * c,)), g_sigma, g_pi], axis=-1)
    return loss, grad.astype(raw.dtype)


@njit
def _head_grad_loops(raw, hist, K, c, smin, smax, log_floor):
    n, t_len = hist.shape[0], hist.shape[1]
    loss = np.zeros(n, dtype=raw.dtype)
    grad = np.zeros_like(raw)
    pi = np.empty(K)
    logpi = np.empty(K)
    sig = np.empty(K)
    live_s = np.empty(K)
    mu = np.empty((K, c))
    live_m = np.empty((K, c))
    a = np.empty(K)
    d2 = np.empty(K)
    span = (smax - smin) / 255.0
    log2pi = np.log(2.0 * np.pi)
    for s in range(n):
        # constrain
        m = -np.inf
        for k in range(K):
            v = raw[s, K * c + K + k]
            if v > m:
                m = v
        tot = 0.0
        for k in range(K):
            pi[k] = np.exp(raw[s, K * c + K + k] - m)
            tot += pi[k]
        for k in range(K):
            pi[k] /= tot
            logpi[k] = np.log(pi[k])
            y = raw[s, K * c + k]
            h = min(max(0.2 * y + 0.5, 0.0), 1.0)
            sig[k] = (smin * (1.0 - h) + smax * h) / 255.0
            live_s[k] = 0.2 * span if -2.5 < y < 2.5 else 0.0
            for l in range(c):
                y = raw[s, k * c + l]
                mu[k, l] = min(max(0.2 * y + 0.5, 0.0), 1.0)
                live_m[k, l] = 0.2 if -2.5 < y < 2.5 else 0.0
        for j in range(t_len):
            amax = -np.inf
            for k in range(K):
                acc = 0.0
                for l in range(c):
                    dv = hist[s, j, l] - mu[k, l]
                    acc += dv * dv
                d2[k] = acc
                a[k] = logpi[k] - 0.5 * c * (log2pi + np.log(sig[k])) - acc / (2.0 * sig[k])
                if a[k] > amax:
                    amax = a[k]
            tot = 0.0
            for k in range(K):
                tot += np.exp(a[k] - amax)
            lse = amax + np.log(tot)
            if lse <= log_floor:
                loss[s] -= log_floor
                continue
            loss[s] -= lse
            for k in range(K):
                r = np.exp(a[k] - lse)
                grad[s, K * c + K + k] += pi[k] - r
                grad[s, K * c + k] += live_s[k] * r * (0.5 * c / sig[k] - d2[k] / (2.0 * sig[k] * sig[k]))
                for l in range(c):
                    grad[s, k * c + l] -= live_m[k, l] * r * (hist[s, j, l] - mu[k, l]) / sig[k]
    return loss, grad


def head_gradients_loops(raw, history, config):
    raw = np.ascontiguousarray(raw)
    lead = raw.shape[:-1]
    raw2 = raw.reshape(-1, raw.shape[-1])
    hist = np.ascontiguousarray(history, dtype=raw.dtype).reshape(raw2.shape[0], -1, config.c)
    loss, grad = _head_grad_loops(raw2, hist, config.K, config.c, float(config.sigma_min_gray),
                                  float(config.sigma_max_gray), LOG_FLOOR)
    return loss.reshape(lead), grad.reshape(raw.shape)


def head_gradients(raw, history, config):
    """Loss ``sum_j -ln p(x_j)`` per history and its gradient w.r.t. the raw head."""
    if USE_NUMBA:
        return head_gradients_loops(raw, history, config)
    return head_gradients_numpy(raw, history, config)


# ---------------------------------------------------------------------------
# background selection
# ---------------------------------------------------------------------------

def select_background(params):
    """Mean of the component with the largest ``pi / sigma``; lowest index wins ties."""
    ratio = params.pi / params.sigma
    winner = np.argmax(ratio, axis=-1)
    mu_star = np.take_along_axis(params.mu, winner[..., None, None], axis=-2)[..., 0, :]
    return mu_star, winner


def predict_params(net, histories, config, batch_size=4096):
    """Forward pass + constraint for a batch of histories ``(N, T, c)``.

    Samples are put in canonical order first, matching what training sees.
    """
    histories = canonical_order(np.asarray(histories, dtype=np.float32))
    raws = [forward(net, histories[i:i + batch_size])[0] for i in range(0, len(histories), batch_size)]
    raw = np.concatenate(raws) if raws else np.zeros((0, config.head_size), np.float32)
    return constrain(raw, config)


def extract_background_values(net, histories, config):
    return select_background(predict_params(net, histories, config))[0]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    epoch_losses: list = field(default_factory=list)
    aborted: bool = False

    @property
    def final_loss(self):
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


def canonical_order(histories):
    """Sort each history's samples by summed intensity (stable). The loss ignores order, so this is lossless."""
    h = np.asarray(histories)
    order = np.argsort(h.sum(axis=-1), axis=-1, kind="stable")
    return np.take_along_axis(h, order[..., None], axis=-2)


def augment(histories, rng):
    """Label-free variants: bootstrap resampling in time, channel permutation, per-channel flips."""
    n, t, c = histories.shape
    idx = rng.integers(n * t, t).reshape(n, t)
    out = np.take_along_axis(histories, idx[..., None], axis=1)
    if c > 1:
        perms = np.array(list(itertools.permutations(range(c))))
        pick = perms[rng.integers(n, len(perms))]
        out = np.take_along_axis(out, pick[:, None, :], axis=2)
    flip = (rng.uniform(n * c) < 0.5).reshape(n, 1, c)
    return np.where(flip, 1.0 - out, out).astype(histories.dtype)


def loss_and_grad(net, histories, config):
    """Mean per-history NLL over the batch, and weight gradients."""
    out, cache = forward(net, histories)
    loss, g_head = head_gradients(out, histories, config)
    n = len(histories)
    _, grads = backward(net, cache, g_head / n)
    return float(loss.mean()), grads


def train_cdn_gm(net, histories, config, epochs=None, log_every=0):
    """Mini-batch Adam on the mean NLL. Returns ``(net, TrainLog)``.

    On a non-finite loss or gradient the last finite weights are kept, the
    log is marked ``aborted`` and :class:`TrainingError` is raised with the
    partial result attached as ``exc.result``.
    """
    histories = np.asarray(histories, dtype=np.float32)
    if len(histories) == 0:
        raise UsageError("no histories to train on")
    epochs = config.epochs if epochs is None else epochs
    rng = SplitMix64(config.seed).spawn(0xC0DE)
    state = adam_init(net.weights)
    trained = net.copy()
    tlog = TrainLog()
    bs = config.batch_size
    step = 0
    for ep in range(epochs):
        order = rng.permutation(len(histories))
        total = 0.0
        for start in range(0, len(order), bs):
            lr = config.lr
            if step < config.warmup_steps:
                lr *= (step + 1) / (config.warmup_steps + 1)
            step += 1
            batch = histories[order[start:start + bs]]
            if config.augment:
                batch = augment(batch, rng)
            batch = canonical_order(batch)
            loss, grads = loss_and_grad(trained, batch, config)
            if not np.isfinite(loss):
                tlog.aborted = True
                exc = TrainingError(f"non-finite loss at epoch {ep}")
                exc.result = (trained, tlog)
                raise exc
            try:
                new_w, state = adam_step(trained.weights, grads, state, lr)
            except TrainingError as exc:
                tlog.aborted = True
                exc.result = (trained, tlog)
                raise
            trained.weights = new_w
            total += loss * len(batch)
        tlog.epoch_losses.append(total / len(histories))
        if log_every and (ep + 1) % log_every == 0:
            log.info("cdn_gm epoch %d loss %.4f", ep + 1, tlog.epoch_losses[-1])
    return trained, tlog
