"""Foreground autoencoder over (frame, background) pairs.

Input is the frame and its background stacked on the channel axis (frame
channels first), output a one-channel probability map through a hard sigmoid.
"""
from dataclasses import dataclass
import logging
import warnings

import numpy as np

from .errors import ConfigError, TrainingError, UsageError
from .metrics import FG, IGNORE
from .nn.layers import Conv2D, DepthwiseConv2D, InstanceNorm, MaxPool, UpsampleNearest
from .nn.network import backward, build, forward
from .nn.optim import adam_init, adam_step
from .rng import SplitMix64

log = logging.getLogger(__name__)


@dataclass
class MedalConfig:
    H: int = 64
    W: int = 64
    c: int = 3
    epsilon: float = 0.5
    clamp_delta: float = 1e-7
    lr: float = 5e-3
    epochs: int = 1000
    batch_size: int = 8
    seed: int = 0
    widths: tuple = (8, 12, 16)

    def __post_init__(self):
        if self.H < 4 or self.W < 4 or self.H % 4 or self.W % 4:
            raise ConfigError(f"H={self.H} and W={self.W} must be positive multiples of 4")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if not 0 < self.clamp_delta < 0.5:
            raise ConfigError("clamp_delta must lie in (0, 0.5)")
        if self.c not in (1, 3):
            raise ConfigError("c must be 1 or 3")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def _block(out_ch, activation, separable, use_bias=True):
    if separable:
        return [DepthwiseConv2D(3, use_bias=use_bias), Conv2D(out_ch, 1, activation, use_bias=use_bias)]
    return [Conv2D(out_ch, 3, activation, use_bias=use_bias)]


def layer_table(config, separable=True):
    w1, w2, w3 = config.widths
    enc = (_block(w1, "relu", separable) + [MaxPool()]
           + _block(w2, "relu", separable) + [MaxPool()]
           + _block(w3, "relu", separable))
    # instance norm removes any per-channel constant, so the convs feeding it carry no bias
    dec = ([UpsampleNearest()] + _block(w2, "identity", separable, False) + [InstanceNorm("relu")]
           + [UpsampleNearest()] + _block(w1, "identity", separable, False) + [InstanceNorm("relu")]
           + [Conv2D(1, 3, "hard_sigmoid")])
    return enc + dec


def build_medal_net(config=None, separable=True, seed=None):
    """Encoder of three separable blocks with two max-pools, mirrored decoder with instance norm.

    ``separable=False`` swaps each depthwise + pointwise pair for a full 3x3
    convolution of the same width (used to measure the parameter saving).
    """
    config = config or MedalConfig()
    return build(layer_table(config, separable), (config.H, config.W, 2 * config.c),
                 seed=config.seed if seed is None else seed, name="medal_net")


def _as_unit(img):
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img.astype(np.float32) / 255.0
    return img.astype(np.float32, copy=False)


def stack_inputs(frames, backgrounds):
    f, b = _as_unit(frames), _as_unit(backgrounds)
    if f.shape != b.shape:
        raise UsageError(f"frame {f.shape} and background {b.shape} extents differ")
    return np.concatenate([f, b], axis=-1)


def medal_forward(net, frame, background):
    """Probability map for one ``H x W x c`` pair or a batch ``N x H x W x c``."""
    x = stack_inputs(frame, background)
    single = x.ndim == 3
    out, _ = forward(net, x[None] if single else x)
    return out[0] if single else out


def binarize(pred, epsilon=0.5):
    return (np.asarray(pred) >= epsilon).astype(np.uint8)


def _check_target(target):
    t = np.asarray(target)
    if not np.isin(t, (0, 1)).all():
        raise UsageError("target mask must be binary")
    return t


def bce_loss(pred, target, clamp_delta=1e-7, valid=None):
    """Binary cross-entropy summed over pixels, divided by the batch size only.

    ``pred`` is ``N x H x W (x 1)``; ``valid`` (same extent as ``target``)
    masks pixels out of the loss.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = _check_target(target).astype(np.float64)
    if p.ndim == t.ndim + 1:
        p = p[..., 0]
    if p.shape != t.shape:
        raise UsageError(f"pred {p.shape} and target {t.shape} extents differ")
    p = np.clip(p, clamp_delta, 1.0 - clamp_delta)
    ll = t * np.log(p) + (1.0 - t) * np.log1p(-p)
    if valid is not None:
        ll = ll * np.asarray(valid, dtype=bool)
    n = p.shape[0] if p.ndim == 3 else 1
    return float(-ll.sum() / n)


def bce_grad(pred, target, clamp_delta=1e-7, valid=None):
    """Gradient of :func:`bce_loss` w.r.t. ``pred`` (zero where the clamp is active or masked)."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    squeeze = p.ndim == t.ndim + 1
    if squeeze:
        p = p[..., 0]
    n = p.shape[0] if p.ndim == 3 else 1
    inside = (p > clamp_delta) & (p < 1.0 - clamp_delta)
    pc = np.clip(p, clamp_delta, 1.0 - clamp_delta)
    g = -(t / pc - (1.0 - t) / (1.0 - pc)) / n
    g = np.where(inside, g, 0.0)
    if valid is not None:
        g = g * np.asarray(valid, dtype=bool)
    return g[..., None] if squeeze else g


def split_labels(labels):
    """Label map (BG=0, FG=1, IGNORE=2) -> ``(binary target, valid mask)``."""
    labels = np.asarray(labels)
    return (labels == FG).astype(np.uint8), labels != IGNORE


def sample_training_pairs(frames, groundtruths, n, backgrounds):
    """Pick ``n`` labelled frames at a uniform stride over the labelled span.

    ``groundtruths`` maps frame index -> label map; ``backgrounds`` is the
    per-frame background stream from the pipeline (same length as
    ``frames``). Returns ``(frame, background, labels)`` triples.
    """
    labelled = sorted(groundtruths)
    if not labelled:
        raise UsageError("no labelled frames")
    if len(backgrounds) != len(frames):
        raise UsageError("need one background per frame")
    if n > len(labelled):
        warnings.warn(f"only {len(labelled)} labelled frames, wanted {n}; using all", stacklevel=2)
        n = len(labelled)
    if n < 1:
        raise UsageError("n must be >= 1")
    picks = [labelled[i * len(labelled) // n] for i in range(n)]
    return [(frames[i], backgrounds[i], np.asarray(groundtruths[i])) for i in picks]


@dataclass
class MedalTrainLog:
    epoch_losses: list
    aborted: bool = False


def loss_and_grad(net, x, target, valid, config):
    out, cache = forward(net, x)
    loss = bce_loss(out, target, config.clamp_delta, valid)
    _, grads = backward(net, cache, bce_grad(out, target, config.clamp_delta, valid))
    return loss, grads


def train_medal(net, pairs, config, epochs=None, log_every=0):
    """Shuffled mini-batch Adam on :func:`bce_loss`. Returns ``(net, MedalTrainLog)``.

    Each pair is ``(frame, background, labels)`` where labels use
    BG/FG/IGNORE codes; IGNORE pixels carry no loss or gradient. Aborts with
    :class:`TrainingError` (partial result on ``exc.result``) if the loss or
    a gradient goes non-finite.
    """
    if not pairs:
        raise UsageError("no training pairs")
    x = np.stack([stack_inputs(f, b) for f, b, _ in pairs])
    labels = np.stack([np.asarray(m) for _, _, m in pairs])
    target, valid = split_labels(labels)
    epochs = config.epochs if epochs is None else epochs
    rng = SplitMix64(config.seed).spawn(0x3EDA1)
    state = adam_init(net.weights)
    trained = net.copy()
    tlog = MedalTrainLog([])
    bs = config.batch_size
    for ep in range(epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            loss, grads = loss_and_grad(trained, x[idx], target[idx], valid[idx], config)
            if not np.isfinite(loss):
                tlog.aborted = True
                exc = TrainingError(f"non-finite loss at epoch {ep}")
                exc.result = (trained, tlog)
                raise exc
            try:
                new_w, state = adam_step(trained.weights, grads, state, config.lr)
            except TrainingError as exc:
                tlog.aborted = True
                exc.result = (trained, tlog)
                raise
            trained.weights = new_w
            total += loss * len(idx)
        tlog.epoch_losses.append(total / len(x))
        if log_every and (ep + 1) % log_every == 0:
            log.info("medal epoch %d loss %.4f", ep + 1, tlog.epoch_losses[-1])
    return trained, tlog


def segment(net, frames, backgrounds, epsilon=0.5, batch_size=16):
    """Binary masks ``N x H x W`` for batches of frames and their backgrounds."""
    x = stack_inputs(frames, backgrounds)
    outs = [forward(net, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return binarize(np.concatenate(outs)[..., 0], epsilon)
