"""Frames in, backgrounds and masks out.

Pixel histories are laid out row-major: history ``r * W + w`` is pixel
``(r, w)`` across the window, scaled to [0, 1]. The background is refreshed
every ``hop`` frames from the latest ``T``-frame window; frames that arrive
before the first refresh reuse that first background.
"""
from collections import deque
from dataclasses import dataclass, field
import logging
import warnings

import numpy as np

from .cdn_gm import extract_background_values
from .errors import UsageError
from .medal_net import segment

log = logging.getLogger(__name__)


def reform_pixel_histories(window):
    """``T x H x W x c`` frames (uint8 or [0, 1] floats) -> ``H*W x T x c`` histories."""
    w = np.asarray(window)
    if w.dtype == object or w.ndim != 4:
        raise UsageError(f"window must be T x H x W x c with uniform extents, got shape {w.shape}")
    T, H, W, c = w.shape
    hist = w.transpose(1, 2, 0, 3).reshape(H * W, T, c)
    if hist.dtype == np.uint8:
        return hist.astype(np.float32) / 255.0
    return hist.astype(np.float32)


def stack_frames(frames):
    frames = list(frames)
    if not frames:
        raise UsageError("no frames")
    shape = np.shape(frames[0])
    for i, f in enumerate(frames):
        if np.shape(f) != shape:
            raise UsageError(f"frame {i} has extent {np.shape(f)}, expected {shape}")
    out = np.stack(frames)
    return out[..., None] if out.ndim == 3 else out


def reconstruct_background(values, H, W):
    """Per-pixel ``H*W x c`` intensities in [0, 1] -> ``H x W x c`` uint8, rounded half-up."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] != H * W:
        raise UsageError(f"got {v.shape[0]} pixel values for a {H}x{W} image")
    return np.floor(np.clip(v, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8).reshape(H, W, -1)


def refresh_frames(n_frames, T, hop):
    """Indices of frames at which the background is recomputed.

    A refresh happens once a full window has arrived (frame ``T - 1``) and
    every ``hop`` frames after; a sequence shorter than ``T`` gets one
    refresh at its last frame.
    """
    if T < 1 or hop < 1:
        raise UsageError("T and hop must be >= 1")
    if n_frames < 1:
        return []
    if n_frames < T:
        return [n_frames - 1]
    return list(range(T - 1, n_frames, hop))


@dataclass
class WindowState:
    T: int
    buffer: deque = field(default=None)
    background: np.ndarray | None = None
    frames_since_refresh: int = 0

    def __post_init__(self):
        if self.buffer is None:
            self.buffer = deque(maxlen=self.T)

    def push(self, frame):
        self.buffer.append(frame)
        self.frames_since_refresh += 1

    def window(self):
        frames = list(self.buffer)
        if len(frames) < self.T:
            warnings.warn(f"only {len(frames)} frames for a window of {self.T}; repeating the first frame",
                          stacklevel=3)
            frames = [frames[0]] * (self.T - len(frames)) + frames
        return np.stack(frames)


def compute_background(cdn, cdn_config, window):
    hist = reform_pixel_histories(window)
    _, H, W, _ = np.shape(window)
    return reconstruct_background(extract_background_values(cdn, hist, cdn_config), H, W)


def background_stream(frames, cdn, cdn_config, hop=None):
    """One background per frame following the refresh schedule. Yields ``(index, background, refreshed)``."""
    frames = stack_frames(frames)
    T = cdn_config.T
    hop = hop or T
    todo = set(refresh_frames(len(frames), T, hop))
    state = WindowState(T)
    pending = []
    for i, f in enumerate(frames):
        state.push(f)
        refreshed = i in todo
        if refreshed:
            state.background = compute_background(cdn, cdn_config, state.window())
            state.frames_since_refresh = 0
        if state.background is None:
            pending.append(i)
            continue
        for j in pending:
            yield j, state.background, False
        pending = []
        yield i, state.background, refreshed


def process_sequence(frames, cdn, medal, cdn_config, epsilon=0.5, hop=None, batch_size=16):
    """Run both networks over a sequence. Returns ``(masks F x H x W, backgrounds F x H x W x c)``."""
    frames = stack_frames(frames)
    if frames.shape[1] % 4 or frames.shape[2] % 4:
        raise UsageError(f"frame extents {frames.shape[1:3]} must be divisible by 4")
    backgrounds = np.empty_like(frames)
    for i, bg, _ in background_stream(frames, cdn, cdn_config, hop):
        backgrounds[i] = bg
    masks = np.empty(frames.shape[:3], dtype=np.uint8)
    for s in range(0, len(frames), batch_size):
        masks[s:s + batch_size] = segment(medal, frames[s:s + batch_size], backgrounds[s:s + batch_size],
                                          epsilon, batch_size)
    return masks, backgrounds
