"""Synthetic scenes with exact ground truth.

Objects step horizontally by a fixed number of pixels per frame and wrap
around the right edge, each inside its own row band. With an integer step
coprime to W the left edge visits every column once per W frames, so a
pixel's long-run foreground occupancy is the object's chord width at that row
divided by W. The default step is the integer nearest W / phi^2 that is
coprime to W, which spreads partial periods evenly. All randomness (object
phases, sensor noise) comes from one SplitMix64 stream seeded by the spec.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from ..errors import ConfigError
from ..rng import SplitMix64

BACKGROUNDS = ("flat", "gradient", "checker")
SHAPES = ("rect", "disc")


@dataclass(frozen=True)
class SynthSpec:
    H: int = 128
    W: int = 128
    frames: int = 300
    c: int = 3
    background: str = "gradient"
    bg_colors: tuple = ((30, 50, 70), (80, 60, 40))
    checker_size: int = 16
    shape: str = "rect"
    objects: int = 2
    occupancy: float = 0.3
    object_height: int = 24
    speed: float | None = None
    object_color: tuple = (225, 215, 235)
    noise_sd: float = 4.0
    ramp: float = 0.0
    seed: int = 0
    max_occupancy: float = 0.5

    def __post_init__(self):
        if self.H < 1 or self.W < 1 or self.frames < 1:
            raise ConfigError("H, W and frames must be >= 1")
        if self.c not in (1, 3):
            raise ConfigError("c must be 1 or 3")
        if self.background not in BACKGROUNDS:
            raise ConfigError(f"background must be one of {BACKGROUNDS}")
        if self.shape not in SHAPES:
            raise ConfigError(f"shape must be one of {SHAPES}")
        if self.occupancy > 0.95:
            raise ConfigError(f"occupancy {self.occupancy} > 0.95: the background would be unrecoverable")
        if not 0 <= self.occupancy <= self.max_occupancy:
            raise ConfigError(f"occupancy {self.occupancy} outside [0, {self.max_occupancy}]")
        if self.objects < 0 or self.objects * self.object_height > self.H:
            raise ConfigError("object bands do not fit in the frame height")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")

    @property
    def step(self):
        if self.speed is not None:
            return self.speed
        v = max(1, round(self.W * (3 - math.sqrt(5)) / 2))
        while math.gcd(v, self.W) != 1:
            v += 1
        return v

    @property
    def object_width(self):
        return int(round(self.occupancy * self.W))


@dataclass
class SynthScene:
    frames: np.ndarray       # F x H x W x c uint8
    background: np.ndarray   # H x W x c uint8
    masks: np.ndarray        # F x H x W uint8 (1 = foreground)
    spec: SynthSpec = field(repr=False)


def _colors(spec, idx):
    col = np.asarray(spec.bg_colors[idx], dtype=np.float64)
    return col[:spec.c] if spec.c == 3 else col[:1]


def render_background(spec):
    a, b = _colors(spec, 0), _colors(spec, 1)
    if spec.background == "flat":
        img = np.broadcast_to(a, (spec.H, spec.W, len(a))).copy()
    elif spec.background == "gradient":
        t = (np.arange(spec.W) / max(spec.W - 1, 1))[None, :, None]
        img = np.broadcast_to(a * (1 - t) + b * t, (spec.H, spec.W, len(a))).copy()
    else:
        yy, xx = np.mgrid[:spec.H, :spec.W]
        odd = ((yy // spec.checker_size + xx // spec.checker_size) % 2)[..., None]
        img = np.where(odd == 1, b, a)
    return np.floor(img + 0.5).clip(0, 255).astype(np.uint8)


def _band_tops(spec):
    if spec.objects == 0:
        return []
    gap = spec.H / spec.objects
    return [int(gap * i + (gap - spec.object_height) / 2) for i in range(spec.objects)]


def _chords(spec):
    """Per-row chord width inside one object band."""
    h, w = spec.object_height, spec.object_width
    if spec.shape == "rect":
        return np.full(h, w, dtype=np.int64)
    # ellipse with axes w x h, chord measured at row centres
    y = (np.arange(h) + 0.5 - h / 2) / (h / 2)
    return np.floor(w * np.sqrt(np.clip(1 - y * y, 0, 1)) + 0.5).astype(np.int64)


def occupancy_map(spec):
    """Closed-form long-run fraction of frames in which each pixel is foreground."""
    occ = np.zeros((spec.H, spec.W))
    chords = _chords(spec)
    for top in _band_tops(spec):
        occ[top:top + spec.object_height] = (chords / spec.W)[:, None]
    return occ


def object_masks(spec, phases):
    """Binary masks for all frames from object phases (left edge at frame 0)."""
    F, H, W = spec.frames, spec.H, spec.W
    masks = np.zeros((F, H, W), dtype=np.uint8)
    chords = _chords(spec)
    w = spec.object_width
    xs = np.arange(W)
    t = np.arange(F)
    for top, phase in zip(_band_tops(spec), phases):
        left = np.floor(phase + spec.step * t) % W                   # F
        for r, chord in enumerate(chords):
            if chord == 0:
                continue
            start = left + (w - chord) // 2
            inside = ((xs[None, :] - start[:, None]) % W) < chord     # F x W
            masks[:, top + r, :] |= inside.astype(np.uint8)
    return masks


def synth_generate(spec):
    """Render ``spec``; a pure function of the spec including its seed."""
    rng = SplitMix64(spec.seed)
    bg = render_background(spec)
    phases = rng.uniform(spec.objects, 0.0, spec.W) if spec.objects else np.zeros(0)
    masks = object_masks(spec, phases)
    obj = np.asarray(spec.object_color, dtype=np.float64)[:spec.c]
    frames = np.where(masks[..., None] == 1, obj, bg.astype(np.float64))
    if spec.ramp:
        frames = frames + spec.ramp * (np.arange(spec.frames) / max(spec.frames - 1, 1))[:, None, None, None]
    if spec.noise_sd > 0:
        frames = frames + rng.normal(frames.size, spec.noise_sd).reshape(frames.shape)
    frames = np.floor(frames + 0.5).clip(0, 255).astype(np.uint8)
    return SynthScene(frames, bg, masks, spec)
