"""Frame-directory layouts: CDnet, SBMnet and flat numbered directories.

CDnet: ``input/in%06d.*``, ``groundtruth/gt%06d.png``, ``ROI.bmp|ROI.png``
(spatial) and ``temporalROI.txt`` (first and last evaluated index, 1-based).
SBMnet: ``input/in%06d.*`` plus an optional ``GT/*`` background image.
Flat: any directory of numbered images, index = trailing digits of the stem.
"""
from dataclasses import dataclass
from pathlib import Path
import re

import numpy as np

from ..errors import DataError
from ..metrics import BG, FG, IGNORE
from .codecs import SUPPORTED, read_image

KINDS = ("cdnet", "sbmnet", "flat")
CDNET_LEVELS = {0: BG, 50: BG, 85: IGNORE, 170: IGNORE, 255: FG}
_NUM = re.compile(r"(\d+)$")


@dataclass
class DatasetLayout:
    kind: str
    root: Path

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown layout {self.kind!r}; expected one of {KINDS}")
        self.root = Path(self.root)
        if not self.root.is_dir():
            raise DataError(f"{self.root}: not a directory")

    @property
    def input_dir(self):
        return self.root if self.kind == "flat" else self.root / "input"

    @property
    def gt_dir(self):
        return self.root / "groundtruth"

    def temporal_roi(self):
        f = self.root / "temporalROI.txt"
        if self.kind != "cdnet" or not f.exists():
            return None
        try:
            a, b = (int(v) for v in f.read_text().split()[:2])
        except ValueError as exc:
            raise DataError(f"{f}: expected two integers") from exc
        return a, b

    def spatial_roi(self):
        if self.kind != "cdnet":
            return None
        for name in ("ROI.png", "ROI.pgm", "ROI.bmp"):
            f = self.root / name
            if f.exists():
                if f.suffix == ".bmp":
                    raise DataError(f"{f}: convert ROI.bmp to ROI.png first")
                roi = read_image(f)
                return (roi if roi.ndim == 2 else roi[..., 0]) > 0
        return None


def indexed_files(directory):
    """``{index: path}`` for numbered image files; errors on unsupported codecs or gaps."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    found = {}
    for p in sorted(directory.iterdir()):
        if not p.is_file() or p.name.startswith("."):
            continue
        m = _NUM.search(p.stem)
        if not m:
            continue
        if p.suffix.lower() not in SUPPORTED:
            raise DataError(f"{p}: unsupported image format {p.suffix!r}; convert to PNG first")
        idx = int(m.group(1))
        if idx in found:
            raise DataError(f"{p}: duplicate frame index {idx} (also {found[idx].name})")
        found[idx] = p
    if not found:
        raise DataError(f"{directory}: no numbered frames")
    return dict(sorted(found.items()))


def check_contiguous(indices, where):
    idx = sorted(indices)
    missing = sorted(set(range(idx[0], idx[-1] + 1)) - set(idx))
    if missing:
        shown = ", ".join(map(str, missing[:10])) + (" ..." if len(missing) > 10 else "")
        raise DataError(f"{where}: missing frame indices {shown}")


def load_frames(layout, start=None, stop=None):
    """Frames ``[start, stop]`` (inclusive indices, default all) as a list of uint8 arrays, plus their indices."""
    files = indexed_files(layout.input_dir)
    check_contiguous(files, layout.input_dir)
    keys = [i for i in files if (start is None or i >= start) and (stop is None or i <= stop)]
    if not keys:
        raise DataError(f"{layout.input_dir}: no frames in range [{start}, {stop}]")
    frames = [read_image(files[i]) for i in keys]
    shape = frames[0].shape
    for i, f in zip(keys, frames):
        if f.shape != shape:
            raise DataError(f"{files[i]}: extent {f.shape} differs from {shape}")
    return frames, keys


def map_cdnet_levels(gray, where=""):
    gray = np.asarray(gray)
    if gray.ndim == 3:
        gray = gray[..., 0]
    bad = np.setdiff1d(np.unique(gray), list(CDNET_LEVELS))
    if bad.size:
        raise DataError(f"{where}: unexpected ground-truth gray levels {bad.tolist()}")
    lut = np.full(256, IGNORE, dtype=np.uint8)
    for level, code in CDNET_LEVELS.items():
        lut[level] = code
    return lut[gray]


def load_cdnet_groundtruth(layout, index):
    """Label map (BG/FG/IGNORE) for frame ``index`` with spatial and temporal ROI applied."""
    f = None
    for ext in (".png", ".pgm"):
        cand = layout.gt_dir / f"gt{index:06d}{ext}"
        if cand.exists():
            f = cand
            break
    if f is None:
        raise DataError(f"{layout.gt_dir}: no ground truth for frame {index}")
    labels = map_cdnet_levels(read_image(f), str(f))
    troi = layout.temporal_roi()
    if troi is not None and not troi[0] <= index <= troi[1]:
        labels[:] = IGNORE
    roi = layout.spatial_roi()
    if roi is not None:
        if roi.shape != labels.shape:
            raise DataError(f"ROI extent {roi.shape} differs from ground truth {labels.shape}")
        labels[~roi] = IGNORE
    return labels


def load_sbmnet_background(layout):
    gdir = layout.root / "GT"
    if not gdir.is_dir():
        return None
    imgs = [p for p in sorted(gdir.iterdir()) if p.suffix.lower() in SUPPORTED]
    return read_image(imgs[0]) if imgs else None
