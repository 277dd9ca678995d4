"""8-bit image read/write (PNG, binary PGM/PPM) and atomic file output."""
import contextlib
import os
from pathlib import Path
import tempfile

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DataError

SUPPORTED = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temp path next to ``path``; it replaces ``path`` only if the block succeeds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix="." + path.name, suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text):
    with atomic_path(path) as tmp:
        Path(tmp).write_text(text)


def read_image(path):
    """Decode to ``H x W`` (gray) or ``H x W x 3`` uint8."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED:
        raise DataError(f"{path}: unsupported image format {path.suffix!r} (PNG, PGM, PPM only)")
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise DataError(f"{path}: unsupported codec {im.format}")
            if im.info.get("interlace"):
                raise DataError(f"{path}: interlaced PNG is not supported")
            if im.mode in ("L", "RGB"):
                return np.asarray(im).copy()
            if im.mode in ("1", "P", "LA", "RGBA"):
                return np.asarray(im.convert("RGB" if im.mode in ("P", "RGBA") else "L")).copy()
            raise DataError(f"{path}: unsupported pixel mode {im.mode} (8-bit only)")
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"{path}: cannot decode ({exc})") from exc


def write_image(path, img):
    """Encode uint8 ``H x W``, ``H x W x 1`` or ``H x W x 3`` atomically; format from the suffix."""
    path = Path(path)
    fmt = SUPPORTED.get(path.suffix.lower())
    if fmt is None:
        raise DataError(f"{path}: unsupported image format {path.suffix!r}")
    a = np.asarray(img)
    if a.dtype != np.uint8:
        raise DataError(f"{path}: expected uint8 pixels, got {a.dtype}")
    if a.ndim == 3 and a.shape[-1] == 1:
        a = a[..., 0]
    if path.suffix.lower() == ".pgm" and a.ndim != 2:
        raise DataError(f"{path}: PGM needs a single-channel image")
    with atomic_path(path) as tmp:
        Image.fromarray(a).save(tmp, format=fmt)
