"""Numba switch.

Set ``CDNMEDAL_PURE_NUMPY=1`` to force the vectorized numpy code paths even
when numba is importable. The flag is read once at import time.
"""
import os

_disabled = os.environ.get("CDNMEDAL_PURE_NUMPY", "0").lower() in ("1", "true", "yes")

try:
    from numba import njit as _njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _disabled


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is enabled, else return it as is."""
    if not USE_NUMBA:
        return fn
    return _njit(cache=True, nogil=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
