"""Convolution and pooling kernels on NHWC arrays.

Every op has two implementations with identical semantics: an explicit-loop
kernel compiled by numba, and a vectorized numpy fallback that loops over
kernel taps. ``cdnmedal._accel.USE_NUMBA`` picks one at import time; both are
importable under ``*_numpy`` / ``*_loops`` names so they can be compared.

Padding is "same" in the TensorFlow sense: ``out = ceil(in / stride)`` and the
odd pad element goes after the data. 1-D convolutions are run as 2-D ones with
a 1 x k kernel.
"""
import numpy as np

from .._accel import USE_NUMBA, njit


def same_padding(size, k, stride):
    """Return ``(out, pad_before)`` for "same" padding along one axis."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2


# --------------------------------------------------------------------------
# numpy reference paths
# --------------------------------------------------------------------------

def _pad(x, kh, kw, sh, sw):
    n, h, w, c = x.shape
    ho, ph = same_padding(h, kh, sh)
    wo, pw = same_padding(w, kw, sw)
    hp = (ho - 1) * sh + kh
    wp = (wo - 1) * sw + kw
    xp = np.zeros((n, max(hp, h + ph), max(wp, w + pw), c), dtype=x.dtype)
    xp[:, ph:ph + h, pw:pw + w, :] = x
    return xp, ho, wo, ph, pw


def _tap(xp, i, j, ho, wo, sh, sw):
    return xp[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw, :]


def conv2d_forward_numpy(x, w, b, stride=(1, 1)):
    kh, kw, _, cout = w.shape
    sh, sw = stride
    xp, ho, wo, _, _ = _pad(x, kh, kw, sh, sw)
    y = np.empty((x.shape[0], ho, wo, cout), dtype=x.dtype)
    y[...] = b
    for i in range(kh):
        for j in range(kw):
            y += _tap(xp, i, j, ho, wo, sh, sw) @ w[i, j]
    return y


def conv2d_backward_numpy(x, w, dy, stride=(1, 1)):
    kh, kw, cin, cout = w.shape
    sh, sw = stride
    n, h, wd, _ = x.shape
    xp, ho, wo, ph, pw = _pad(x, kh, kw, sh, sw)
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    dy2 = dy.reshape(-1, cout)
    for i in range(kh):
        for j in range(kw):
            tap = _tap(xp, i, j, ho, wo, sh, sw)
            dw[i, j] = tap.reshape(-1, cin).T @ dy2
            _tap(dxp, i, j, ho, wo, sh, sw)[...] += dy @ w[i, j].T
    db = dy2.sum(axis=0)
    return dxp[:, ph:ph + h, pw:pw + wd, :].copy(), dw, db


def dwconv2d_forward_numpy(x, w, b, stride=(1, 1)):
    kh, kw, c = w.shape
    sh, sw = stride
    xp, ho, wo, _, _ = _pad(x, kh, kw, sh, sw)
    y = np.empty((x.shape[0], ho, wo, c), dtype=x.dtype)
    y[...] = b
    for i in range(kh):
        for j in range(kw):
            y += _tap(xp, i, j, ho, wo, sh, sw) * w[i, j]
    return y


def dwconv2d_backward_numpy(x, w, dy, stride=(1, 1)):
    kh, kw, c = w.shape
    sh, sw = stride
    n, h, wd, _ = x.shape
    xp, ho, wo, ph, pw = _pad(x, kh, kw, sh, sw)
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for i in range(kh):
        for j in range(kw):
            tap = _tap(xp, i, j, ho, wo, sh, sw)
            dw[i, j] = (tap * dy).reshape(-1, c).sum(axis=0)
            _tap(dxp, i, j, ho, wo, sh, sw)[...] += dy * w[i, j]
    db = dy.reshape(-1, c).sum(axis=0)
    return dxp[:, ph:ph + h, pw:pw + wd, :].copy(), dw, db


# --------------------------------------------------------------------------
# explicit-loop kernels (compiled when numba is enabled)
# --------------------------------------------------------------------------

@njit
def _conv2d_fwd_loops(x, w, b, sh, sw, ho, wo, ph, pw):
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    y = np.empty((n, ho, wo, cout), dtype=x.dtype)
    for s in range(n):
        for oh in range(ho):
            for ow in range(wo):
                for co in range(cout):
                    y[s, oh, ow, co] = b[co]
                for i in range(kh):
                    ih = oh * sh + i - ph
                    if ih < 0 or ih >= h:
                        continue
                    for j in range(kw):
                        iw = ow * sw + j - pw
                        if iw < 0 or iw >= wd:
                            continue
                        for ci in range(cin):
                            xv = x[s, ih, iw, ci]
                            for co in range(cout):
                                y[s, oh, ow, co] += xv * w[i, j, ci, co]
    return y


@njit
def _conv2d_bwd_loops(x, w, dy, sh, sw, ph, pw):
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ho, wo = dy.shape[1], dy.shape[2]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(cout, dtype=x.dtype)
    for s in range(n):
        for oh in range(ho):
            for ow in range(wo):
                for co in range(cout):
                    db[co] += dy[s, oh, ow, co]
                for i in range(kh):
                    ih = oh * sh + i - ph
                    if ih < 0 or ih >= h:
                        continue
                    for j in range(kw):
                        iw = ow * sw + j - pw
                        if iw < 0 or iw >= wd:
                            continue
                        for ci in range(cin):
                            xv = x[s, ih, iw, ci]
                            acc = 0.0
                            for co in range(cout):
                                g = dy[s, oh, ow, co]
                                dw[i, j, ci, co] += xv * g
                                acc += w[i, j, ci, co] * g
                            dx[s, ih, iw, ci] += acc
    return dx, dw, db


@njit
def _dwconv2d_fwd_loops(x, w, b, sh, sw, ho, wo, ph, pw):
    n, h, wd, c = x.shape
    kh, kw, _ = w.shape
    y = np.empty((n, ho, wo, c), dtype=x.dtype)
    for s in range(n):
        for oh in range(ho):
            for ow in range(wo):
                for ch in range(c):
                    y[s, oh, ow, ch] = b[ch]
                for i in range(kh):
                    ih = oh * sh + i - ph
                    if ih < 0 or ih >= h:
                        continue
                    for j in range(kw):
                        iw = ow * sw + j - pw
                        if iw < 0 or iw >= wd:
                            continue
                        for ch in range(c):
                            y[s, oh, ow, ch] += x[s, ih, iw, ch] * w[i, j, ch]
    return y


@njit
def _dwconv2d_bwd_loops(x, w, dy, sh, sw, ph, pw):
    n, h, wd, c = x.shape
    kh, kw, _ = w.shape
    ho, wo = dy.shape[1], dy.shape[2]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(c, dtype=x.dtype)
    for s in range(n):
        for oh in range(ho):
            for ow in range(wo):
                for ch in range(c):
                    db[ch] += dy[s, oh, ow, ch]
                for i in range(kh):
                    ih = oh * sh + i - ph
                    if ih < 0 or ih >= h:
                        continue
                    for j in range(kw):
                        iw = ow * sw + j - pw
                        if iw < 0 or iw >= wd:
                            continue
                        for ch in range(c):
                            g = dy[s, oh, ow, ch]
                            dw[i, j, ch] += x[s, ih, iw, ch] * g
                            dx[s, ih, iw, ch] += w[i, j, ch] * g
    return dx, dw, db


def conv2d_forward_loops(x, w, b, stride=(1, 1)):
    ho, ph = same_padding(x.shape[1], w.shape[0], stride[0])
    wo, pw = same_padding(x.shape[2], w.shape[1], stride[1])
    return _conv2d_fwd_loops(x, w, b, stride[0], stride[1], ho, wo, ph, pw)


def conv2d_backward_loops(x, w, dy, stride=(1, 1)):
    _, ph = same_padding(x.shape[1], w.shape[0], stride[0])
    _, pw = same_padding(x.shape[2], w.shape[1], stride[1])
    return _conv2d_bwd_loops(x, w, dy, stride[0], stride[1], ph, pw)


def dwconv2d_forward_loops(x, w, b, stride=(1, 1)):
    ho, ph = same_padding(x.shape[1], w.shape[0], stride[0])
    wo, pw = same_padding(x.shape[2], w.shape[1], stride[1])
    return _dwconv2d_fwd_loops(x, w, b, stride[0], stride[1], ho, wo, ph, pw)


def dwconv2d_backward_loops(x, w, dy, stride=(1, 1)):
    _, ph = same_padding(x.shape[1], w.shape[0], stride[0])
    _, pw = same_padding(x.shape[2], w.shape[1], stride[1])
    return _dwconv2d_bwd_loops(x, w, dy, stride[0], stride[1], ph, pw)


# --------------------------------------------------------------------------
# pooling / resampling (numpy only: pure reshapes)
# --------------------------------------------------------------------------

def maxpool2_forward(x):
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // 2, w // 2, c, 4)
    # first maximum wins on ties
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return y, arg


def maxpool2_backward(arg, dy):
    n, ho, wo, c = dy.shape
    onehot = (arg[..., None] == np.arange(4)).astype(dy.dtype) * dy[..., None]
    dx = onehot.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return dx.reshape(n, ho * 2, wo * 2, c)


def upsample2_forward(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(dy):
    n, h, w, c = dy.shape
    return dy.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


# Dense convolution is a GEMM after im2col and BLAS beats the compiled loops
# on it (see benchmarks/bench_backends.py), so both backends use the numpy
# path there. The loop versions stay available for cross-checking.
conv2d_forward = conv2d_forward_numpy
conv2d_backward = conv2d_backward_numpy
if USE_NUMBA:
    dwconv2d_forward = dwconv2d_forward_loops
    dwconv2d_backward = dwconv2d_backward_loops
else:
    dwconv2d_forward = dwconv2d_forward_numpy
    dwconv2d_backward = dwconv2d_backward_numpy
