import numpy as np
import pytest
from hypothesis import given, strategies as st

from cdnmedal.nn import kernels
from cdnmedal.rng import SplitMix64


def rand(shape, seed):
    return SplitMix64(seed).uniform(int(np.prod(shape)), -1, 1).reshape(shape)


def ref_conv2d(x, w, b, stride):
    # direct definition: TF "same" padding, odd pad element after the data
    n, h, wd, _ = x.shape
    kh, kw, _, co = w.shape
    sh, sw = stride
    oh, ow = -(-h // sh), -(-wd // sw)
    ph = max((oh - 1) * sh + kh - h, 0) // 2
    pw = max((ow - 1) * sw + kw - wd, 0) // 2
    y = np.zeros((n, oh, ow, co))
    for i in range(oh):
        for j in range(ow):
            for a in range(kh):
                for c in range(kw):
                    r, q = i * sh + a - ph, j * sw + c - pw
                    if 0 <= r < h and 0 <= q < wd:
                        y[:, i, j] += x[:, r, q] @ w[a, c]
    return y + b


def ref_dwconv2d(x, w, b, stride):
    c = x.shape[-1]
    full = np.zeros(w.shape[:2] + (c, c))
    for ch in range(c):
        full[:, :, ch, ch] = w[:, :, ch]
    return ref_conv2d(x, full, b, stride)


@pytest.mark.parametrize("size,k,stride,expected", [
    (8, 3, 1, (8, 1)), (8, 5, 4, (2, 0)), (7, 3, 2, (4, 1)), (96, 5, 4, (24, 0)), (4, 1, 1, (4, 0)),
])
def test_same_padding(size, k, stride, expected):
    assert kernels.same_padding(size, k, stride) == expected


@pytest.mark.parametrize("impl", ["numpy", "loops"])
@pytest.mark.parametrize("stride", [(1, 1), (1, 4), (2, 2)])
def test_conv2d_forward_matches_definition(impl, stride):
    x, w, b = rand((2, 6, 8, 3), 1), rand((3, 3, 3, 4), 2), rand((4,), 3)
    fn = getattr(kernels, f"conv2d_forward_{impl}")
    np.testing.assert_allclose(fn(x, w, b, stride), ref_conv2d(x, w, b, stride), atol=1e-12)


@pytest.mark.parametrize("impl", ["numpy", "loops"])
@pytest.mark.parametrize("stride", [(1, 1), (2, 2)])
def test_dwconv2d_forward_matches_definition(impl, stride):
    x, w, b = rand((2, 5, 6, 3), 4), rand((3, 3, 3), 5), rand((3,), 6)
    fn = getattr(kernels, f"dwconv2d_forward_{impl}")
    np.testing.assert_allclose(fn(x, w, b, stride), ref_dwconv2d(x, w, b, stride), atol=1e-12)


def _fd_check(fwd, bwd, x, w, b, stride):
    dy = rand(fwd(x, w, b, stride).shape, 9)
    dx, dw, db = bwd(x, w, dy, stride)
    h = 1e-6

    def loss(x_, w_, b_):
        return (fwd(x_, w_, b_, stride) * dy).sum()

    for arr, grad in ((x, dx), (w, dw), (b, db)):
        for idx in list(np.ndindex(arr.shape))[::7][:12]:
            old = arr[idx]
            arr[idx] = old + h
            up = loss(x, w, b)
            arr[idx] = old - h
            down = loss(x, w, b)
            arr[idx] = old
            assert abs((up - down) / (2 * h) - grad[idx]) < 1e-6


@pytest.mark.parametrize("impl", ["numpy", "loops"])
def test_conv2d_backward_by_finite_differences(impl):
    _fd_check(getattr(kernels, f"conv2d_forward_{impl}"), getattr(kernels, f"conv2d_backward_{impl}"),
              rand((2, 5, 7, 2), 1), rand((3, 3, 2, 3), 2), rand((3,), 3), (2, 2))


@pytest.mark.parametrize("impl", ["numpy", "loops"])
def test_dwconv2d_backward_by_finite_differences(impl):
    _fd_check(getattr(kernels, f"dwconv2d_forward_{impl}"), getattr(kernels, f"dwconv2d_backward_{impl}"),
              rand((2, 5, 7, 2), 1), rand((3, 3, 2), 2), rand((2,), 3), (1, 2))


@given(st.integers(1, 3), st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3, 5]),
       st.sampled_from([(1, 1), (1, 2), (2, 2), (1, 4)]), st.integers(0, 1000))
def test_backends_agree(n, h, w, k, stride, seed):
    x, wt, b = rand((n, h, w, 2), seed), rand((k, k, 2, 3), seed + 1), rand((3,), seed + 2)
    np.testing.assert_allclose(kernels.conv2d_forward_loops(x, wt, b, stride),
                               kernels.conv2d_forward_numpy(x, wt, b, stride), atol=1e-12)
    dy = rand(kernels.conv2d_forward_numpy(x, wt, b, stride).shape, seed + 3)
    for a, c in zip(kernels.conv2d_backward_loops(x, wt, dy, stride),
                    kernels.conv2d_backward_numpy(x, wt, dy, stride)):
        np.testing.assert_allclose(a, c, atol=1e-12)
    dw = rand((k, k, 2), seed + 4)
    np.testing.assert_allclose(kernels.dwconv2d_forward_loops(x, dw, b[:2], stride),
                               kernels.dwconv2d_forward_numpy(x, dw, b[:2], stride), atol=1e-12)


def test_maxpool_first_max_wins_and_routes_gradient():
    x = np.array([[1, 3, 2, 2], [3, 0, 2, 1]], float).reshape(1, 2, 4, 1)
    y, arg = kernels.maxpool2_forward(x)
    assert y.ravel().tolist() == [3, 2]
    dx = kernels.maxpool2_backward(arg, np.ones_like(y))
    # the first maximal element in row-major window order receives the gradient
    assert dx.reshape(2, 4).tolist() == [[0, 1, 1, 0], [0, 0, 0, 0]]


def test_upsample_backward_is_adjoint():
    x, dy = rand((2, 3, 4, 2), 1), rand((2, 6, 8, 2), 2)
    lhs = (kernels.upsample2_forward(x) * dy).sum()
    rhs = (x * kernels.upsample2_backward(dy)).sum()
    assert abs(lhs - rhs) < 1e-12
