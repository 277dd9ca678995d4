import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cdnmedal.errors import ConfigError, UsageError
from cdnmedal.medal_net import (MedalConfig, bce_grad, bce_loss, binarize, build_medal_net, loss_and_grad,
                                medal_forward, sample_training_pairs, split_labels, train_medal)
from cdnmedal.metrics import BG, FG, IGNORE
from cdnmedal.nn import check_network, forward, param_count
from cdnmedal.nn.gradcheck import finite_diff_grad
from cdnmedal.rng import SplitMix64

SMALL = MedalConfig(H=8, W=8)


def rand(shape, seed, lo=0.0, hi=1.0):
    return SplitMix64(seed).uniform(int(np.prod(shape)), lo, hi).reshape(shape)


def test_default_build():
    net = build_medal_net()
    assert param_count(net) == 1285 <= 3000
    assert net.input_shape == (64, 64, 6) and net.output_shape == (64, 64, 1)


def test_separable_saving():
    cfg = MedalConfig()
    ratio = param_count(build_medal_net(cfg, separable=False)) / param_count(build_medal_net(cfg))
    assert ratio >= 4


def test_structure():
    kinds = [(s.kind, s.activation) for s in build_medal_net().layers]
    enc, dec = kinds[:kinds.index(("upsample", "identity"))], kinds[kinds.index(("upsample", "identity")):]
    assert sum(k == "maxpool" for k, _ in enc) == 2
    assert sum(k == "upsample" for k, _ in dec) == 2
    assert all(k != "instancenorm" for k, _ in enc)
    assert sum(k == "instancenorm" for k, _ in dec) == 2
    assert kinds[-1] == ("conv2d", "hard_sigmoid")


@pytest.mark.parametrize("kw", [dict(H=30), dict(W=6), dict(epsilon=1.0), dict(c=2)])
def test_bad_config(kw):
    with pytest.raises(ConfigError):
        MedalConfig(**kw)


def test_concatenation_order():
    net = build_medal_net(SMALL)
    f, b = rand((8, 8, 3), 1), rand((8, 8, 3), 2)
    direct, _ = forward(net, np.concatenate([f, b], -1)[None])
    assert np.array_equal(medal_forward(net, f, b), direct[0])
    assert not np.array_equal(medal_forward(net, b, f), direct[0])


def test_uint8_inputs_are_scaled():
    net = build_medal_net(SMALL)
    f = (rand((8, 8, 3), 3) * 255).astype(np.uint8)
    assert np.array_equal(medal_forward(net, f, f), medal_forward(net, f / 255.0, f / 255.0))


def test_extent_mismatch():
    with pytest.raises(UsageError):
        medal_forward(build_medal_net(SMALL), np.zeros((8, 8, 3)), np.zeros((8, 4, 3)))


@given(st.integers(0, 1000), st.floats(1, 1e4))
def test_output_range(seed, scale):
    net = build_medal_net(SMALL, seed=seed)
    out = medal_forward(net, rand((2, 8, 8, 3), seed, -scale, scale), rand((2, 8, 8, 3), seed + 1, -scale, scale))
    assert out.min() >= 0 and out.max() <= 1


def test_repeated_calls_identical():
    net = build_medal_net(SMALL)
    f, b = rand((8, 8, 3), 4), rand((8, 8, 3), 5)
    assert medal_forward(net, f, b).tobytes() == medal_forward(net, f, b).tobytes()


# loss -------------------------------------------------------------------------

def test_bce_examples():
    t = (rand((2, 8, 8), 6) < 0.5).astype(np.uint8)
    hw = 64
    assert bce_loss(t.astype(float), t) <= hw * -np.log(1 - 1e-7) + 1e-12
    assert bce_loss(np.full((2, 8, 8), 0.5), t) == pytest.approx(hw * np.log(2))
    assert bce_loss(1.0 - t, t) == pytest.approx(hw * -np.log(1e-7))


def test_bce_accepts_channel_axis_and_rejects_non_binary():
    t = np.zeros((1, 4, 4), np.uint8)
    assert bce_loss(np.full((1, 4, 4, 1), 0.5), t) == pytest.approx(16 * np.log(2))
    with pytest.raises(UsageError):
        bce_loss(np.zeros((1, 4, 4)), np.full((1, 4, 4), 2))


@given(arrays(np.float64, (2, 3, 3), elements=st.floats(-5, 5)))
def test_bce_finite_everywhere(pred):
    assert np.isfinite(bce_loss(pred, np.ones((2, 3, 3), np.uint8)))


def test_bce_grad_by_finite_differences():
    p = rand((2, 4, 4), 7, 0.05, 0.95)
    t = (rand((2, 4, 4), 8) < 0.5).astype(np.uint8)
    valid = rand((2, 4, 4), 9) < 0.7
    fd = finite_diff_grad(lambda q: bce_loss(q, t, valid=valid), p, h=1e-6)
    np.testing.assert_allclose(bce_grad(p, t, valid=valid), fd, rtol=1e-5, atol=1e-7)


def test_ignore_pixels_have_zero_loss_and_gradient():
    net = build_medal_net(SMALL)
    x = rand((2, 8, 8, 6), 10)
    labels = (rand((2, 8, 8), 11) < 0.5).astype(np.uint8)
    labels[:, :4] = IGNORE
    t1, v = split_labels(labels)
    t2 = t1.copy()
    t2[:, :4] = 1 - t2[:, :4]
    l1, g1 = loss_and_grad(net, x, t1, v, SMALL)
    l2, g2 = loss_and_grad(net, x, t2, v, SMALL)
    assert l1 == l2
    for g in g1:
        for k in g1[g]:
            assert np.array_equal(g1[g][k], g2[g][k])
    assert np.array_equal(bce_grad(np.full((2, 8, 8), 0.3), t1, valid=v)[:, :4], np.zeros((2, 4, 8)))


def test_gradcheck_bce_through_network():
    net = build_medal_net(SMALL, seed=1)
    x = rand((2, 8, 8, 6), 12)
    t = (rand((2, 8, 8), 13) < 0.5).astype(np.uint8)
    res = check_network(net, x, lambda out: (bce_loss(out, t), bce_grad(out, t)), n_coords=100)
    assert res.ok, res


# binarize -----------------------------------------------------------------------

def test_binarize_examples():
    assert binarize(np.array([0.6, 0.5, 0.4999]), 0.5).tolist() == [1, 1, 0]


@given(arrays(np.float64, 20, elements=st.floats(0, 1)), st.floats(0.01, 0.98), st.floats(0, 0.5))
def test_binarize_monotone(p, eps, bump):
    lo, hi = binarize(p, eps), binarize(p, min(eps + bump, 0.99))
    assert not ((lo == 0) & (hi == 1)).any()


# training pairs -------------------------------------------------------------------

def test_sample_pairs_stride():
    frames = np.zeros((1000, 4, 4, 3), np.uint8)
    gts = {i: np.zeros((4, 4), np.uint8) for i in range(1000)}
    pairs = sample_training_pairs(frames, gts, 200, frames)
    assert len(pairs) == 200
    # recover indices by tagging frames
    tagged = frames.copy()
    tagged[:, 0, 0, 0] = np.arange(1000) % 256
    tagged[:, 0, 0, 1] = np.arange(1000) // 256
    idx = [int(f[0, 0, 0]) + 256 * int(f[0, 0, 1]) for f, _, _ in sample_training_pairs(tagged, gts, 200, tagged)]
    assert idx == list(range(0, 1000, 5))


def test_sample_pairs_all_and_too_few():
    frames = np.zeros((10, 4, 4, 3), np.uint8)
    gts = {i: np.zeros((4, 4), np.uint8) for i in (1, 4, 7)}
    assert len(sample_training_pairs(frames, gts, 3, frames)) == 3
    with pytest.warns(UserWarning):
        assert len(sample_training_pairs(frames, gts, 5, frames)) == 3


# training ----------------------------------------------------------------------------

def toy_pairs(n, seed, size=8):
    r = SplitMix64(seed)
    out = []
    for i in range(n):
        bg = r.uniform(size * size * 3, 0.1, 0.4).reshape(size, size, 3)
        labels = np.zeros((size, size), np.uint8)
        frame = bg.copy()
        if i % 2:
            y, x = r.integers(2, size - 3)
            frame[y:y + 3, x:x + 3] = 0.9
            labels[y:y + 3, x:x + 3] = FG
        out.append((frame, bg, labels))
    return out


def test_zero_epochs_unchanged():
    net = build_medal_net(SMALL)
    out, _ = train_medal(net, toy_pairs(4, 1), SMALL, epochs=0)
    assert all(np.array_equal(out.weights[g][k], net.weights[g][k]) for g in net.weights for k in net.weights[g])


def test_training_deterministic():
    cfg = MedalConfig(H=8, W=8, epochs=5, batch_size=2)
    pairs = toy_pairs(4, 2)
    a, la = train_medal(build_medal_net(cfg), pairs, cfg)
    b, lb = train_medal(build_medal_net(cfg), pairs + pairs, cfg)
    c, lc = train_medal(build_medal_net(cfg), pairs, cfg)
    assert la.epoch_losses == lc.epoch_losses
    assert all(np.array_equal(a.weights[g][k], c.weights[g][k]) for g in a.weights for k in a.weights[g])
    assert np.isfinite(lb.epoch_losses).all()


def test_equal_inputs_read_as_background_after_training():
    cfg = MedalConfig(H=8, W=8, epochs=150, batch_size=4, seed=3)
    net, _ = train_medal(build_medal_net(cfg), toy_pairs(16, 4), cfg)
    bg = rand((8, 8, 3), 20, 0.1, 0.4)
    assert medal_forward(net, bg, bg).mean() < 0.5


def test_empty_pairs_rejected():
    with pytest.raises(UsageError):
        train_medal(build_medal_net(SMALL), [], SMALL)
