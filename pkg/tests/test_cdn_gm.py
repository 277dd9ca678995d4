import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from cdnmedal.cdn_gm import (CdnGmConfig, MixtureParams, build_cdn_gm, canonical_order, constrain, gmm_pdf,
                             head_gradients_loops, head_gradients_numpy, nll_loss, predict_params,
                             responsibilities, select_background, train_cdn_gm)
from cdnmedal.errors import ConfigError, TrainingError
from cdnmedal.nn import check_network, param_count
from cdnmedal.nn.gradcheck import finite_diff_grad
from cdnmedal.rng import SplitMix64

CFG = CdnGmConfig()


def rand_head(n, seed, scale=2.0, cfg=CFG):
    return SplitMix64(seed).uniform(n * cfg.head_size, -scale, scale).reshape(n, cfg.head_size)


def rand_hist(n, T, seed, c=3):
    return SplitMix64(seed).uniform(n * T * c).reshape(n, T, c)


def ref_mixture_logpdf(x, p):
    # scipy per-component isotropic Gaussians, independent of the package's density code
    comps = [np.log(p.pi[k]) + multivariate_normal(p.mu[k], p.sigma[k] * np.eye(p.c)).logpdf(x)
             for k in range(p.K)]
    return logsumexp(np.stack(comps, -1), axis=-1)


# config / build ------------------------------------------------------------

def test_head_sizes():
    assert build_cdn_gm(CdnGmConfig(c=3)).output_shape == (15,)
    assert build_cdn_gm(CdnGmConfig(c=1)).output_shape == (9,)


def test_param_budget():
    assert param_count(build_cdn_gm()) == 4159 <= 5000


def test_seven_learned_layers():
    kinds = [s.kind for s in build_cdn_gm().layers]
    assert kinds == ["dwconv1d", "dwconv1d", "conv1d", "conv1d", "dense", "dense", "dense"]


@pytest.mark.parametrize("kw", [dict(T=100), dict(K=0), dict(sigma_min_gray=40), dict(c=2)])
def test_bad_config(kw):
    with pytest.raises(ConfigError):
        CdnGmConfig(**kw)


# constrain -----------------------------------------------------------------

def test_zero_head():
    p = constrain(np.zeros(15), CFG)
    np.testing.assert_allclose(p.pi, 1 / 3)
    np.testing.assert_allclose(p.sigma, 24 / 255)
    assert abs(p.sigma[0] - 0.094118) < 1e-6
    np.testing.assert_allclose(p.mu, 0.5)


def test_saturation():
    raw = np.zeros(15)
    raw[9:12] = 10
    raw[:9] = -10
    p = constrain(raw, CFG)
    np.testing.assert_allclose(p.sigma, 32 / 255)
    assert not p.mu.any()


@given(arrays(np.float64, (15,), elements=st.floats(-1e6, 1e6)))
def test_constrain_invariants(raw):
    p = constrain(raw, CFG)
    assert abs(p.pi.sum() - 1) <= 1e-5 and (p.pi >= 0).all()
    assert (p.sigma >= 16 / 255 - 1e-12).all() and (p.sigma <= 32 / 255 + 1e-12).all()
    assert (p.mu >= 0).all() and (p.mu <= 1).all()


# density / loss ------------------------------------------------------------

def single(pi, sigma, mu):
    return MixtureParams(np.array(pi, float), np.array(sigma, float), np.array(mu, float))


def test_pdf_examples():
    p = single([1.0], [1 / (2 * np.pi)], [[0.3]])
    assert gmm_pdf(np.array([0.3]), p) == pytest.approx(1.0)
    q = single([1.0], [0.05], [[0.1, 0.2, 0.3]])
    assert gmm_pdf(np.array([0.1, 0.2, 0.3]), q) == pytest.approx((2 * np.pi * 0.05) ** -1.5)
    two = single([0.5, 0.5], [0.05, 0.05], [[0.1, 0.2, 0.3]] * 2)
    x = np.array([0.4, 0.1, 0.9])
    assert gmm_pdf(x, two) == pytest.approx(gmm_pdf(x, q))


def test_nll_zero_example():
    p = single([1.0], [1 / (2 * np.pi)], [[0.3]])
    assert abs(nll_loss(p, np.full((10, 1), 0.3))) < 1e-12


def test_nll_matches_scipy_reference():
    raw = rand_head(20, 1)
    hist = rand_hist(20, 96, 2)
    p = constrain(raw, CFG)
    ours = nll_loss(p, hist)
    ref = np.array([-ref_mixture_logpdf(hist[i], p[i]).sum() for i in range(20)])
    np.testing.assert_allclose(ours, ref, rtol=1e-10)
    # single precision evaluation stays within 1e-4 relative of the 64-bit value
    ours32 = nll_loss(p.astype(np.float32), hist.astype(np.float32))
    np.testing.assert_allclose(ours32, ref, rtol=1e-4)


def test_density_floor():
    p = single([1.0], [16 / 255], [[0.0, 0.0, 0.0]])
    far = np.ones((4, 3)) * 50
    assert nll_loss(p, far) == pytest.approx(4 * -np.log(1e-12))


@given(st.integers(0, 10_000))
def test_nll_permutation_invariant(seed):
    p = constrain(rand_head(1, seed)[0], CFG)
    h = rand_hist(1, 96, seed + 1)[0]
    perm = SplitMix64(seed).permutation(96)
    assert nll_loss(p, h[perm]) == pytest.approx(nll_loss(p, h), rel=1e-12)


def test_responsibility_examples():
    two = single([0.5, 0.5], [0.1, 0.1], [[0.2, 0.2, 0.2]] * 2)
    np.testing.assert_allclose(responsibilities(two, np.array([0.9, 0.1, 0.5])), [0.5, 0.5])
    one = single([1.0], [0.1], [[0.2, 0.2, 0.2]])
    np.testing.assert_allclose(responsibilities(one, np.array([0.9, 0.1, 0.5])), [1.0])
    apart = single([0.5, 0.5], [0.07, 0.07], [[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]])
    r = responsibilities(apart, np.array([0.12, 0.1, 0.08]))
    # explicit density ratio of the two components
    d1 = multivariate_normal([0.1] * 3, 0.07 * np.eye(3)).pdf([0.12, 0.1, 0.08])
    d2 = multivariate_normal([0.9] * 3, 0.07 * np.eye(3)).pdf([0.12, 0.1, 0.08])
    assert r[0] == pytest.approx(d1 / (d1 + d2)) and r[0] > 0.9999


# head gradients --------------------------------------------------------------

@pytest.mark.parametrize("impl", [head_gradients_numpy, head_gradients_loops])
def test_head_gradients_match_finite_differences(impl):
    raw = rand_head(6, 3, scale=2.2)
    hist = rand_hist(6, 32, 4)
    loss, grad = impl(raw, hist, CFG)
    for i in range(6):
        def f(r):
            return nll_loss(constrain(r, CFG), hist[i])
        fd = finite_diff_grad(f, raw[i], h=1e-6)
        assert loss[i] == pytest.approx(f(raw[i]), rel=1e-12)
        np.testing.assert_allclose(grad[i], fd, rtol=1e-4, atol=1e-6)


def test_backends_agree():
    raw = rand_head(50, 5).astype(np.float32)
    hist = rand_hist(50, 96, 6).astype(np.float32)
    la, ga = head_gradients_numpy(raw, hist, CFG)
    lb, gb = head_gradients_loops(raw, hist, CFG)
    np.testing.assert_allclose(la, lb, rtol=1e-4)
    np.testing.assert_allclose(ga, gb, rtol=1e-3, atol=1e-4)


def test_mixing_gradient_is_pi_minus_responsibility():
    raw = rand_head(200, 7)
    x = rand_hist(200, 1, 8)
    _, grad = head_gradients_numpy(raw, x, CFG)
    p = constrain(raw, CFG)
    expect = p.pi - np.stack([responsibilities(p[i], x[i, 0]) for i in range(200)])
    np.testing.assert_allclose(grad[:, 12:15], expect, atol=1e-12)


def test_saturated_sigma_has_zero_gradient():
    raw = rand_head(1, 9)
    raw[0, 9] = 10.0
    _, grad = head_gradients_numpy(raw, rand_hist(1, 96, 10), CFG)
    assert grad[0, 9] == 0.0


def test_pi_equal_to_responsibility_gives_zero_mixing_gradient():
    # identical components: every responsibility equals pi
    raw = np.zeros((1, 15))
    raw[0, 12:15] = [0.3, -0.1, 0.5]
    _, grad = head_gradients_numpy(raw, rand_hist(1, 20, 11), CFG)
    np.testing.assert_allclose(grad[0, 12:15], 0, atol=1e-12)


def test_network_gradcheck_through_head():
    cfg = CdnGmConfig(T=16)
    net = build_cdn_gm(cfg, seed=2)
    x = rand_hist(3, 16, 12)

    def lg(out):
        loss, g = head_gradients_numpy(out, x, cfg)
        return float(loss.sum()), g

    res = check_network(net, x, lg, n_coords=100)
    assert res.ok, res


# background selection ----------------------------------------------------------

def test_select_background_examples():
    mu = np.array([[0.1, 0.2, 0.3], [0.5, 0.5, 0.5], [0.9, 0.9, 0.9]])
    bg, k = select_background(single([0.7, 0.2, 0.1], [0.07, 0.10, 0.12], mu))
    assert k == 0 and np.array_equal(bg, mu[0])
    assert select_background(single([1.0], [0.1], mu[:1]))[1] == 0
    assert select_background(single([0.5, 0.5], [0.1, 0.1], mu[:2]))[1] == 0


@given(st.floats(0.01, 100))
def test_select_background_scale_invariant(scale):
    p = constrain(rand_head(30, 13), CFG)
    _, k1 = select_background(p)
    _, k2 = select_background(MixtureParams(p.pi * scale, p.sigma, p.mu))
    assert np.array_equal(k1, k2)


# training ----------------------------------------------------------------------

def test_canonical_order_is_permutation_invariant():
    h = rand_hist(4, 96, 14)
    perm = SplitMix64(1).permutation(96)
    assert np.array_equal(canonical_order(h), canonical_order(h[:, perm]))


def test_zero_epochs_leaves_weights():
    net = build_cdn_gm()
    out, _ = train_cdn_gm(net, rand_hist(8, 96, 15), CFG, epochs=0)
    for g in net.weights:
        for k in net.weights[g]:
            assert np.array_equal(out.weights[g][k], net.weights[g][k])


def test_training_is_deterministic_and_reduces_loss():
    cfg = CdnGmConfig(epochs=30, batch_size=16)
    hist = rand_hist(32, 96, 16)
    a, la = train_cdn_gm(build_cdn_gm(cfg), hist, cfg)
    b, lb = train_cdn_gm(build_cdn_gm(cfg), hist, cfg)
    assert la.epoch_losses == lb.epoch_losses
    assert la.epoch_losses[-1] < la.epoch_losses[0]


def test_non_finite_input_aborts_with_checkpoint():
    hist = rand_hist(4, 96, 17)
    hist[0, 0, 0] = np.nan
    with pytest.raises(TrainingError) as ei:
        train_cdn_gm(build_cdn_gm(), hist, CFG, epochs=2)
    net, tlog = ei.value.result
    assert tlog.aborted and all(np.isfinite(t).all() for g in net.weights.values() for t in g.values())


@pytest.mark.parametrize("v", [0.2, 0.55, 0.85])
def test_constant_histories_recover_value(v):
    # one Adam step per epoch; 1000 steps left some seeds in a two-component split
    cfg = CdnGmConfig(epochs=2000, batch_size=64, seed=1)
    hist = np.clip(np.full((64, 96, 3), v) + SplitMix64(3).normal(64 * 96 * 3, 0.002).reshape(64, 96, 3), 0, 1)
    net, _ = train_cdn_gm(build_cdn_gm(cfg), hist, cfg)
    bg, _ = select_background(predict_params(net, hist[:8], cfg))
    assert np.abs(bg - v).max() <= 4 / 255

