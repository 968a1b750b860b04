import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from fgscodec.objective import (
    MS_SSIM_WEIGHTS,
    MSE_SCALE,
    NonFiniteLoss,
    basic_loss,
    composite_loss,
    distortion,
    ms_ssim,
    ms_ssim_scales,
    psnr,
    sample_j,
    scalable_loss_full,
    scalable_loss_sampled,
    w,
)

from conftest import tiny_model


def test_w_spot_values():
    assert [w(i, 8) for i in (0, 7, 8, 15, 16, 192)] == [0, 0, 1, 1, 2, 24]
    assert w(0, 8, "clamped") == 1 and w(7, 8, "clamped") == 1 and w(192, 8, "clamped") == 24
    with pytest.raises(ValueError):
        w(-1, 8)
    with pytest.raises(ValueError):
        w(3, 0)


@given(st.integers(0, 400), st.integers(1, 32))
def test_w_is_floor_division(i, d):
    assert w(i, d) == math.floor(i / d)
    assert w(i, d, "clamped") == max(1, math.floor(i / d))


def test_sample_j_uniform():
    rng = np.random.default_rng(0)
    draws = np.array([sample_j(rng, 4) for _ in range(20000)])
    counts = np.bincount(draws, minlength=5)
    assert draws.min() == 0 and draws.max() == 4
    assert np.all(np.abs(counts / len(draws) - 0.2) < 0.015)


def test_psnr():
    a = torch.zeros(1, 3, 4, 4)
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 0.1) == pytest.approx(20.0)


# -- MS-SSIM scalar oracle --------------------------------------------------

def _gauss(size=11, sigma=1.5):
    c = np.arange(size) - size // 2
    g = np.exp(-c ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    k = len(g)
    h, w_ = img.shape
    out = np.zeros((h - k + 1, w_ - k + 1))
    win = np.outer(g, g)
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] = np.sum(img[i:i + k, j:j + k] * win)
    return out


def ms_ssim_ref(a, b):
    """Per-channel loop implementation, averaged over channels."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    g = _gauss()
    n = ms_ssim_scales(*a.shape[-2:])
    wts = np.array(MS_SSIM_WEIGHTS[:n])
    wts = wts / wts.sum()
    vals = []
    for ch in range(a.shape[0]):
        x, y = a[ch], b[ch]
        prod = 1.0
        for level in range(n):
            mx, my = _filter_valid(x, g), _filter_valid(y, g)
            sxx = _filter_valid(x * x, g) - mx ** 2
            syy = _filter_valid(y * y, g) - my ** 2
            sxy = _filter_valid(x * y, g) - mx * my
            cs = (2 * sxy + c2) / (sxx + syy + c2)
            if level < n - 1:
                prod *= max(cs.mean(), 1e-8) ** wts[level]
                x = x.reshape(x.shape[0] // 2, 2, x.shape[1] // 2, 2).mean(axis=(1, 3))
                y = y.reshape(y.shape[0] // 2, 2, y.shape[1] // 2, 2).mean(axis=(1, 3))
            else:
                lum = (2 * mx * my + c1) / (mx ** 2 + my ** 2 + c1)
                prod *= max((lum * cs).mean(), 1e-8) ** wts[level]
        vals.append(prod)
    return float(np.mean(vals))


@pytest.mark.parametrize("size", [16, 32, 48])
def test_ms_ssim_matches_scalar_oracle(size):
    rng = np.random.default_rng(size)
    a = rng.uniform(0, 1, (3, size, size))
    b = np.clip(a + rng.normal(0, 0.08, a.shape), 0, 1)
    got = float(ms_ssim(torch.from_numpy(a)[None], torch.from_numpy(b)[None]))
    assert got == pytest.approx(ms_ssim_ref(a, b), rel=1e-10)


def test_ms_ssim_identity_and_range():
    x = torch.rand(2, 3, 32, 32, dtype=torch.float64)
    assert float(ms_ssim(x, x)) == pytest.approx(1.0, abs=1e-12)
    y = torch.rand(2, 3, 32, 32, dtype=torch.float64)
    v = float(ms_ssim(x, y))
    assert 0 < v < 1


def test_ms_ssim_scales():
    assert [ms_ssim_scales(s, s) for s in (11, 16, 22, 48, 64, 160, 256)] == [1, 1, 2, 3, 3, 4, 5]
    with pytest.raises(ValueError):
        ms_ssim_scales(8, 64)


def test_distortion_scales():
    a = torch.zeros(1, 3, 16, 16)
    b = a + 0.1
    assert float(distortion(a, b, "mse")) == pytest.approx(MSE_SCALE * 0.01)
    assert float(distortion(a, a, "ms-ssim")) == pytest.approx(0.0, abs=1e-6)


# -- losses -----------------------------------------------------------------

def _double_model(**kw):
    return tiny_model(**kw).double()


def test_sampled_mean_equals_full_over_c2(image):
    m = _double_model(include_basic_distortion=False)
    x = image.double()
    state = m.forward_latents(x, "noise", torch.Generator().manual_seed(1))
    c2 = m.cfg.C2
    sampled = [float(scalable_loss_sampled(x, m, j, state).total) for j in range(1, c2 + 1)]
    full = float(scalable_loss_full(x, m, m.cfg.C1 + c2, state))
    assert np.mean(sampled) == pytest.approx(full / c2, rel=1e-10)


def test_sampled_loss_components(image):
    m = _double_model()
    x = image.double()
    state = m.forward_latents(x, "noise", torch.Generator().manual_seed(2))
    lb = scalable_loss_sampled(x, m, 3, state)
    lam = m.cfg.lam
    assert lb.w_j == 3 and lb.j == 3
    expect = lb.rate_b + lb.rate_s + lam * (lb.dist_b + 3 * lb.dist_s)
    assert float(lb.total) == pytest.approx(float(expect), rel=1e-12)
    without = scalable_loss_sampled(x, m, 3, state, include_basic_distortion=False)
    assert float(without.total) == pytest.approx(float(lb.total - lam * lb.dist_b), rel=1e-12)
    with pytest.raises(ValueError):
        scalable_loss_sampled(x, m, 0, state)


def test_basic_loss(image):
    m = _double_model()
    x = image.double()
    state = m.forward_latents(x, "noise", torch.Generator().manual_seed(3))
    lb = basic_loss(x, m, state)
    assert float(lb.rate_s) == 0 and lb.j == 0
    assert float(lb.total) == pytest.approx(float(lb.rate_b + m.cfg.lam * lb.dist_b), rel=1e-12)


def test_rates_are_bits_per_pixel(image):
    m = _double_model()
    x = image.double()
    state = m.forward_latents(x, "noise", torch.Generator().manual_seed(4))
    bits = -torch.log2(state.lik_y_b).sum() - torch.log2(state.lik_z_b).sum()
    lb = basic_loss(x, m, state)
    assert float(lb.rate_b) == pytest.approx(float(bits) / (32 * 48), rel=1e-12)


def test_full_loss_guards(image):
    m = _double_model()
    with pytest.raises(ValueError):
        scalable_loss_full(image.double(), m, 3)
    big = tiny_model(C2=17)
    with pytest.raises(ValueError):
        scalable_loss_full(image, big, 21)


def test_single_rate_always_uses_every_channel(image):
    m = tiny_model(single_rate=True)
    rng = np.random.default_rng(0)
    js = {composite_loss(image, m, rng, torch.Generator().manual_seed(0)).j for _ in range(5)}
    assert js == {m.cfg.C2}


def test_composite_visits_basic_branch(image):
    m = tiny_model()
    rng = np.random.default_rng(5)
    js = [composite_loss(image, m, rng, torch.Generator().manual_seed(i)).j for i in range(30)]
    assert 0 in js and max(js) <= m.cfg.C2


def test_non_finite_loss_raises(image):
    m = tiny_model()
    with torch.no_grad():
        m.g_d[-1].bias.fill_(float("nan"))
    with pytest.raises(NonFiniteLoss) as e:
        basic_loss(image, m)
    assert e.value.component == "dist_b"
    assert math.isnan(e.value.breakdown.as_floats()["dist_b"])
