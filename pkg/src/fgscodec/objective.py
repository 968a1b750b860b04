"""Rate-distortion objectives, the distortion-weight schedule, and quality metrics.

Rates enter the objective in bits per pixel and MSE distortion is measured on
the 0-255 scale, so ``lam`` plays the role it has in the usual learned-codec
loss ``bpp + lam * 255**2 * mse``.  MS-SSIM distortion is ``1 - ms_ssim``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import torch
import torch.nn.functional as F

from .entropy import rate
from .model import ForwardState, ScalableCodec

MSE_SCALE = 255.0 ** 2
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


class NonFiniteLoss(FloatingPointError):
    def __init__(self, component: str, breakdown: "LossBreakdown"):
        super().__init__(f"non-finite loss component {component!r}: {breakdown.as_floats()}")
        self.component = component
        self.breakdown = breakdown


def w(i: int, d: int, mode: str = "floor") -> int:
    """Distortion weight for a prefix of ``i`` scalable channels."""
    if i < 0 or d < 1:
        raise ValueError(f"need i >= 0 and d >= 1, got i={i}, d={d}")
    v = i // d
    return max(1, v) if mode == "clamped" else v


def sample_j(rng: np.random.Generator, c2: int) -> int:
    """Uniform number of decoded scalable channels in ``[0, c2]``."""
    return int(rng.integers(0, c2 + 1))


@dataclass
class LossBreakdown:
    rate_b: torch.Tensor
    rate_s: torch.Tensor
    dist_b: torch.Tensor
    dist_s: torch.Tensor
    j: int
    w_j: int
    total: torch.Tensor

    def check_finite(self) -> "LossBreakdown":
        for name in ("rate_b", "rate_s", "dist_b", "dist_s", "total"):
            if not torch.isfinite(getattr(self, name)).all():
                raise NonFiniteLoss(name, self)
        return self

    def as_floats(self) -> dict[str, float]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = float(v.detach()) if torch.is_tensor(v) else v
        return out


# -- metrics ----------------------------------------------------------------

def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.mean((a - b) ** 2)


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    m = float(mse(a, b))
    if m == 0.0:
        return math.inf
    return -10.0 * math.log10(m)


def _gaussian_window(size: int = 11, sigma: float = 1.5, dtype=torch.float32) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - size // 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    c = x.shape[1]
    kh = win.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    kw = win.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    return F.conv2d(F.conv2d(x, kh, groups=c), kw, groups=c)


def _ssim_terms(a: torch.Tensor, b: torch.Tensor, win: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    mu_a, mu_b = _blur(a, win), _blur(b, win)
    s_aa = _blur(a * a, win) - mu_a ** 2
    s_bb = _blur(b * b, win) - mu_b ** 2
    s_ab = _blur(a * b, win) - mu_a * mu_b
    cs = (2 * s_ab + c2) / (s_aa + s_bb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    return (lum * cs).flatten(2).mean(-1), cs.flatten(2).mean(-1)


def ms_ssim_scales(h: int, w: int, win_size: int = 11) -> int:
    """Number of scales whose coarsest level still fits the window."""
    side = min(h, w)
    n = 1
    while n < len(MS_SSIM_WEIGHTS) and side // 2 ** n >= win_size:
        n += 1
    if side < win_size:
        raise ValueError(f"image side {side} is smaller than the {win_size}px window")
    return n


def ms_ssim(a: torch.Tensor, b: torch.Tensor, data_range: float = 1.0) -> torch.Tensor:
    """Multi-scale SSIM averaged over batch and channels.

    Images too small for five scales (coarsest level under the 11px window)
    use fewer scales with renormalized weights.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    a = a / data_range
    b = b / data_range
    n = ms_ssim_scales(*a.shape[-2:])
    weights = torch.tensor(MS_SSIM_WEIGHTS[:n], dtype=a.dtype)
    weights = weights / weights.sum()
    win = _gaussian_window(dtype=a.dtype)
    vals = []
    for level in range(n):
        ssim_map, cs = _ssim_terms(a, b, win)
        if level < n - 1:
            vals.append(torch.clamp(cs, min=1e-8))
            a = F.avg_pool2d(a, 2)
            b = F.avg_pool2d(b, 2)
        else:
            vals.append(torch.clamp(ssim_map, min=1e-8))
    stacked = torch.stack(vals, dim=0)  # scales x batch x channels
    out = torch.prod(stacked ** weights.view(-1, 1, 1), dim=0)
    return out.mean()


def distortion(x: torch.Tensor, x_hat: torch.Tensor, metric: str) -> torch.Tensor:
    if metric == "mse":
        return MSE_SCALE * mse(x, x_hat)
    return 1.0 - ms_ssim(x, x_hat)


# -- losses -----------------------------------------------------------------

def _bpp(likelihoods: list[torch.Tensor], num_pixels: int) -> torch.Tensor:
    return rate(likelihoods) / num_pixels


def basic_rate(state: ForwardState) -> torch.Tensor:
    return _bpp([state.lik_y_b, state.lik_z_b], state.num_pixels)


def scalable_rate(state: ForwardState, j: int) -> torch.Tensor:
    """Rate of the first ``j`` scalable channels plus their hyper-latent."""
    return _bpp([state.lik_y_s[:, :j], state.lik_z_s], state.num_pixels)


def basic_loss(x: torch.Tensor, model: ScalableCodec, state: ForwardState | None = None,
               generator: torch.Generator | None = None) -> LossBreakdown:
    cfg = model.cfg
    if state is None:
        state = model.forward_latents(x, "noise", generator)
    rate_b = basic_rate(state)
    dist_b = distortion(x, state.x_hat_b, cfg.metric)
    zero = rate_b.new_zeros(())
    total = rate_b + cfg.lam * dist_b
    return LossBreakdown(rate_b, zero, dist_b, zero, 0, 0, total).check_finite()


def scalable_loss_sampled(x: torch.Tensor, model: ScalableCodec, j: int,
                          state: ForwardState | None = None,
                          generator: torch.Generator | None = None,
                          include_basic_distortion: bool | None = None) -> LossBreakdown:
    cfg = model.cfg
    if not 1 <= j <= cfg.C2:
        raise ValueError(f"j must lie in [1, {cfg.C2}], got {j}")
    if include_basic_distortion is None:
        include_basic_distortion = cfg.include_basic_distortion
    if state is None:
        state = model.forward_latents(x, "noise", generator)
    rate_b = basic_rate(state)
    rate_s = scalable_rate(state, j)
    x_hat = model.decode_layers(state.y_b_hat, state.y_s_hat, j, clamp=False)
    dist_s = distortion(x, x_hat, cfg.metric)
    wj = w(j, cfg.group_size, cfg.w_mode)
    if include_basic_distortion:
        dist_b = distortion(x, state.x_hat_b, cfg.metric)
        total = rate_b + rate_s + cfg.lam * (dist_b + wj * dist_s)
    else:
        dist_b = rate_b.new_zeros(())
        total = rate_b + rate_s + cfg.lam * (wj * dist_s)
    return LossBreakdown(rate_b, rate_s, dist_b, dist_s, j, wj, total).check_finite()


FULL_LOSS_MAX_C2 = 16


def scalable_loss_full(x: torch.Tensor, model: ScalableCodec, k: int,
                       state: ForwardState | None = None,
                       generator: torch.Generator | None = None) -> torch.Tensor:
    """Sum over every forward-dependent prefix ``i = 1 .. k - C1``.

    Reference objective for small models; training uses the sampled form.
    """
    cfg = model.cfg
    if cfg.C2 > FULL_LOSS_MAX_C2:
        raise ValueError(f"full scalable loss is limited to C2 <= {FULL_LOSS_MAX_C2}")
    if not cfg.C1 <= k <= cfg.C1 + cfg.C2:
        raise ValueError(f"k must lie in [{cfg.C1}, {cfg.C1 + cfg.C2}]")
    if state is None:
        state = model.forward_latents(x, "noise", generator)
    rate_b = basic_rate(state)
    total = rate_b.new_zeros(())
    for i in range(1, k - cfg.C1 + 1):
        x_hat = model.decode_layers(state.y_b_hat, state.y_s_hat, i, clamp=False)
        total = total + rate_b + scalable_rate(state, i) + cfg.lam * w(i, cfg.group_size, cfg.w_mode) * distortion(
            x, x_hat, cfg.metric)
    return total


def composite_loss(x: torch.Tensor, model: ScalableCodec, rng: np.random.Generator,
                   generator: torch.Generator | None = None) -> LossBreakdown:
    """One training step's objective: basic branch for j = 0, sampled prefix otherwise."""
    cfg = model.cfg
    j = cfg.C2 if cfg.single_rate else sample_j(rng, cfg.C2)
    state = model.forward_latents(x, "noise", generator)
    if j == 0:
        return basic_loss(x, model, state)
    return scalable_loss_sampled(x, model, j, state)
