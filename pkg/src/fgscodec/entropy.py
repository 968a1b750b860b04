"""Probability models for the quantized latents.

* mean-scale hyperprior for the basic latent,
* the mutual entropy model for the scalable latent, conditioned on the
  decoded basic latent,
* non-parametric factorized priors for both hyper-latents.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import conv, deconv, lower_bound

SIGMA_MIN = 0.11
LIKELIHOOD_MIN = 2.0 ** -24


class OrderingError(RuntimeError):
    """Scalable-latent parameters were requested before the basic latent was decoded."""


@dataclass
class EntropyParams:
    mu: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self) -> None:
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu/sigma shape mismatch {tuple(self.mu.shape)} vs {tuple(self.sigma.shape)}")

    @classmethod
    def from_raw(cls, raw: torch.Tensor) -> "EntropyParams":
        mu, s = raw.chunk(2, dim=1)
        return cls(mu, lower_bound(s, SIGMA_MIN))


def quantize(
    y: torch.Tensor,
    mode: str,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """``noise``: add U(-1/2, 1/2) (training surrogate); ``round``: ties to even."""
    if mode == "round":
        return torch.round(y)
    if mode != "noise":
        raise ValueError(f"unknown quantization mode {mode!r}")
    if noise is None:
        noise = torch.rand(y.shape, generator=generator, dtype=y.dtype, device=y.device) - 0.5
        # rand is [0, 1); keep the support open at -1/2
        noise = torch.where(noise == -0.5, torch.zeros_like(noise), noise)
    return y + noise


def _std_normal_cdf(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * torch.erfc(-x * (2 ** -0.5))


def likelihood(y_hat: torch.Tensor, params: EntropyParams) -> torch.Tensor:
    """Gaussian convolved with a unit box, evaluated at ``y_hat``."""
    v = torch.abs(y_hat - params.mu)
    upper = _std_normal_cdf((0.5 - v) / params.sigma)
    lower = _std_normal_cdf((-0.5 - v) / params.sigma)
    return lower_bound(upper - lower, LIKELIHOOD_MIN)


def rate(likelihoods: torch.Tensor | list[torch.Tensor]) -> torch.Tensor:
    """Total information content in bits."""
    if isinstance(likelihoods, (list, tuple)):
        return sum(rate(p) for p in likelihoods)
    return -torch.log2(likelihoods).sum()


class FactorizedPrior(nn.Module):
    """Per-channel learned CDF for hyper-latents.

    Each channel's cumulative is ``sigmoid(f(v))`` where ``f`` is a chain of
    softplus-weighted affine maps with tanh residual bends, so ``f`` is
    monotone.  Biases start at zero, which makes ``f`` odd and the fresh
    prior symmetric about zero.
    """

    def __init__(self, channels: int, filters: tuple[int, ...] = (3, 3, 3), init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        dims = (1, *filters, 1)
        scale = init_scale ** (1.0 / (len(filters) + 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for i in range(len(filters) + 1):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            self.matrices.append(nn.Parameter(torch.full((channels, dims[i + 1], dims[i]), init)))
            self.biases.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))
            if i < len(filters):
                self.factors.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))

    def logits_cumulative(self, v: torch.Tensor) -> torch.Tensor:
        # v: (channels, 1, n)
        x = v
        dt = v.dtype
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            x = torch.matmul(F.softplus(m.to(dt)), x) + b.to(dt)
            if i < len(self.factors):
                x = x + torch.tanh(self.factors[i].to(dt)) * torch.tanh(x)
        return x

    def _per_channel(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {z.shape[1]}")
        return z.transpose(0, 1).reshape(self.channels, 1, -1)

    def _restore(self, flat: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        b, c, h, w = like.shape
        return flat.reshape(c, b, h, w).transpose(0, 1)

    def cdf(self, z: torch.Tensor) -> torch.Tensor:
        return self._restore(torch.sigmoid(self.logits_cumulative(self._per_channel(z))), z)

    def likelihood(self, z_hat: torch.Tensor) -> torch.Tensor:
        v = self._per_channel(z_hat)
        lower = self.logits_cumulative(v - 0.5)
        upper = self.logits_cumulative(v + 0.5)
        # evaluate in the tail where the sigmoid is accurate; never a zero sign,
        # which would collapse the likelihood when lower == -upper
        sign = torch.where(lower + upper > 0, -1.0, 1.0).to(lower.dtype).detach()
        p = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        return lower_bound(self._restore(p, z_hat), LIKELIHOOD_MIN)

    @torch.no_grad()
    def pmf_table(self, support: int) -> np.ndarray:
        """Float64 pmf over ``[-support, support]`` plus tail mass, per channel."""
        v = torch.arange(-support, support + 1, dtype=torch.float64)
        v = v.expand(self.channels, 1, -1).contiguous()
        lower = torch.sigmoid(self.logits_cumulative(v - 0.5))[:, 0, :]
        upper = torch.sigmoid(self.logits_cumulative(v + 0.5))[:, 0, :]
        tail = lower[:, :1] + (1.0 - upper[:, -1:])
        return torch.cat([upper - lower, tail], dim=1).clamp_min(0.0).numpy()


class HyperAnalysis(nn.Module):
    def __init__(self, cin: int, hc: int, n: int):
        super().__init__()
        self.net = nn.Sequential(
            conv(cin, n, 3, 1), nn.ReLU(),
            conv(n, n, 5, 2), nn.ReLU(),
            conv(n, hc, 5, 2),
        )

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.net(y)


class HyperSynthesis(nn.Module):
    """Upsamples hyper-latents back to the latent grid, cropping any overhang."""

    def __init__(self, hc: int, cout: int, n: int):
        super().__init__()
        self.net = nn.Sequential(
            deconv(hc, n, 5, 2), nn.ReLU(),
            deconv(n, n, 5, 2), nn.ReLU(),
            conv(n, cout, 3, 1),
        )

    def forward(self, z_hat: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
        out = self.net(z_hat)
        return out[:, :, : size[0], : size[1]]


class MutualEntropyModel(nn.Module):
    """Gaussian parameters for the scalable latent.

    Fuses hyper-decoded side information with context features extracted from
    the decoded basic latent.  It never sees the scalable latent itself, so
    any channel prefix can be decoded with the same parameters.
    """

    def __init__(self, c1: int, c2: int, n: int, use_mem: bool = True):
        super().__init__()
        self.use_mem = use_mem
        if use_mem:
            self.context = nn.Sequential(
                conv(c1, n, 3, 1), nn.ReLU(),
                conv(n, n, 3, 1),
            )
        width = 2 * n if use_mem else n
        self.head = nn.Sequential(
            nn.Conv2d(width, n, 1), nn.ReLU(),
            nn.Conv2d(n, n, 1), nn.ReLU(),
            nn.Conv2d(n, 2 * c2, 1),
        )

    def forward(self, hyper_features: torch.Tensor, y_b_hat: torch.Tensor | None) -> EntropyParams:
        if y_b_hat is None:
            raise OrderingError("the basic latent must be decoded before scalable-latent parameters")
        if self.use_mem:
            feats = torch.cat([hyper_features, self.context(y_b_hat)], dim=1)
        else:
            feats = hyper_features
        return EntropyParams.from_raw(self.head(feats))
