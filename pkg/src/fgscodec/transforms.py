"""Analysis/synthesis networks and latent plumbing for the feature-separation backbone."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DOWNSAMPLE_FACTOR
from .layers import GDN, conv, deconv


class ShapeError(ValueError):
    pass


def check_image(x: torch.Tensor) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected a batch x 3 x H x W image, got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
        raise ShapeError(f"image size {h}x{w} is not divisible by {DOWNSAMPLE_FACTOR}")


class AnalysisTransform(nn.Sequential):
    """Four stride-2 5x5 convolutions with GDN between them."""

    def __init__(self, cin: int, n: int, cout: int):
        super().__init__(
            conv(cin, n), GDN(n),
            conv(n, n), GDN(n),
            conv(n, n), GDN(n),
            conv(n, cout),
        )


class SynthesisTransform(nn.Sequential):
    """Mirror of :class:`AnalysisTransform` with transposed convs and inverse GDN."""

    def __init__(self, cin: int, n: int, cout: int = 3):
        super().__init__(
            deconv(cin, n), GDN(n, inverse=True),
            deconv(n, n), GDN(n, inverse=True),
            deconv(n, n), GDN(n, inverse=True),
            deconv(n, cout),
        )


class ResidualFusion(nn.Module):
    """3x3 convolution over ``x || x_hat_b`` with weights tied as ``[K, -K]``.

    The tie makes the layer a learned residual operator; it is evaluated as
    ``conv(x - x_hat_b, K)``, so a perfect basic reconstruction yields exactly 0.
    """

    def __init__(self, channels: int = 3):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(channels, channels, 3, 3))
        nn.init.kaiming_uniform_(self.weight, a=5 ** 0.5)

    def full_weight(self) -> torch.Tensor:
        return torch.cat([self.weight, -self.weight], dim=1)

    def forward(self, x: torch.Tensor, x_hat_b: torch.Tensor) -> torch.Tensor:
        return F.conv2d(x - x_hat_b, self.weight, padding=1)


def channel_select(y_s: torch.Tensor, j: int) -> torch.Tensor:
    """Keep the first ``j`` scalable channels, zero the rest."""
    c2 = y_s.shape[1]
    if not 0 <= j <= c2:
        raise ValueError(f"channel count {j} outside [0, {c2}]")
    if j == c2:
        return y_s
    tail = torch.zeros_like(y_s[:, j:])
    return torch.cat([y_s[:, :j], tail], dim=1)


@dataclass
class LatentPair:
    y_b: torch.Tensor
    y_s: torch.Tensor
    j_available: int = -1

    def __post_init__(self) -> None:
        if self.j_available < 0:
            self.j_available = self.y_s.shape[1]
        if self.y_b.shape[0] != self.y_s.shape[0] or self.y_b.shape[2:] != self.y_s.shape[2:]:
            raise ShapeError("basic and scalable latents disagree in batch or spatial size")

    def select(self, j: int) -> "LatentPair":
        if j > self.j_available:
            raise ValueError(f"only {self.j_available} scalable channels are available")
        return LatentPair(self.y_b, channel_select(self.y_s, j), j)

    def concat(self) -> torch.Tensor:
        return torch.cat([self.y_b, self.y_s], dim=1)
