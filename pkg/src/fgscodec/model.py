"""The scalable codec: backbone transforms plus entropy models."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import ModelConfig
from .entropy import (
    EntropyParams,
    FactorizedPrior,
    HyperAnalysis,
    HyperSynthesis,
    MutualEntropyModel,
    likelihood,
    quantize,
)
from .layers import ChannelSpatialGate
from .transforms import (
    AnalysisTransform,
    ResidualFusion,
    ShapeError,
    SynthesisTransform,
    channel_select,
    check_image,
)


@dataclass
class ForwardState:
    """Everything one analysis pass produces, shared by all loss branches."""

    y_b: torch.Tensor
    y_b_hat: torch.Tensor
    z_b_hat: torch.Tensor
    params_b: EntropyParams
    lik_y_b: torch.Tensor
    lik_z_b: torch.Tensor
    x_hat_b: torch.Tensor
    y_s: torch.Tensor | None = None
    y_s_hat: torch.Tensor | None = None
    z_s_hat: torch.Tensor | None = None
    params_s: EntropyParams | None = None
    lik_y_s: torch.Tensor | None = None
    lik_z_s: torch.Tensor | None = None

    @property
    def num_pixels(self) -> int:
        b, _, h, w = self.x_hat_b.shape
        return b * h * w


class ScalableCodec(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c1, c2, n, hc = cfg.C1, cfg.C2, cfg.N_hidden, cfg.hyper_channels
        self.g_b = AnalysisTransform(3, n, c1)
        self.g_d = SynthesisTransform(c1 + c2, n)
        if cfg.use_ffm:
            self.ffm_gate = ChannelSpatialGate(c1 + c2, c1 + c2)
        self.h_a_b = HyperAnalysis(c1, hc, n)
        self.h_s_b = HyperSynthesis(hc, 2 * c1, n)
        self.prior_b = FactorizedPrior(hc)
        if c2 > 0:
            self.f_conv = ResidualFusion(3)
            self.g_s = AnalysisTransform(3, n, c2)
            if cfg.use_frr:
                self.frr_gate = ChannelSpatialGate(c1, c2)
            self.h_a_s = HyperAnalysis(c2, hc, n)
            self.h_s_s = HyperSynthesis(hc, n, n)
            self.prior_s = FactorizedPrior(hc)
            self.mem = MutualEntropyModel(c1, c2, n, cfg.use_mem)

    # -- transforms -------------------------------------------------------

    def encode_basic(self, x: torch.Tensor) -> torch.Tensor:
        check_image(x)
        return self.g_b(x)

    def encode_scalable(self, x: torch.Tensor, x_hat_b: torch.Tensor) -> torch.Tensor:
        if x.shape != x_hat_b.shape:
            raise ShapeError(f"x {tuple(x.shape)} and x_hat_b {tuple(x_hat_b.shape)} differ")
        check_image(x)
        return self.g_s(self.f_conv(x, x_hat_b))

    def frr(self, y_s_prime: torch.Tensor, y_b: torch.Tensor) -> torch.Tensor:
        if y_s_prime.shape[2:] != y_b.shape[2:] or y_s_prime.shape[0] != y_b.shape[0]:
            raise ShapeError(f"spatial mismatch {tuple(y_s_prime.shape)} vs {tuple(y_b.shape)}")
        if y_s_prime.shape[1] != self.cfg.C2 or y_b.shape[1] != self.cfg.C1:
            raise ShapeError("frr expects C2 scalable and C1 basic channels")
        if not self.cfg.use_frr:
            return y_s_prime
        return self.frr_gate(y_s_prime, y_b)

    def ffm(self, y_d: torch.Tensor) -> torch.Tensor:
        if y_d.shape[1] != self.cfg.C1 + self.cfg.C2:
            raise ShapeError(f"ffm expects {self.cfg.C1 + self.cfg.C2} channels, got {y_d.shape[1]}")
        if not self.cfg.use_ffm:
            return y_d
        return self.ffm_gate(y_d, y_d)

    def decode(self, y: torch.Tensor, clamp: bool | None = None) -> torch.Tensor:
        """Shared decoder for basic-only and full latents (zero-filled to C1+C2)."""
        x_hat = self.g_d(self.ffm(y))
        if clamp is None:
            clamp = not self.training
        return x_hat.clamp(0.0, 1.0) if clamp else x_hat

    def pad_basic(self, y_b: torch.Tensor) -> torch.Tensor:
        b, _, h, w = y_b.shape
        return torch.cat([y_b, y_b.new_zeros(b, self.cfg.C2, h, w)], dim=1)

    def decode_layers(self, y_b_hat: torch.Tensor, y_s_hat: torch.Tensor | None, j: int,
                      clamp: bool | None = None) -> torch.Tensor:
        if y_s_hat is None or j == 0:
            return self.decode(self.pad_basic(y_b_hat), clamp)
        return self.decode(torch.cat([y_b_hat, channel_select(y_s_hat, j)], dim=1), clamp)

    # -- entropy side -----------------------------------------------------

    def hyper_encode_b(self, y_b: torch.Tensor) -> torch.Tensor:
        return self.h_a_b(y_b)

    def hyper_decode_b(self, z_b_hat: torch.Tensor, size: tuple[int, int]) -> EntropyParams:
        return EntropyParams.from_raw(self.h_s_b(z_b_hat, size))

    def hyper_encode_s(self, y_s: torch.Tensor) -> torch.Tensor:
        return self.h_a_s(y_s)

    def mem_params(self, z_s_hat: torch.Tensor, y_b_hat: torch.Tensor | None) -> EntropyParams:
        """Parameters for the scalable latent; reads only ``z_s_hat`` and ``y_b_hat``."""
        if y_b_hat is None:
            return self.mem(None, None)
        size = tuple(y_b_hat.shape[-2:])
        return self.mem(self.h_s_s(z_s_hat, size), y_b_hat)

    # -- full passes ------------------------------------------------------

    def forward_latents(self, x: torch.Tensor, mode: str = "noise",
                        generator: torch.Generator | None = None) -> ForwardState:
        """Run analysis, quantization and entropy models once.

        ``mode="noise"`` is the training surrogate; ``"round"`` is what the
        bitstream carries.
        """
        check_image(x)
        y_b = self.g_b(x)
        size = tuple(y_b.shape[-2:])
        z_b_hat = quantize(self.h_a_b(y_b), mode, generator)
        params_b = self.hyper_decode_b(z_b_hat, size)
        y_b_hat = quantize(y_b, mode, generator)
        clamp = mode == "round"
        x_hat_b = self.decode(self.pad_basic(y_b_hat), clamp=clamp)
        state = ForwardState(
            y_b=y_b, y_b_hat=y_b_hat, z_b_hat=z_b_hat, params_b=params_b,
            lik_y_b=likelihood(y_b_hat, params_b), lik_z_b=self.prior_b.likelihood(z_b_hat),
            x_hat_b=x_hat_b,
        )
        if self.cfg.C2 == 0:
            return state
        y_s = self.frr(self.encode_scalable(x, x_hat_b), y_b)
        z_s_hat = quantize(self.h_a_s(y_s), mode, generator)
        y_s_hat = quantize(y_s, mode, generator)
        params_s = self.mem_params(z_s_hat, y_b_hat)
        state.y_s, state.y_s_hat, state.z_s_hat, state.params_s = y_s, y_s_hat, z_s_hat, params_s
        state.lik_y_s = likelihood(y_s_hat, params_s)
        state.lik_z_s = self.prior_s.likelihood(z_s_hat)
        return state

    @torch.no_grad()
    def reconstruct(self, x: torch.Tensor, j: int | None = None) -> torch.Tensor:
        """In-model inference: round-quantized latents, first ``j`` scalable channels."""
        s = self.forward_latents(x, mode="round")
        j = self.cfg.C2 if j is None else j
        return self.decode_layers(s.y_b_hat, s.y_s_hat, j, clamp=True)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
