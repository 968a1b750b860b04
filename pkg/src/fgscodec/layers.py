import torch
import torch.nn as nn
import torch.nn.functional as F


class _LowerBoundFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, bound):
        ctx.save_for_backward(x, bound)
        return torch.max(x, bound)

    @staticmethod
    def backward(ctx, grad_output):
        x, bound = ctx.saved_tensors
        # let the gradient through when it pushes x back above the bound
        pass_through = (x >= bound) | (grad_output < 0)
        return pass_through.type(grad_output.dtype) * grad_output, None


def lower_bound(x: torch.Tensor, bound: float) -> torch.Tensor:
    """``max(x, bound)`` whose gradient does not die below the bound."""
    return _LowerBoundFn.apply(x, torch.tensor(bound, dtype=x.dtype, device=x.device))


class GDN(nn.Module):
    """Generalized divisive normalization.

    ``y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)``, or the inverse
    (multiplicative) form used in synthesis transforms.  ``beta`` and ``gamma``
    are stored as square roots so they stay nonnegative without clipping.
    """

    def __init__(self, channels: int, inverse: bool = False, beta_min: float = 1e-6, gamma_init: float = 0.1):
        super().__init__()
        self.inverse = inverse
        self.beta_min = beta_min
        self.beta = nn.Parameter(torch.full((channels,), (1.0 - beta_min) ** 0.5))
        self.gamma = nn.Parameter((gamma_init ** 0.5) * torch.eye(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c = x.shape[1]
        beta = self.beta ** 2 + self.beta_min
        gamma = (self.gamma ** 2).view(c, c, 1, 1)
        norm = torch.sqrt(F.conv2d(x * x, gamma, beta))
        return x * norm if self.inverse else x / norm


def conv(cin: int, cout: int, kernel: int = 5, stride: int = 2, bias: bool = True) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=bias)


def deconv(cin: int, cout: int, kernel: int = 5, stride: int = 2) -> nn.ConvTranspose2d:
    return nn.ConvTranspose2d(cin, cout, kernel, stride=stride, padding=kernel // 2, output_padding=stride - 1)


class ChannelSpatialGate(nn.Module):
    """Channel gate from a pooled guide, spatial gate from its channel mean.

    ``out = x * sigmoid(mlp(avgpool(guide))) * sigmoid(st(mean_c(guide)))``.
    The spatial head widens the single mean map to ``squeeze_width`` channels
    and squeezes it back to one.
    """

    def __init__(self, guide_channels: int, out_channels: int, squeeze_width: int = 8):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(guide_channels, out_channels),
            nn.ReLU(),
            nn.Linear(out_channels, out_channels),
        )
        self.st = nn.Sequential(
            nn.Conv2d(1, squeeze_width, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(squeeze_width, 1, 3, padding=1),
        )

    def gates(self, guide: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        a_c = torch.sigmoid(self.mlp(guide.mean(dim=(2, 3))))[:, :, None, None]
        a_s = torch.sigmoid(self.st(guide.mean(dim=1, keepdim=True)))
        return a_c, a_s

    @staticmethod
    def apply_gates(x: torch.Tensor, a_c: torch.Tensor, a_s: torch.Tensor) -> torch.Tensor:
        return x * a_c * a_s

    def forward(self, x: torch.Tensor, guide: torch.Tensor) -> torch.Tensor:
        a_c, a_s = self.gates(guide)
        return self.apply_gates(x, a_c, a_s)
