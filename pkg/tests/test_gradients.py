"""Central finite-difference checks of every differentiable op, in double precision."""
import contextlib

import numpy as np
import pytest
import torch

from fgscodec.entropy import LIKELIHOOD_MIN, SIGMA_MIN, EntropyParams, FactorizedPrior, MutualEntropyModel, likelihood
from fgscodec.layers import GDN, ChannelSpatialGate
from fgscodec.objective import basic_loss, ms_ssim, scalable_loss_sampled
from fgscodec.transforms import AnalysisTransform, ResidualFusion, SynthesisTransform

from conftest import tiny_model

REL_TOL = 1e-4
EPS = 1e-5  # loss scales reach 1e4, so smaller steps drown in cancellation error


def fd_relative_error(f, inputs, n_dirs=8, seed=0):
    """Worst norm-wise relative error between autograd and central differences.

    Small inputs are checked element by element; larger ones along random
    unit directions.
    """
    inputs = [t.detach().double().requires_grad_(True) for t in inputs]
    grads = torch.autograd.grad(f(*inputs), inputs)
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    with torch.no_grad():
        for k, (x, g) in enumerate(zip(inputs, grads)):
            if x.numel() <= 64:
                dirs = [torch.zeros_like(x).view(-1).index_fill_(0, torch.tensor([i]), 1.0).view_as(x)
                        for i in range(x.numel())]
            else:
                dirs = [torch.randn(x.shape, generator=gen, dtype=x.dtype) for _ in range(n_dirs)]
                dirs = [d / d.norm() for d in dirs]
            num, ana = [], []
            for d in dirs:
                plus = [t + EPS * d if i == k else t for i, t in enumerate(inputs)]
                minus = [t - EPS * d if i == k else t for i, t in enumerate(inputs)]
                num.append(float(f(*plus) - f(*minus)) / (2 * EPS))
                ana.append(float((g * d).sum()))
            num, ana = np.array(num), np.array(ana)
            worst = max(worst, np.linalg.norm(num - ana) / max(np.linalg.norm(num), 1e-12))
    return worst


@contextlib.contextmanager
def swapped(module, name, value):
    """Temporarily replace a parameter with a plain tensor that carries its own graph."""
    *path, leaf = name.split(".")
    owner = module.get_submodule(".".join(path))
    saved = owner._parameters[leaf]
    owner._parameters[leaf] = value
    try:
        yield
    finally:
        owner._parameters[leaf] = saved


def _weighted_sum(out, seed=1):
    w = torch.randn(out.shape, generator=torch.Generator().manual_seed(seed), dtype=out.dtype)
    return (out * w).sum()


def _module_check(module, *shapes, seed=0):
    torch.manual_seed(seed)
    module = module.double()
    xs = [torch.randn(s, dtype=torch.float64) for s in shapes]

    def f(*a):
        return _weighted_sum(module(*a))

    err = fd_relative_error(f, xs)
    names = [n for n, _ in module.named_parameters()][:2]

    def fp(*params):
        with contextlib.ExitStack() as stack:
            for n, q in zip(names, params):
                stack.enter_context(swapped(module, n, q))
            return _weighted_sum(module(*xs))

    if not names:
        return err
    return max(err, fd_relative_error(fp, [module.get_parameter(n).detach() for n in names]))


def test_gdn():
    assert _module_check(GDN(3), (1, 3, 4, 4)) <= REL_TOL
    assert _module_check(GDN(3, inverse=True), (1, 3, 4, 4)) <= REL_TOL


def test_analysis_transform():
    assert _module_check(AnalysisTransform(3, 4, 3), (1, 3, 16, 16)) <= REL_TOL


def test_synthesis_transform():
    assert _module_check(SynthesisTransform(3, 4), (1, 3, 1, 2)) <= REL_TOL


def test_gate():
    assert _module_check(ChannelSpatialGate(3, 2), (1, 2, 3, 3), (1, 3, 3, 3)) <= REL_TOL


def test_residual_fusion():
    assert _module_check(ResidualFusion(3), (1, 3, 4, 4), (1, 3, 4, 4)) <= REL_TOL


def test_gaussian_likelihood_wrt_all_inputs():
    g = torch.Generator().manual_seed(2)
    y = torch.randint(-3, 4, (12,), generator=g).double() + 0.3 * torch.rand(12, generator=g, dtype=torch.float64)
    mu = torch.randn(12, generator=g, dtype=torch.float64)
    sigma = 0.5 + torch.rand(12, generator=g, dtype=torch.float64)

    def f(y, mu, sigma):
        return -torch.log2(likelihood(y, EntropyParams(mu, sigma))).sum()

    with torch.no_grad():
        assert float(likelihood(y, EntropyParams(mu, sigma)).min()) > LIKELIHOOD_MIN
    assert fd_relative_error(f, [y, mu, sigma]) <= REL_TOL


def test_factorized_prior():
    torch.manual_seed(3)
    prior = FactorizedPrior(2).double()
    with torch.no_grad():
        for p in prior.parameters():
            p.add_(0.2 * torch.randn_like(p))
    z = torch.randn(1, 2, 2, 3, dtype=torch.float64) * 2

    def f(z):
        return -torch.log2(prior.likelihood(z)).sum()

    assert fd_relative_error(f, [z]) <= REL_TOL


def test_mutual_entropy_model():
    torch.manual_seed(4)
    mem = MutualEntropyModel(3, 2, 4).double()
    with torch.no_grad():
        mem.head[-1].bias[2:].fill_(1.0)  # keep sigma away from its floor

    def f(h, y_b):
        p = mem(h, y_b)
        assert float(p.sigma.min()) > SIGMA_MIN
        return _weighted_sum(p.mu) + _weighted_sum(p.sigma, 2)

    assert fd_relative_error(f, [torch.randn(1, 4, 3, 3), torch.randn(1, 3, 3, 3)]) <= REL_TOL


def test_ms_ssim():
    g = torch.Generator().manual_seed(5)
    a = torch.rand(1, 3, 24, 24, generator=g, dtype=torch.float64)
    b = (a + 0.1 * torch.rand(1, 3, 24, 24, generator=g, dtype=torch.float64)).clamp(0, 1)
    assert fd_relative_error(lambda a, b: ms_ssim(a, b), [a, b]) <= REL_TOL


def _loss_model():
    m = tiny_model(seed=12).double().train()
    with torch.no_grad():
        m.h_s_b.net[-1].bias[4:].fill_(1.0)
        m.mem.head[-1].bias[4:].fill_(1.0)
    return m


@pytest.mark.parametrize("which", ["basic", "scalable"])
def test_losses_wrt_input_and_weights(which):
    m = _loss_model()
    x = torch.rand(1, 3, 32, 32, generator=torch.Generator().manual_seed(6), dtype=torch.float64)

    def loss(x):
        state = m.forward_latents(x, "noise", torch.Generator().manual_seed(7))
        if which == "basic":
            return basic_loss(x, m, state).total
        return scalable_loss_sampled(x, m, 3, state).total

    with torch.no_grad():
        s = m.forward_latents(x, "noise", torch.Generator().manual_seed(7))
        for lik in (s.lik_y_b, s.lik_z_b, s.lik_y_s, s.lik_z_s):
            assert float(lik.min()) > LIKELIHOOD_MIN
        assert float(s.params_b.sigma.min()) > SIGMA_MIN and float(s.params_s.sigma.min()) > SIGMA_MIN
    assert fd_relative_error(loss, [x]) <= REL_TOL

    name = "g_s.0.weight" if which == "scalable" else "g_b.0.weight"

    def loss_w(wv):
        with swapped(m, name, wv):
            return loss(x)

    assert fd_relative_error(loss_w, [m.get_parameter(name).detach()]) <= REL_TOL
