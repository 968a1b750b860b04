import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from fgscodec.layers import GDN, ChannelSpatialGate, conv, deconv, lower_bound


def conv2d_ref(x, w, b, stride, pad):
    """Direct-loop cross-correlation, batch 1."""
    x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cout, cin, k, _ = w.shape
    ho = (x.shape[1] - k) // stride + 1
    wo = (x.shape[2] - k) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                patch = x[:, i * stride:i * stride + k, j * stride:j * stride + k]
                out[o, i, j] = np.sum(patch * w[o]) + b[o]
    return out


def deconv2d_ref(x, w, b, stride, pad, out_pad):
    """Scatter form of a transposed convolution, batch 1. ``w`` is cin x cout x k x k."""
    cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    full = np.zeros((cout, (h - 1) * stride + k, (wd - 1) * stride + k))
    for c in range(cin):
        for i in range(h):
            for j in range(wd):
                full[:, i * stride:i * stride + k, j * stride:j * stride + k] += x[c, i, j] * w[c]
    ho = (h - 1) * stride - 2 * pad + k + out_pad
    wo = (wd - 1) * stride - 2 * pad + k + out_pad
    full = np.pad(full, ((0, 0), (0, out_pad), (0, out_pad)))
    return full[:, pad:pad + ho, pad:pad + wo] + b[:, None, None]


def test_conv_matches_direct_loop():
    torch.manual_seed(0)
    layer = conv(3, 4).double()
    x = torch.randn(1, 3, 9, 8, dtype=torch.float64)
    ref = conv2d_ref(x[0].numpy(), layer.weight.detach().numpy(), layer.bias.detach().numpy(), 2, 2)
    np.testing.assert_allclose(layer(x)[0].detach().numpy(), ref, atol=1e-12)


def test_deconv_matches_scatter_and_doubles_size():
    torch.manual_seed(1)
    layer = deconv(3, 2).double()
    x = torch.randn(1, 3, 4, 5, dtype=torch.float64)
    out = layer(x)
    assert out.shape[-2:] == (8, 10)
    ref = deconv2d_ref(x[0].numpy(), layer.weight.detach().numpy(), layer.bias.detach().numpy(), 2, 2, 1)
    np.testing.assert_allclose(out[0].detach().numpy(), ref, atol=1e-12)


def test_gdn_matches_formula():
    torch.manual_seed(2)
    g = GDN(3).double()
    with torch.no_grad():
        g.beta.uniform_(0.5, 1.5)
        g.gamma.uniform_(0.0, 0.5)
    x = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    beta = (g.beta ** 2 + g.beta_min).detach().numpy()
    gamma = (g.gamma ** 2).detach().numpy()
    xn = x.numpy()
    norm = np.sqrt(beta[None, :, None, None] + np.einsum("ij,bjhw->bihw", gamma, xn ** 2))
    np.testing.assert_allclose(g(x).detach().numpy(), xn / norm, rtol=1e-12)
    g.inverse = True
    np.testing.assert_allclose(g(x).detach().numpy(), xn * norm, rtol=1e-12)


@given(st.floats(-5, 5), st.floats(-1, 1))
def test_lower_bound_forward(v, bound):
    x = torch.tensor([v], dtype=torch.float64)
    assert float(lower_bound(x, bound)) == max(v, bound)


def test_lower_bound_gradient_passes_when_pushing_up():
    x = torch.tensor([0.01, 0.01, 1.0], dtype=torch.float64, requires_grad=True)
    y = lower_bound(x, 0.11)
    # descent would raise x[0] (negative grad), lower x[1] (positive grad)
    y.backward(torch.tensor([-1.0, 1.0, 1.0], dtype=torch.float64))
    assert x.grad.tolist() == [-1.0, 0.0, 1.0]


def test_gate_matches_scalar_oracle():
    torch.manual_seed(4)
    gate = ChannelSpatialGate(3, 2).double()
    x = torch.randn(1, 2, 4, 5, dtype=torch.float64)
    guide = torch.randn(1, 3, 4, 5, dtype=torch.float64)
    out = gate(x, guide).detach().numpy()[0]

    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    g = guide.numpy()[0]
    p = [t.detach().numpy() for t in gate.parameters()]
    w1, b1, w2, b2, k1, c1, k2, c2 = p
    pooled = g.mean(axis=(1, 2))
    a_c = sig(w2 @ np.maximum(w1 @ pooled + b1, 0) + b2)
    m = g.mean(axis=0)[None]
    hidden = np.maximum(conv2d_ref(m, k1, c1, 1, 1), 0)
    a_s = sig(conv2d_ref(hidden, k2, c2, 1, 1))[0]
    ref = x.numpy()[0] * a_c[:, None, None] * a_s[None]
    np.testing.assert_allclose(out, ref, rtol=1e-10)
    with torch.no_grad():
        a_c_t, a_s_t = gate.gates(guide)
    assert 0 < float(a_c_t.min()) and float(a_c_t.max()) < 1
    assert 0 < float(a_s_t.min()) and float(a_s_t.max()) < 1


@pytest.mark.parametrize("cin,cout", [(4, 4), (4, 6)])
def test_gate_shapes(cin, cout):
    gate = ChannelSpatialGate(cin, cout)
    out = gate(torch.randn(2, cout, 3, 3), torch.randn(2, cin, 3, 3))
    assert out.shape == (2, cout, 3, 3)
