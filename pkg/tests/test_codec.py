import pytest
import torch

from fgscodec.coder import (
    BitstreamContainer,
    CorruptStreamError,
    HashMismatchError,
    decode_image,
    encode_image,
    estimated_bits,
    truncate,
)
from fgscodec.transforms import ShapeError

from conftest import tiny_model


@pytest.fixture(scope="module")
def model():
    return tiny_model(seed=5)


@pytest.fixture(scope="module")
def x():
    return torch.rand(1, 3, 32, 48, generator=torch.Generator().manual_seed(11))


@pytest.fixture(scope="module")
def encoded(model, x):
    return encode_image(x, model)


def test_full_decode_matches_in_model_path(model, x, encoded):
    x_hat, stats = decode_image(encoded, model)
    s = model.forward_latents(x, "round")
    assert torch.equal(stats.y_b_hat, s.y_b_hat)
    assert torch.equal(stats.y_s_hat, s.y_s_hat)
    assert float((x_hat - model.reconstruct(x)).abs().max()) <= 1e-6


@pytest.mark.parametrize("n", [0, 1, 3])
def test_prefix_decode_matches_channel_select(model, x, encoded, n):
    t = truncate(encoded, channels=n)
    x_hat, stats = decode_image(t, model)
    s = model.forward_latents(x, "round")
    assert torch.equal(stats.y_s_hat[:, :n], s.y_s_hat[:, :n])
    assert torch.count_nonzero(stats.y_s_hat[:, n:]) == 0
    assert float((x_hat - model.reconstruct(x, n)).abs().max()) <= 1e-6
    assert stats.n_present == n


def test_basic_only_equals_basic_path(model, x, encoded):
    x_hat, stats = decode_image(truncate(encoded, channels=0), model)
    s = model.forward_latents(x, "round")
    assert float((x_hat - s.x_hat_b).abs().max()) <= 1e-6
    assert stats.layer_bytes["scalable"] == 0


def test_encode_is_deterministic(model, x, encoded):
    assert encode_image(x, model).to_bytes() == encoded.to_bytes()


def test_rate_accounting(model, x, encoded):
    _, stats = decode_image(encoded, model)
    assert stats.bpp == pytest.approx(8 * encoded.payload_size / (32 * 48))
    assert stats.header_bytes == encoded.header_size
    assert sum(stats.layer_bytes.values()) == stats.payload_bytes
    assert encoded.n_present == model.cfg.C2


def test_coded_bits_bound_estimate(model, x, encoded):
    s = model.forward_latents(x, "round")
    est = estimated_bits(s)
    assert list(est) == encoded.segment_names()
    for name, seg in zip(encoded.segment_names(), encoded.segments()):
        assert 8 * len(seg) <= 1.05 * est[name] + 64, name


def test_hash_mismatch(model, x, encoded):
    other = tiny_model(seed=6)
    with pytest.raises(HashMismatchError):
        decode_image(encoded, other)
    with pytest.raises(HashMismatchError):
        decode_image(encoded, model, model_hash=b"\x00" * 8)


def test_corrupt_segment(model, encoded):
    bad = BitstreamContainer(encoded.model_hash, encoded.height, encoded.width, encoded.c1, encoded.c2,
                             encoded.z_b, encoded.y_b[:-2], encoded.z_s, encoded.y_s)
    with pytest.raises(CorruptStreamError):
        decode_image(bad, model)


def test_shape_errors(model):
    with pytest.raises(ShapeError):
        encode_image(torch.rand(1, 3, 20, 32), model)
    with pytest.raises(ShapeError):
        encode_image(torch.rand(2, 3, 16, 16), model)
    wrong = tiny_model(C2=5)
    c = encode_image(torch.rand(1, 3, 16, 16), wrong)
    with pytest.raises(ShapeError):
        decode_image(c, model, check_hash=False)


def test_out_of_support_latents_escape(model, x):
    s = model.forward_latents(x, "round")
    # scalable parameters never read y_s, so editing it keeps the state consistent
    s.y_s_hat = s.y_s_hat.clone()
    s.y_s_hat[0, -1, 0, 0] = 500.0
    s.y_s_hat[0, 0, 1, 1] = -70000.0
    c = encode_image(x, model, state=s)
    _, stats = decode_image(c, model)
    assert torch.equal(stats.y_s_hat, s.y_s_hat)
