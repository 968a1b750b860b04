"""One-pass image encoding into a truncatable container, and prefix decoding."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..checkpoint import model_hash as compute_model_hash
from ..entropy import EntropyParams, rate
from ..model import ForwardState, ScalableCodec
from ..transforms import ShapeError, check_image
from .cdf import CdfTable, gaussian_table, mean_shift, sigma_bin, table_from_pmf, SUPPORT
from .container import BitstreamContainer
from .rangecoder import range_decode, range_encode


class HashMismatchError(ValueError):
    pass


def prior_tables(prior) -> list[CdfTable]:
    """One table per hyper-latent channel from a factorized prior."""
    return [table_from_pmf(p) for p in prior.pmf_table(SUPPORT)]


def gaussian_tables(params: EntropyParams) -> tuple[list[CdfTable], np.ndarray]:
    mu = params.mu.detach().cpu().double().numpy().ravel()
    sigma = params.sigma.detach().cpu().double().numpy().ravel()
    shift, off = mean_shift(mu)
    bins = sigma_bin(sigma)
    tables = [gaussian_table(int(b), int(o)) for b, o in zip(bins, off)]
    return tables, shift


def _ints(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().double().numpy().ravel().astype(np.int64)


def _encode_hyper(z_hat: torch.Tensor, tables: list[CdfTable]) -> bytes:
    # channel-major order so each value uses its channel's table
    c = z_hat.shape[1]
    per = z_hat[0].reshape(c, -1)
    syms = _ints(per)
    tabs = [tables[i] for i in range(c) for _ in range(per.shape[1])]
    return range_encode(syms.tolist(), tabs)


def _decode_hyper(data: bytes, tables: list[CdfTable], shape: tuple[int, int, int]) -> torch.Tensor:
    c, h, w = shape
    tabs = [tables[i] for i in range(c) for _ in range(h * w)]
    vals = range_decode(data, tabs)
    return torch.tensor(vals, dtype=torch.float32).reshape(1, c, h, w)


def _encode_gaussian(y_hat: torch.Tensor, params: EntropyParams) -> bytes:
    tables, shift = gaussian_tables(params)
    return range_encode((_ints(y_hat) - shift).tolist(), tables)


def _decode_gaussian(data: bytes, params: EntropyParams) -> torch.Tensor:
    tables, shift = gaussian_tables(params)
    vals = np.asarray(range_decode(data, tables), dtype=np.int64) + shift
    return torch.from_numpy(vals.astype(np.float32)).reshape(params.mu.shape)


def _model_hash(model: ScalableCodec) -> bytes:
    h = getattr(model, "content_hash", None)
    return h if h is not None else compute_model_hash(model)


def hyper_shape(latent_hw: tuple[int, int]) -> tuple[int, int]:
    """Hyper-latent grid: two more stride-2 stages, rounding up."""
    return tuple((((n + 1) // 2) + 1) // 2 for n in latent_hw)


@torch.no_grad()
def encode_image(x: torch.Tensor, model: ScalableCodec, model_hash: bytes | None = None,
                 state: ForwardState | None = None) -> BitstreamContainer:
    """Encode one image with every scalable channel in its own segment."""
    check_image(x)
    if x.shape[0] != 1:
        raise ShapeError("encode_image takes a single image")
    model.eval()
    if state is None:
        state = model.forward_latents(x, mode="round")
    mhash = model_hash if model_hash is not None else _model_hash(model)
    cfg = model.cfg
    z_b = _encode_hyper(state.z_b_hat, prior_tables(model.prior_b))
    y_b = _encode_gaussian(state.y_b_hat, state.params_b)
    z_s, y_s = None, []
    if cfg.C2 > 0:
        z_s = _encode_hyper(state.z_s_hat, prior_tables(model.prior_s))
        for i in range(cfg.C2):
            p = EntropyParams(state.params_s.mu[:, i:i + 1], state.params_s.sigma[:, i:i + 1])
            y_s.append(_encode_gaussian(state.y_s_hat[:, i:i + 1], p))
    return BitstreamContainer(mhash, x.shape[2], x.shape[3], cfg.C1, cfg.C2, z_b, y_b, z_s, y_s)


@dataclass
class DecodeStats:
    n_present: int
    header_bytes: int
    payload_bytes: int
    layer_bytes: dict[str, int]
    layer_bpp: dict[str, float]
    bpp: float
    y_b_hat: torch.Tensor | None = field(default=None, repr=False)
    y_s_hat: torch.Tensor | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "n_present": self.n_present,
            "header_bytes": self.header_bytes,
            "payload_bytes": self.payload_bytes,
            "layer_bytes": self.layer_bytes,
            "layer_bpp": self.layer_bpp,
            "bpp": self.bpp,
        }


@torch.no_grad()
def decode_image(c: BitstreamContainer, model: ScalableCodec, model_hash: bytes | None = None,
                 check_hash: bool = True) -> tuple[torch.Tensor, DecodeStats]:
    """Decode the basic layer, then whatever scalable prefix the container holds."""
    model.eval()
    cfg = model.cfg
    if check_hash:
        mhash = model_hash if model_hash is not None else _model_hash(model)
        if mhash != c.model_hash:
            raise HashMismatchError(f"bitstream made with model {c.model_hash.hex()}, decoder has {mhash.hex()}")
    if (c.c1, c.c2) != (cfg.C1, cfg.C2):
        raise ShapeError(f"container has C1={c.c1}, C2={c.c2}; model has C1={cfg.C1}, C2={cfg.C2}")
    if c.height % 16 or c.width % 16:
        raise ShapeError("container image size is not a multiple of 16")
    lat = (c.height // 16, c.width // 16)
    hz = hyper_shape(lat)
    hc = cfg.hyper_channels

    z_b_hat = _decode_hyper(c.z_b, prior_tables(model.prior_b), (hc, *hz))
    params_b = model.hyper_decode_b(z_b_hat, lat)
    y_b_hat = _decode_gaussian(c.y_b, params_b)

    y_s_hat = torch.zeros(1, cfg.C2, *lat)
    if c.z_s is not None:
        z_s_hat = _decode_hyper(c.z_s, prior_tables(model.prior_s), (hc, *hz))
        params_s = model.mem_params(z_s_hat, y_b_hat)
        for i, seg in enumerate(c.y_s):
            p = EntropyParams(params_s.mu[:, i:i + 1], params_s.sigma[:, i:i + 1])
            y_s_hat[:, i:i + 1] = _decode_gaussian(seg, p)
    x_hat = model.decode(torch.cat([y_b_hat, y_s_hat], dim=1), clamp=True)

    pixels = c.height * c.width
    layer_bytes = {"basic": c.basic_payload_size,
                   "scalable": c.payload_size - c.basic_payload_size}
    stats = DecodeStats(
        n_present=c.n_present,
        header_bytes=c.header_size,
        payload_bytes=c.payload_size,
        layer_bytes=layer_bytes,
        layer_bpp={k: 8.0 * v / pixels for k, v in layer_bytes.items()},
        bpp=c.bpp(),
        y_b_hat=y_b_hat,
        y_s_hat=y_s_hat,
    )
    return x_hat, stats


@torch.no_grad()
def estimated_bits(state: ForwardState, n: int | None = None) -> dict[str, float]:
    """Model-estimated bits of a round-mode state, split like the container."""
    out = {"z_b": float(rate(state.lik_z_b)), "y_b": float(rate(state.lik_y_b))}
    if state.lik_y_s is not None:
        n = state.lik_y_s.shape[1] if n is None else n
        if n > 0:
            out["z_s"] = float(rate(state.lik_z_s))
            for i in range(n):
                out[f"y_s[{i}]"] = float(rate(state.lik_y_s[:, i]))
    return out
