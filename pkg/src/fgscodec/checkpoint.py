"""Checkpoint archive: a zip holding ``manifest.json`` plus one ``.npy`` per parameter.

Parameter names follow the module's dotted state-dict path,
``<module>.<stage>.<kind>`` (e.g. ``g_b.0.weight``, ``g_d.1.gamma``,
``prior_s.matrices.2``).  Arrays are stored little-endian with their shape.
The content hash covers the model config and every array; its first 8 bytes
are embedded in each bitstream produced with the model.
"""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .config import ModelConfig
from .model import ScalableCodec

FORMAT = "fgs-checkpoint"
FORMAT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _arrays(model: ScalableCodec) -> dict[str, np.ndarray]:
    out = {}
    for name, t in model.state_dict().items():
        a = t.detach().cpu().numpy()
        out[name] = np.ascontiguousarray(a.astype(a.dtype.newbyteorder("<")))
    return out


def _hash(config: dict[str, Any], arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(config, sort_keys=True).encode())
    for name in sorted(arrays):
        a = arrays[name]
        h.update(f"{name}|{a.dtype.str}|{a.shape}".encode())
        h.update(a.tobytes())
    return h.hexdigest()


def model_hash(model: ScalableCodec) -> bytes:
    """8-byte content hash of config plus parameters."""
    return bytes.fromhex(_hash(model.cfg.to_dict(), _arrays(model))[:16])


def save_checkpoint(model: ScalableCodec, path: str | Path, extra: dict[str, Any] | None = None) -> str:
    arrays = _arrays(model)
    config = model.cfg.to_dict()
    digest = _hash(config, arrays)
    manifest = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "config": config,
        "hash": digest,
        "params": [{"name": n, "shape": list(a.shape), "dtype": a.dtype.str} for n, a in sorted(arrays.items())],
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("manifest.json", _ZIP_DATE), json.dumps(manifest, indent=1, sort_keys=True))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, arrays[name], allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"params/{name}.npy", _ZIP_DATE), buf.getvalue())
    return digest


def read_manifest(path: str | Path) -> dict[str, Any]:
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: not a checkpoint archive ({e})") from None
    if manifest.get("format") != FORMAT or manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    return manifest


def load_checkpoint(path: str | Path) -> ScalableCodec:
    manifest = read_manifest(path)
    cfg = ModelConfig.from_dict(manifest["config"])
    model = ScalableCodec(cfg)
    arrays = {}
    with zipfile.ZipFile(path) as zf:
        for entry in manifest["params"]:
            a = np.load(io.BytesIO(zf.read(f"params/{entry['name']}.npy")), allow_pickle=False)
            if list(a.shape) != entry["shape"]:
                raise CheckpointError(f"{entry['name']}: shape {a.shape} does not match manifest")
            arrays[entry["name"]] = a
    if _hash(manifest["config"], arrays) != manifest["hash"]:
        raise CheckpointError(f"{path}: content hash mismatch")
    state = {n: torch.from_numpy(a.astype(a.dtype.newbyteorder("="))) for n, a in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    model.content_hash = bytes.fromhex(manifest["hash"])[:8]
    return model
