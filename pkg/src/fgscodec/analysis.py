"""Evaluation experiments: RD sweeps over truncation levels, per-group entropy, feature energy."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .coder import decode_image, encode_image, truncate
from .coder.codec import estimated_bits
from .entropy import rate
from .model import ScalableCodec
from .objective import ms_ssim, psnr

RD_SCHEMA = "fgs-rd/1"
ENTROPY_SCHEMA = "fgs-entropy/1"
FEATURE_SCHEMA = "fgs-features/1"
RD_FIELDS = ("image", "n_channels", "bytes", "total_bytes", "bpp", "psnr", "ms_ssim")


def truncation_levels(c2: int, interval: int) -> list[int]:
    if interval < 1:
        raise ValueError("interval must be >= 1")
    levels = list(range(0, c2 + 1, interval))
    if levels[-1] != c2:
        levels.append(c2)
    return levels


@dataclass
class EvalReport:
    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    def levels(self) -> list[int]:
        return sorted({r["n_channels"] for r in self.rows})

    def curve(self) -> list[dict]:
        """Mean bpp/psnr/ms_ssim per truncation level across images."""
        out = []
        for n in self.levels():
            sel = [r for r in self.rows if r["n_channels"] == n]
            out.append({
                "n_channels": n,
                "bpp": float(np.mean([r["bpp"] for r in sel])),
                "psnr": float(np.mean([r["psnr"] for r in sel])),
                "ms_ssim": float(np.mean([r["ms_ssim"] for r in sel])),
            })
        return out

    def check(self) -> None:
        """Rows sorted by channel count per image, bpp nondecreasing."""
        by_image: dict[str, list[dict]] = {}
        for r in self.rows:
            by_image.setdefault(r["image"], []).append(r)
        for name, rows in by_image.items():
            ns = [r["n_channels"] for r in rows]
            if ns != sorted(ns):
                raise AssertionError(f"{name}: rows not sorted by n_channels")
            bpps = [r["bpp"] for r in rows]
            if any(b < a for a, b in zip(bpps, bpps[1:])):
                raise AssertionError(f"{name}: bpp decreases with n_channels")

    def write(self, out_dir: str | Path, plot: bool = False) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / "rd.csv", "json": out / "rd.json"}
        write_rd_csv(self.rows, paths["csv"])
        paths["json"].write_text(json.dumps(
            {"schema": RD_SCHEMA, "metadata": self.metadata, "curve": self.curve(), "rows": self.rows},
            indent=2, sort_keys=True))
        if plot:
            paths["plot"] = plot_rd(paths["csv"], out / "rd.png")
        return paths


def write_rd_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# schema={RD_SCHEMA}\n")
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(RD_FIELDS)
        for r in rows:
            wr.writerow([r["image"], r["n_channels"], r["bytes"], r["total_bytes"],
                         f"{r['bpp']:.6f}", f"{r['psnr']:.4f}", f"{r['ms_ssim']:.6f}"])


def read_rd_csv(path: str | Path) -> list[dict]:
    with open(path) as f:
        first = f.readline().strip()
        if first != f"# schema={RD_SCHEMA}":
            raise ValueError(f"{path}: unexpected schema line {first!r}")
        rows = []
        for r in csv.DictReader(f):
            rows.append({"image": r["image"], "n_channels": int(r["n_channels"]), "bytes": int(r["bytes"]),
                         "total_bytes": int(r["total_bytes"]), "bpp": float(r["bpp"]),
                         "psnr": float(r["psnr"]), "ms_ssim": float(r["ms_ssim"])})
    return rows


def plot_rd(csv_path: Path, png_path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    report = EvalReport(read_rd_csv(csv_path))
    curve = report.curve()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([c["bpp"] for c in curve], [c["psnr"] for c in curve], "o-", ms=3)
    ax.set_xlabel("bpp")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path


def _ms_ssim_or_nan(a: torch.Tensor, b: torch.Tensor) -> float:
    try:
        return float(ms_ssim(a, b))
    except ValueError:
        return float("nan")


@torch.no_grad()
def rd_sweep(model: ScalableCodec, images: list[tuple[str, torch.Tensor]], interval: int = 8,
             metadata: dict | None = None) -> EvalReport:
    """Encode each image once, then decode every ``interval``-channel truncation."""
    model.eval()
    rows = []
    for name, x in images:
        full = encode_image(x, model)
        for n in truncation_levels(model.cfg.C2, interval):
            c = truncate(full, channels=n) if full.n_present else full
            x_hat, stats = decode_image(c, model)
            rows.append({
                "image": name, "n_channels": n, "bytes": c.payload_size, "total_bytes": len(c),
                "bpp": c.bpp(), "psnr": psnr(x, x_hat), "ms_ssim": _ms_ssim_or_nan(x, x_hat),
            })
    report = EvalReport(rows, dict(metadata or {}, interval=interval, n_images=len(images)))
    report.check()
    return report


@torch.no_grad()
def channel_bits(model: ScalableCodec, x: torch.Tensor) -> np.ndarray:
    """Estimated bits of each scalable channel of one image."""
    model.eval()
    s = model.forward_latents(x, mode="round")
    return np.array([float(rate(s.lik_y_s[:, i])) for i in range(model.cfg.C2)])


@torch.no_grad()
def analyze_entropy(model: ScalableCodec, images: list[tuple[str, torch.Tensor]], groups: int) -> dict:
    """Estimated bits of each scalable-channel group and PSNR with groups 1..g decoded."""
    c2 = model.cfg.C2
    if groups < 1 or c2 % groups:
        raise ValueError(f"groups={groups} must divide C2={c2}")
    size = c2 // groups
    model.eval()
    per_channel = []
    psnrs = np.zeros((len(images), groups))
    totals = []
    for k, (_, x) in enumerate(images):
        s = model.forward_latents(x, mode="round")
        bits = np.array([float(rate(s.lik_y_s[:, i])) for i in range(c2)])
        per_channel.append(bits)
        totals.append(float(rate(s.lik_y_s)))
        for g in range(groups):
            x_hat = model.decode_layers(s.y_b_hat, s.y_s_hat, (g + 1) * size, clamp=True)
            psnrs[k, g] = psnr(x, x_hat)
    per_channel = np.array(per_channel)
    group_bits = per_channel.reshape(len(images), groups, size).sum(-1)
    rows = [{
        "group": g + 1,
        "first_channel": g * size,
        "last_channel": (g + 1) * size - 1,
        "bits": float(group_bits[:, g].mean()),
        "psnr": float(psnrs[:, g].mean()),
    } for g in range(groups)]
    return {
        "schema": ENTROPY_SCHEMA,
        "groups": rows,
        "channel_bits": per_channel.mean(0).tolist(),
        "total_scalable_bits": float(np.mean(totals)),
    }


def write_entropy_table(result: dict, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "entropy.csv", "json": out / "entropy.json"}
    with open(paths["csv"], "w", newline="") as f:
        f.write(f"# schema={ENTROPY_SCHEMA}\n")
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["group", "first_channel", "last_channel", "bits", "psnr"])
        for r in result["groups"]:
            wr.writerow([r["group"], r["first_channel"], r["last_channel"], f"{r['bits']:.4f}", f"{r['psnr']:.4f}"])
    paths["json"].write_text(json.dumps(result, indent=2))
    return paths


def channel_energy(features: torch.Tensor) -> np.ndarray:
    """Per-channel ``max - min`` over the spatial grid (batch of one)."""
    f = features[0].flatten(1)
    return (f.max(dim=1).values - f.min(dim=1).values).numpy()


@torch.no_grad()
def dump_features(model: ScalableCodec, x: torch.Tensor) -> dict:
    """Fused decoder-head features for basic-only and full latents, and their difference."""
    model.eval()
    s = model.forward_latents(x, mode="round")
    basic = model.ffm(model.pad_basic(s.y_b_hat))
    if s.y_s_hat is not None:
        fused = model.ffm(torch.cat([s.y_b_hat, s.y_s_hat], dim=1))
    else:
        fused = basic
    diff = fused - basic
    e = {k: channel_energy(v) for k, v in (("basic", basic), ("fused", fused), ("difference", diff))}
    rows = [{"channel": c, "basic": float(e["basic"][c]), "fused": float(e["fused"][c]),
             "difference": float(e["difference"][c])} for c in range(basic.shape[1])]
    return {"rows": rows, "features": {"basic": basic.numpy(), "fused": fused.numpy(), "difference": diff.numpy()}}


def write_features(result: dict, out_dir: str | Path, images: bool = False) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "feature_energy.csv", "npz": out / "features.npz"}
    with open(paths["csv"], "w", newline="") as f:
        f.write(f"# schema={FEATURE_SCHEMA}\n")
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["channel", "basic", "fused", "difference"])
        for r in result["rows"]:
            wr.writerow([r["channel"], repr(r["basic"]), repr(r["fused"]), repr(r["difference"])])
    np.savez(paths["npz"], **result["features"])
    if images:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 3, figsize=(10, 3))
        for ax, key in zip(axes, ("basic", "fused", "difference")):
            ax.bar(range(len(result["rows"])), [r[key] for r in result["rows"]], width=1.0)
            ax.set_title(key)
            ax.set_xlabel("channel")
        axes[0].set_ylabel("max - min")
        fig.tight_layout()
        paths["png"] = out / "feature_energy.png"
        fig.savefig(paths["png"], dpi=120)
        plt.close(fig)
    return paths


def estimate_vs_actual(model: ScalableCodec, x: torch.Tensor) -> tuple[float, int, int]:
    """(estimated bits, coded payload bits, number of segments) for one full encode."""
    s = model.forward_latents(x, mode="round")
    est = sum(estimated_bits(s).values())
    c = encode_image(x, model, state=s)
    return est, 8 * c.payload_size, len(c.segments())
