"""Training loop: sampled-prefix rate-distortion optimization with Adam."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import TrainConfig, dump_train_config
from .data import ImageSet
from .model import ScalableCodec
from .objective import NonFiniteLoss, composite_loss

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "lr", "j", "w_j", "rate_b", "rate_s", "dist_b", "dist_s", "total")


@dataclass
class TrainResult:
    model: ScalableCodec
    history: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    final_checkpoint: Path | None = None
    seconds: float = 0.0

    def totals(self) -> np.ndarray:
        return np.array([h["total"] for h in self.history])


def moving_average(values: np.ndarray, window: int = 100) -> np.ndarray:
    """Trailing mean; entry ``i`` averages ``values[max(0, i-window+1) : i+1]``."""
    c = np.cumsum(np.insert(np.asarray(values, dtype=np.float64), 0, 0.0))
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def set_deterministic(flag: bool) -> None:
    torch.use_deterministic_algorithms(flag)


def load_dataset(cfg: TrainConfig) -> ImageSet:
    if cfg.dataset_dir:
        return ImageSet.from_dir(cfg.dataset_dir, min_size=cfg.crop)
    return ImageSet.synthetic(cfg.n_synthetic, cfg.synthetic_size, cfg.seed)


def train(cfg: TrainConfig, dataset: ImageSet | None = None, out_dir: str | Path | None = None,
          save: bool = True) -> TrainResult:
    set_deterministic(cfg.deterministic)
    out = Path(out_dir or cfg.out_dir)
    if save:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(dump_train_config(cfg))
    dataset = dataset or load_dataset(cfg)

    # independent streams for init, crops, j sampling and quantization noise
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    torch.manual_seed(int(seeds[0].generate_state(1)[0]))
    model = ScalableCodec(cfg.model)
    model.train()
    crop_rng = np.random.default_rng(seeds[1])
    j_rng = np.random.default_rng(seeds[2])
    noise_gen = torch.Generator().manual_seed(int(seeds[3].generate_state(1)[0]))

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    result = TrainResult(model)
    t0 = time.time()
    for step in range(1, cfg.steps + 1):
        lr = cfg.lr if step <= cfg.drop_step else cfg.lr_drop
        for g in opt.param_groups:
            g["lr"] = lr
        x = dataset.crops(crop_rng, cfg.batch, cfg.crop)
        try:
            loss = composite_loss(x, model, j_rng, noise_gen)
        except NonFiniteLoss as e:
            if save:
                snap = {"step": step, "component": e.component, "breakdown": e.breakdown.as_floats()}
                (out / "nonfinite.json").write_text(json.dumps(snap, indent=2))
                save_checkpoint(model, out / "nonfinite.ckpt", extra=snap)
            raise
        opt.zero_grad(set_to_none=True)
        loss.total.backward()
        if cfg.clip_grad > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_grad)
        opt.step()

        rec = {"step": step, "lr": lr, **{k: v for k, v in loss.as_floats().items()}}
        result.history.append({k: rec[k] for k in LOG_FIELDS})
        if step % cfg.log_every == 0 or step == 1:
            ma = float(np.mean([h["total"] for h in result.history[-cfg.log_every:]]))
            log.info("step %d  loss %.4f  (avg %.4f)  j=%d  %.1fs", step, rec["total"], ma, rec["j"],
                     time.time() - t0)
        if save and step % cfg.checkpoint_every == 0 and step != cfg.steps:
            p = out / f"step{step:06d}.ckpt"
            save_checkpoint(model, p, extra={"step": step})
            result.checkpoints.append(p)

    model.eval()
    result.seconds = time.time() - t0
    if save:
        p = out / "final.ckpt"
        save_checkpoint(model, p, extra={"step": cfg.steps, "seed": cfg.seed})
        result.checkpoints.append(p)
        result.final_checkpoint = p
        write_history(result.history, out / "metrics.csv")
    return result


def write_history(history: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=LOG_FIELDS)
        wr.writeheader()
        for h in history:
            wr.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in h.items()})
