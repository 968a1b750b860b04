"""Train the desk model and write its rate-distortion curve, entropy table and features.

    python scripts/run_desk_experiment.py --out runs/desk [--steps 2000] [--no-mem]
"""
import argparse
import json
import logging
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from fgscodec import analysis
from fgscodec.config import ModelConfig, TrainConfig
from fgscodec.data import eval_images
from fgscodec.train import moving_average, train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--no-mem", action="store_true")
    p.add_argument("--eval-images", type=int, default=10)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    cfg = TrainConfig(steps=args.steps, seed=args.seed, out_dir=str(out / "train"),
                      model=ModelConfig(use_mem=not args.no_mem))
    res = train(cfg)
    m = res.model.eval()
    ma = moving_average(res.totals(), 100)

    images = [(f"eval{i}", x) for i, x in enumerate(eval_images(args.eval_images))]
    report = analysis.rd_sweep(m, images, m.cfg.group_size, metadata={"steps": args.steps, "seed": args.seed})
    report.write(out / "rd", plot=True)
    entropy = analysis.analyze_entropy(m, images, groups=4)
    analysis.write_entropy_table(entropy, out / "entropy")
    analysis.write_features(analysis.dump_features(m, images[0][1]), out / "features", images=True)

    curve = report.curve()
    bits = np.array(entropy["channel_bits"])
    summary = {
        "train_seconds": res.seconds,
        "loss_ma100_step100": float(ma[min(99, len(ma) - 1)]),
        "loss_ma100_end": float(ma[-1]),
        "psnr_basic": curve[0]["psnr"],
        "psnr_full": curve[-1]["psnr"],
        "bpp_full": curve[-1]["bpp"],
        "min_psnr_step": float(np.diff([c["psnr"] for c in curve]).min()),
        "spearman_index_bits": float(spearmanr(np.arange(len(bits)), bits).statistic),
        "mean_y_s_bits": float(entropy["total_scalable_bits"]),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
