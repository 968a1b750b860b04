"""Train every ablation case at a reduced budget and tabulate rate and quality.

    python scripts/run_ablation.py --out runs/ablation --steps 500
"""
import argparse
import csv
import logging
from pathlib import Path

import torch

from fgscodec import analysis
from fgscodec.config import ABLATION_CASES, TrainConfig, ablation_config
from fgscodec.data import eval_images
from fgscodec.entropy import rate
from fgscodec.train import train

FIELDS = ("case", "use_frr", "use_ffm", "use_mem", "bpp_full", "psnr_basic", "psnr_full", "y_s_bits")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--cases", type=int, nargs="*", default=sorted(ABLATION_CASES))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    images = [(f"eval{i}", x) for i, x in enumerate(eval_images(10))]
    rows = []
    for case in args.cases:
        mcfg = ablation_config(case)
        cfg = TrainConfig(steps=args.steps, seed=args.seed, out_dir=str(out / f"case{case}"), model=mcfg)
        m = train(cfg).model.eval()
        curve = analysis.rd_sweep(m, images, m.cfg.C2).curve()
        with torch.no_grad():
            bits = sum(float(rate(m.forward_latents(x, "round").lik_y_s)) for _, x in images) / len(images)
        rows.append(dict(case=case, use_frr=mcfg.use_frr, use_ffm=mcfg.use_ffm, use_mem=mcfg.use_mem,
                         bpp_full=round(curve[-1]["bpp"], 4), psnr_basic=round(curve[0]["psnr"], 3),
                         psnr_full=round(curve[-1]["psnr"], 3), y_s_bits=round(bits, 1)))
        print(rows[-1])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=FIELDS)
        wr.writeheader()
        wr.writerows(rows)


if __name__ == "__main__":
    main()
