"""Command-line entry point: ``fgs <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import analysis
from .checkpoint import CheckpointError, load_checkpoint
from .coder import BitstreamContainer, BudgetError, FormatError, HashMismatchError, decode_image, encode_image
from .coder import CorruptStreamError, truncate
from .config import ConfigError, load_train_config
from .data import DatasetError, center_crop16, eval_images, list_images, load_image, save_image
from .objective import NonFiniteLoss, ms_ssim, psnr
from .transforms import ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
BITSTREAM_SUFFIX = ".fgs"

log = logging.getLogger("fgscodec")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                   help="use deterministic torch kernels")
    p.add_argument("--json", metavar="PATH", default=None, help="also write a JSON summary here ('-' for stdout)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _image_source(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--images", metavar="DIR", help="folder of evaluation images")
    g.add_argument("--synthetic", type=int, metavar="N", default=None,
                   help="use N held-out synthetic images (default 10 when --images is absent)")
    p.add_argument("--size", type=int, default=96, help="synthetic image side (multiple of 16)")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = _Parser(prog="fgs", description="Fine-grained scalable learned image codec.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (model.* for model fields); repeatable")
    p.add_argument("--out", help="output directory (overrides out_dir)")

    p = sub.add_parser("encode", parents=[common], help="encode an image with every scalable channel")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input")
    p.add_argument("--out", required=True, help=f"output bitstream ({BITSTREAM_SUFFIX})")

    p = sub.add_parser("decode", parents=[common], help="decode a bitstream (any prefix) to PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input")
    p.add_argument("--out", required=True, help="output image")
    p.add_argument("--reference", help="original image, for PSNR / MS-SSIM in the summary")

    p = sub.add_parser("truncate", parents=[common], help="drop trailing scalable channels")
    p.add_argument("input")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--channels", type=int)
    g.add_argument("--max-bytes", type=int)
    g.add_argument("--bpp", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect", parents=[common], help="print header and segment table")
    p.add_argument("input")

    p = sub.add_parser("eval", parents=[common], help="rate-distortion sweep over truncation levels")
    p.add_argument("--checkpoint", required=True)
    _image_source(p)
    p.add_argument("--interval", type=int, default=8, help="channel step between truncation levels")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plot", action="store_true", help="also write rd.png")

    p = sub.add_parser("analyze-entropy", parents=[common], help="bits and PSNR per scalable-channel group")
    p.add_argument("--checkpoint", required=True)
    _image_source(p)
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("dump-features", parents=[common], help="per-channel energy of fused decoder features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input", nargs="?", help="image (default: first held-out synthetic image)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plot", action="store_true")
    return ap


def _emit_json(target: str | None, payload: dict) -> None:
    if target is None:
        return
    text = json.dumps(payload, indent=2, sort_keys=True, default=str)
    if target == "-":
        print(text)
    else:
        Path(target).write_text(text + "\n")


def _read_input_image(path: str) -> torch.Tensor:
    p = Path(path)
    if not p.is_file():
        raise DatasetError(f"{p}: no such file")
    try:
        x = load_image(p)
    except OSError as e:
        raise DatasetError(f"{p}: cannot read image ({e})") from None
    return center_crop16(x, str(p))


def _eval_set(args) -> list[tuple[str, torch.Tensor]]:
    if args.images:
        paths = list_images(args.images)
        if not paths:
            raise DatasetError(f"no images in {args.images}")
        return [(p.name, _read_input_image(str(p))) for p in paths]
    if args.size % 16:
        raise UsageError("--size must be a multiple of 16")
    n = args.synthetic if args.synthetic is not None else 10
    seed = args.seed if args.seed is not None else 0
    return [(f"synthetic_{i:03d}", x) for i, x in enumerate(eval_images(n, args.size, seed))]


def _read_container(path: str) -> BitstreamContainer:
    p = Path(path)
    if not p.is_file():
        raise DatasetError(f"{p}: no such file")
    return BitstreamContainer.from_bytes(p.read_bytes())


def cmd_train(args) -> dict:
    from .train import train

    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out:
        overrides.append(f"out_dir={args.out}")
    overrides.append(f"deterministic={args.deterministic}")
    cfg = load_train_config(args.config, overrides)
    res = train(cfg)
    totals = res.totals()
    summary = {"out_dir": cfg.out_dir, "final_checkpoint": str(res.final_checkpoint), "steps": cfg.steps,
               "final_loss": float(totals[-1]) if len(totals) else None, "seconds": res.seconds}
    print(f"trained {cfg.steps} steps in {res.seconds:.1f}s -> {res.final_checkpoint}")
    return summary


def cmd_encode(args) -> dict:
    model = load_checkpoint(args.checkpoint)
    x = _read_input_image(args.input)
    c = encode_image(x, model)
    out = Path(args.out)
    if out.suffix != BITSTREAM_SUFFIX:
        log.warning("output %s does not use the %s extension", out, BITSTREAM_SUFFIX)
    out.write_bytes(c.to_bytes())
    print(f"{args.input}: {x.shape[3]}x{x.shape[2]}, {len(c)} bytes, {c.bpp():.4f} bpp, "
          f"{c.n_present} scalable channels -> {out}")
    return c.describe()


def cmd_decode(args) -> dict:
    model = load_checkpoint(args.checkpoint)
    c = _read_container(args.input)
    x_hat, stats = decode_image(c, model)
    save_image(x_hat, args.out)
    summary = stats.as_dict()
    line = f"decoded {c.width}x{c.height} with {c.n_present}/{c.c2} scalable channels, {stats.bpp:.4f} bpp"
    if args.reference:
        x = _read_input_image(args.reference)
        if x.shape != x_hat.shape:
            raise ShapeError(f"reference is {tuple(x.shape[-2:])}, decoded image is {tuple(x_hat.shape[-2:])}")
        summary["psnr"] = psnr(x, x_hat)
        summary["ms_ssim"] = float(ms_ssim(x, x_hat)) if min(x.shape[-2:]) >= 11 else None
        line += f", PSNR {summary['psnr']:.2f} dB"
    print(line + f" -> {args.out}")
    return summary


def cmd_truncate(args) -> dict:
    c = _read_container(args.input)
    t = truncate(c, channels=args.channels, max_bytes=args.max_bytes, bpp=args.bpp)
    Path(args.out).write_bytes(t.to_bytes())
    print(f"kept {t.n_present}/{c.n_present} scalable channels: {len(c)} -> {len(t)} bytes "
          f"({t.bpp():.4f} bpp) -> {args.out}")
    return t.describe()


def cmd_inspect(args) -> dict:
    c = _read_container(args.input)
    d = c.describe()
    print(f"{args.input}: {d['magic']} v{d['version']}  model {d['model_hash']}")
    print(f"  image {d['width']}x{d['height']}  C1={d['C1']} C2={d['C2']}  "
          f"scalable channels present {d['n_present']}  flags 0x{d['flags']:02x}")
    print(f"  header {d['header_bytes']} B  payload {d['payload_bytes']} B  total {d['total_bytes']} B  "
          f"{d['bpp']:.4f} bpp")
    print(f"  {'segment':<10} {'bytes':>8}")
    for s in d["segments"]:
        print(f"  {s['name']:<10} {s['bytes']:>8}")
    return d


def cmd_eval(args) -> dict:
    model = load_checkpoint(args.checkpoint)
    images = _eval_set(args)
    meta = {"checkpoint": str(args.checkpoint), "model_hash": model.content_hash.hex(),
            "seed": args.seed if args.seed is not None else 0,
            "images": args.images or f"synthetic:{len(images)}x{args.size}"}
    report = analysis.rd_sweep(model, images, args.interval, metadata=meta)
    paths = report.write(args.out, plot=args.plot)
    print(f"{'n':>4} {'bpp':>9} {'PSNR':>8} {'MS-SSIM':>8}")
    for r in report.curve():
        print(f"{r['n_channels']:>4} {r['bpp']:>9.4f} {r['psnr']:>8.3f} {r['ms_ssim']:>8.4f}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return {"metadata": report.metadata, "curve": report.curve()}


def cmd_analyze_entropy(args) -> dict:
    model = load_checkpoint(args.checkpoint)
    try:
        result = analysis.analyze_entropy(model, _eval_set(args), args.groups)
    except ValueError as e:
        if "must divide" in str(e):
            raise UsageError(str(e)) from None
        raise
    analysis.write_entropy_table(result, args.out)
    print(f"{'group':>5} {'channels':>10} {'bits':>10} {'PSNR':>8}")
    for r in result["groups"]:
        print(f"{r['group']:>5} {r['first_channel']:>4}-{r['last_channel']:<5} {r['bits']:>10.1f} {r['psnr']:>8.3f}")
    return result


def cmd_dump_features(args) -> dict:
    model = load_checkpoint(args.checkpoint)
    x = _read_input_image(args.input) if args.input else eval_images(1, seed=args.seed or 0)[0]
    result = analysis.dump_features(model, x)
    paths = analysis.write_features(result, args.out, images=args.plot)
    active = sum(r["difference"] > 0 for r in result["rows"])
    print(f"{active}/{len(result['rows'])} fused channels change when scalable latents are added; "
          f"wrote {', '.join(str(p) for p in paths.values())}")
    return {"rows": result["rows"]}


COMMANDS = {
    "train": cmd_train, "encode": cmd_encode, "decode": cmd_decode, "truncate": cmd_truncate,
    "inspect": cmd_inspect, "eval": cmd_eval, "analyze-entropy": cmd_analyze_entropy,
    "dump-features": cmd_dump_features,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(asctime)s %(message)s")
    torch.use_deterministic_algorithms(args.deterministic)
    if args.seed is not None:
        torch.manual_seed(args.seed)
    try:
        payload = COMMANDS[args.command](args)
        _emit_json(args.json, payload)
        return EXIT_OK
    except (UsageError, ConfigError) as e:
        print(f"fgs {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLoss, FloatingPointError) as e:
        print(f"fgs {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, FormatError, CorruptStreamError, CheckpointError, HashMismatchError, ShapeError,
            BudgetError, OSError) as e:
        print(f"fgs {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
