"""Training/eval images: a folder of photos or a bundled synthetic-texture set."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".ppm", ".webp"}


class DatasetError(ValueError):
    pass


def _smooth_noise(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    f = gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    return f / (f.std() + 1e-12)


def synthetic_image(rng: np.random.Generator, size: int = 96) -> np.ndarray:
    """One H x W x 3 texture in [0, 1]: gradient, shapes, a grating, and colored noise."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    angle = rng.uniform(0, 2 * np.pi)
    t = np.clip(0.5 + (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)), 0, 1)[..., None]
    img = c0 * (1 - t) + c1 * t

    for _ in range(rng.integers(2, 7)):
        color = rng.uniform(0, 1, 3)
        cx, cy = rng.uniform(0, 1, 2)
        rx, ry = rng.uniform(0.05, 0.35, 2)
        if rng.random() < 0.5:
            mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1
        else:
            mask = (np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)
        mask = gaussian_filter(mask.astype(np.float64), rng.uniform(0.3, 1.5))[..., None]
        img = img * (1 - mask) + color * mask

    freq = rng.uniform(2, 14)
    theta = rng.uniform(0, np.pi)
    grating = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + rng.uniform(0, 2 * np.pi))
    region = gaussian_filter((rng.uniform(0, 1, (size, size)) < 0.5).astype(np.float64), size / 8, mode="wrap")
    region = (region > np.median(region)).astype(np.float64)
    img = img + rng.uniform(0.05, 0.25) * (grating * region)[..., None] * rng.uniform(0.3, 1, 3)

    texture = np.stack([_smooth_noise(rng, size, rng.uniform(0.7, 3)) for _ in range(3)], axis=-1)
    img = img + rng.uniform(0.01, 0.08) * texture
    img = img + rng.uniform(0.0, 0.015) * rng.standard_normal(img.shape)
    return np.clip(img, 0, 1).astype(np.float32)


def synthetic_dataset(n: int, size: int = 96, seed: int = 0) -> torch.Tensor:
    """``n`` textures as an ``n x 3 x size x size`` tensor, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    imgs = np.stack([synthetic_image(rng, size) for _ in range(n)])
    return torch.from_numpy(imgs).permute(0, 3, 1, 2).contiguous()


def load_image(path: str | Path) -> torch.Tensor:
    from PIL import Image

    with Image.open(path) as im:
        a = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(a).permute(2, 0, 1).unsqueeze(0).contiguous()


def save_image(x: torch.Tensor, path: str | Path) -> None:
    from PIL import Image

    a = (x[0].clamp(0, 1).permute(1, 2, 0).numpy() * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(a).save(path)


def list_images(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def center_crop16(x: torch.Tensor, name: str = "image") -> torch.Tensor:
    """Crop to the largest centered multiple of 16 in each dimension."""
    h, w = x.shape[-2:]
    nh, nw = h - h % 16, w - w % 16
    if nh == 0 or nw == 0:
        raise DatasetError(f"{name} is smaller than 16x16")
    if (nh, nw) != (h, w):
        log.warning("%s: center-cropping %dx%d to %dx%d", name, h, w, nh, nw)
        top, left = (h - nh) // 2, (w - nw) // 2
        x = x[..., top:top + nh, left:left + nw]
    return x


class ImageSet:
    """In-memory list of images with seeded random crops."""

    def __init__(self, images: list[torch.Tensor]):
        if not images:
            raise DatasetError("dataset is empty")
        self.images = images

    @classmethod
    def from_dir(cls, directory: str | Path, min_size: int = 0) -> "ImageSet":
        paths = list_images(directory)
        imgs = []
        for p in paths:
            x = load_image(p)[0]
            if min(x.shape[-2:]) < min_size:
                log.warning("skipping %s: smaller than %d px", p, min_size)
                continue
            imgs.append(x)
        if not imgs:
            raise DatasetError(f"no usable images in {directory}")
        return cls(imgs)

    @classmethod
    def synthetic(cls, n: int, size: int, seed: int) -> "ImageSet":
        return cls(list(synthetic_dataset(n, size, seed)))

    def __len__(self) -> int:
        return len(self.images)

    def crops(self, rng: np.random.Generator, batch: int, crop: int) -> torch.Tensor:
        out = []
        for _ in range(batch):
            img = self.images[int(rng.integers(len(self.images)))]
            h, w = img.shape[-2:]
            top = int(rng.integers(0, h - crop + 1))
            left = int(rng.integers(0, w - crop + 1))
            out.append(img[:, top:top + crop, left:left + crop])
        return torch.stack(out)


# held-out synthetic images use seeds disjoint from training
EVAL_SEED_OFFSET = 10_000


def eval_images(n: int = 10, size: int = 96, seed: int = 0) -> list[torch.Tensor]:
    """Held-out textures.  Keep ``size`` equal to the training texture size: the
    generator scales its shapes and gratings with the canvas, so other sizes
    are a different distribution."""
    imgs = synthetic_dataset(n, size, seed + EVAL_SEED_OFFSET)
    return [imgs[i:i + 1] for i in range(n)]
