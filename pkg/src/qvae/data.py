"""Image ingestion: directory walk, centre crop, bilinear resize."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import NoImagesFound
from .model import to_image_batch

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".ppm", ".pnm", ".jpg", ".jpeg"}


@dataclass
class ImageRecord:
    path: str
    pixels: np.ndarray  # (3, S, S) float32 in [0, 1]


@dataclass
class Dataset:
    items: list
    target_size: int
    split: str = "train"
    skipped: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def array(self) -> np.ndarray:
        return np.stack([r.pixels for r in self.items])

    def batch(self, indices, dtype=np.float32) -> np.ndarray:
        """Quaternion image batch (n, 4, S, S) for the given item indices."""
        return to_image_batch(np.stack([self.items[i].pixels for i in indices]), dtype=dtype)

    @classmethod
    def from_array(cls, rgb: np.ndarray, split: str = "train") -> "Dataset":
        rgb = np.asarray(rgb, dtype=np.float32)
        items = [ImageRecord(f"<memory:{i}>", rgb[i]) for i in range(len(rgb))]
        return cls(items, rgb.shape[-1], split)


def center_crop(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return img[top:top + s, left:left + s]


def resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an (H, W, C) image with corner pixels mapped onto corners."""
    h, w = img.shape[:2]

    def coords(n_in):
        if size == 1:
            pos = np.zeros(1)
        else:
            pos = np.arange(size) * (n_in - 1) / (size - 1)
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (pos - lo)

    y0, y1, fy = coords(h)
    x0, x1, fx = coords(w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def decode_image(path, target_size: int) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    out = resize_bilinear(center_crop(arr), target_size)
    return np.clip(out, 0.0, 1.0).transpose(2, 0, 1).astype(np.float32)


def list_images(directory) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise NoImagesFound(f"{directory} is not a directory")
    found = []
    for dirpath, _, files in os.walk(root):
        for f in files:
            if Path(f).suffix.lower() in IMAGE_SUFFIXES:
                found.append(Path(dirpath) / f)
    return sorted(found, key=lambda p: p.relative_to(root).as_posix())


def load_dataset(directory, target_size: int = 64, limit=None, split: str = "train") -> Dataset:
    """Load every decodable image under ``directory`` in filename order."""
    paths = list_images(directory)
    items, skipped = [], []
    for p in paths:
        if limit is not None and len(items) >= limit:
            break
        try:
            items.append(ImageRecord(str(p), decode_image(p, target_size)))
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            log.warning("skipping %s: %s", p, exc)
            skipped.append(str(p))
    if not items:
        raise NoImagesFound(f"no decodable images under {directory}")
    return Dataset(items, target_size, split, skipped)
