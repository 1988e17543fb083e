"""Grid image writer (8 tiles per row, 2-pixel white separators)."""
from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .checkpoint import atomic_write

PER_ROW = 8
SEPARATOR = 2


def _rgb(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images)
    return images[:, 1:] if images.shape[1] == 4 else images


def image_grid(images, per_row: int = PER_ROW, sep: int = SEPARATOR) -> np.ndarray:
    """Tile (N, C, H, W) images into an (rows*H + gaps, cols*W + gaps, 3) uint8 array."""
    images = _rgb(images)
    n, _, h, w = images.shape
    cols = min(per_row, n)
    rows = -(-n // per_row)
    grid = np.full((rows * h + (rows + 1) * sep, cols * w + (cols + 1) * sep, 3), 255, dtype=np.uint8)
    tiles = np.round(np.clip(images, 0, 1) * 255).astype(np.uint8).transpose(0, 2, 3, 1)
    for i, tile in enumerate(tiles):
        r, c = divmod(i, per_row)
        y, x = sep + r * (h + sep), sep + c * (w + sep)
        grid[y:y + h, x:x + w] = tile
    return grid


def comparison_grid(originals, reconstructions, per_row: int = PER_ROW) -> np.ndarray:
    """Alternate rows of originals and their reconstructions."""
    a, b = _rgb(originals), _rgb(reconstructions)
    rows = []
    for start in range(0, len(a), per_row):
        rows.append(a[start:start + per_row])
        rows.append(b[start:start + per_row])
    if len(a) > per_row and len(a) % per_row:
        pad = per_row - len(a) % per_row
        blank = np.ones((pad,) + a.shape[1:], dtype=a.dtype)
        rows[-2] = np.concatenate([rows[-2], blank])
        rows[-1] = np.concatenate([rows[-1], blank])
    return image_grid(np.concatenate(rows), per_row=min(per_row, len(a)))


def save_png(path, array: np.ndarray) -> None:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    atomic_write(path, buf.getvalue())
