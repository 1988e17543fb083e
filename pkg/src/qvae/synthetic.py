"""Procedural face-like images for smoke tests and desk-scale experiments."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


# saturated palette: near-binary pixels keep the BCE entropy floor low
_LO, _HI = 0.02, 0.98


def _colour(rng, exclude=None):
    while True:
        c = np.where(rng.random(3) < 0.5, _LO, _HI)
        if exclude is None or not np.array_equal(c, exclude):
            return c


def synthetic_faces(n: int, size: int = 32, seed: int = 0, blur: float = 0.5) -> np.ndarray:
    """Return ``n`` RGB images of shape (n, 3, size, size) in [0, 1].

    Each image has a flat background, a hair cap, an elliptical face with
    two eyes and a mouth, drawn from a saturated palette and lightly
    blurred, so most pixels sit near 0 or 1.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    out = np.empty((n, 3, size, size))
    skin = np.array([_HI, _HI, _LO])
    for i in range(n):
        background = _colour(rng, exclude=skin)
        img = np.broadcast_to(background[:, None, None], (3, size, size)).copy()
        cy, cx = 0.52 + rng.uniform(-0.06, 0.06), 0.5 + rng.uniform(-0.08, 0.08)
        ry, rx = rng.uniform(0.28, 0.36), rng.uniform(0.2, 0.28)
        hair = _colour(rng, exclude=skin)
        cap = _ellipse(yy, xx, cy - 0.08, cx, ry + 0.06, rx + 0.06) & (yy < cy)
        img[:, cap] = hair[:, None]
        face = _ellipse(yy, xx, cy + 0.02, cx, ry, rx)
        img[:, face] = skin[:, None]
        eye_dy, eye_dx = -0.06, rx * 0.45
        for s in (-1, 1):
            eye = _ellipse(yy, xx, cy + eye_dy, cx + s * eye_dx, 0.035, 0.05)
            img[:, eye] = _LO
        mouth = _ellipse(yy, xx, cy + ry * 0.55, cx, 0.03, rx * 0.45)
        img[:, mouth] = np.array([_HI, _LO, _LO])[:, None]
        out[i] = gaussian_filter(img, sigma=(0, blur, blur)) if blur else img
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def write_synthetic_faces(directory, n: int, size: int = 32, seed: int = 0) -> list:
    """Write the images as PNG files ``face_00000.png`` ... and return the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(synthetic_faces(n, size, seed)):
        p = d / f"face_{i:05d}.png"
        Image.fromarray(np.round(img.transpose(1, 2, 0) * 255).astype(np.uint8)).save(p)
        paths.append(p)
    return paths
