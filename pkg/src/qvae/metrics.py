"""Reconstruction metrics on (N, C, H, W) image batches in [0, 1].

Batches with 4 planes are treated as quaternion images and only the three
colour planes are scored.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ImageTooSmall, ShapeMismatch

SSIM_WINDOW = 7
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _colour(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (N, C, H, W) images, got {x.shape}")
    return x[:, 1:] if x.shape[1] == 4 else x


def _pair(a, b):
    a, b = _colour(a), _colour(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def ssim_map(a, b, window: int = SSIM_WINDOW, data_range: float = 1.0) -> np.ndarray:
    """Local SSIM over every fully contained ``window x window`` patch (uniform weights)."""
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < window:
        raise ImageTooSmall(f"images of size {a.shape[-2:]} are smaller than the {window}x{window} window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    wa = sliding_window_view(a, (window, window), axis=(-2, -1))
    wb = sliding_window_view(b, (window, window), axis=(-2, -1))
    axes = (-2, -1)
    mu_a, mu_b = wa.mean(axis=axes), wb.mean(axis=axes)
    n = window * window
    corr = n / (n - 1)  # sample covariance
    va = (np.mean(wa * wa, axis=axes) - mu_a**2) * corr
    vb = (np.mean(wb * wb, axis=axes) - mu_b**2) * corr
    cov = (np.mean(wa * wb, axis=axes) - mu_a * mu_b) * corr
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))


def ssim(a, b, window: int = SSIM_WINDOW, data_range: float = 1.0) -> float:
    return float(np.mean(ssim_map(a, b, window, data_range)))
