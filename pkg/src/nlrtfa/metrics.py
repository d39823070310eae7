"""PSNR and SSIM for 8-bit-range grayscale images."""
from __future__ import annotations

import math

import numpy as np

from .patch_ops import ImageTooSmall
from .tensor_cp import DimensionMismatch

PEAK = 255.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """``10 log10(255^2 / MSE)``; identical images give ``inf``."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(PEAK**2 / mse)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable correlation over full-overlap windows only
    s = g.size
    rows = sum(g[i] * img[i : img.shape[0] - s + 1 + i, :] for i in range(s))
    return sum(g[j] * rows[:, j : rows.shape[1] - s + 1 + j] for j in range(s))


def ssim_map(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WIN:
        raise ImageTooSmall(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    g = gaussian_window()
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM over 11x11 Gaussian (sigma 1.5) windows fully inside the image."""
    return float(np.mean(ssim_map(a, b)))


def quality(a, b) -> tuple[float, float]:
    return psnr(a, b), ssim(a, b)
