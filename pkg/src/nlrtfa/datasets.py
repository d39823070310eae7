"""Standard grayscale test images (needs scikit-image, bundled data only)."""
from __future__ import annotations

import numpy as np

NAMES = ("camera", "moon", "astronaut", "coffee", "chelsea")


def test_image(name: str, size: int = 256) -> np.ndarray:
    """``name`` from ``skimage.data`` as float luma, 2x2 block-averaged and
    center-cropped to ``size x size``."""
    from skimage import color, data

    img = getattr(data, name)()
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3]) * 255.0
    img = np.asarray(img, dtype=float)
    H, W = img.shape
    img = img[: H // 2 * 2, : W // 2 * 2].reshape(H // 2, 2, W // 2, 2).mean(axis=(1, 3))
    h, w = img.shape
    if size > min(h, w):
        raise ValueError(f"{name} is only {h}x{w} after downsampling")
    top, left = (h - size) // 2, (w - size) // 2
    return img[top : top + size, left : left + size]
