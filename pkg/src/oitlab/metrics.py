"""Image quality measures: PSNR, Gaussian-windowed SSIM and error maps."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

__all__ = ["PSNR_CAP", "LUMA", "psnr", "ssim", "abs_error_image", "luminance"]

PSNR_CAP = 60.0
LUMA = np.array([0.2126, 0.7152, 0.0722])
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def luminance(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[..., :3] @ LUMA


def psnr(render, reference) -> float:
    """-10 log10(MSE) over all pixels and channels, capped at 60 dB."""
    a, b = _pair(render, reference)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(-10.0 * np.log10(mse), PSNR_CAP)


def ssim(render, reference):
    """Mean SSIM and the per-pixel map, on Rec.709 luminance.

    Local statistics use an 11x11 Gaussian window with sigma 1.5 and
    reflected borders.
    """
    a, b = _pair(render, reference)
    x = luminance(a)
    y = luminance(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError("images must be at least 11 pixels on each side")
    # truncate so the kernel spans exactly 11 taps
    trunc = (SSIM_WINDOW // 2) / SSIM_SIGMA

    def blur(img):
        return ndimage.gaussian_filter(img, SSIM_SIGMA, mode="reflect", truncate=trunc)

    mx = blur(x)
    my = blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    smap = np.clip(num / den, -1.0, 1.0)
    return float(smap.mean()), smap


def abs_error_image(render, reference) -> np.ndarray:
    """Inverted gray-scale error: 1 where equal, 0 at the largest mean channel error."""
    a, b = _pair(render, reference)
    err = np.abs(a - b)
    if err.ndim == 3:
        err = err.mean(axis=-1)
    peak = err.max() if err.size else 0.0
    if peak == 0.0:
        return np.ones_like(err)
    return 1.0 - err / peak
