"""Image-quality metrics: PSNR and SSIM.

Evaluation quantizes RGB to 8 bits first (``quantize8``) so numbers are
comparable with images read back from PNG.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .errors import DimMismatch

INFINITE = math.inf

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def quantize8(img) -> np.ndarray:
    """Round [0, 1] floats to the nearest 8-bit level, returned as floats in [0, 1]."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(img * 255.0) / 255.0


def to_uint8(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def _check_dims(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(img_a, img_b, max_val: float = 1.0) -> float:
    """10 log10(max^2 / MSE) over all pixels and channels; ``INFINITE`` when MSE is zero."""
    a, b = _check_dims(img_a, img_b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return INFINITE
    return 10.0 * math.log10(max_val * max_val / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _filter_valid(img, w):
    # separable correlation, then keep only windows fully inside the image
    out = ndimage.correlate1d(img, w, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, w, axis=1, mode="reflect")
    r = len(w) // 2
    return out[r:-r, r:-r]


def to_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def ssim_map(img_a, img_b, data_range: float = 1.0) -> np.ndarray:
    a, b = _check_dims(img_a, img_b)
    a, b = to_gray(a), to_gray(b)
    if min(a.shape) < SSIM_WINDOW:
        raise DimMismatch(f"images must be at least {SSIM_WINDOW} px on each side")
    w = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    aa = _filter_valid(a * a, w) - mu_a * mu_a
    bb = _filter_valid(b * b, w) - mu_b * mu_b
    ab = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (aa + bb + c2)
    return num / den


def ssim(img_a, img_b, data_range: float = 1.0) -> float:
    """Mean local SSIM of the grayscale (mean of RGB) images, 11x11 Gaussian window, sigma 1.5."""
    return float(np.mean(ssim_map(img_a, img_b, data_range)))


def image_metrics(pred, ref) -> tuple[float, float]:
    """(psnr, ssim) on 8-bit quantized copies."""
    qa, qb = quantize8(pred), quantize8(ref)
    return psnr(qa, qb), ssim(qa, qb)


def mean_psnr(values) -> float:
    """Arithmetic mean; any infinite entry makes the mean infinite."""
    vals = [float(v) for v in values]
    return float(np.mean(vals)) if vals else float("nan")
