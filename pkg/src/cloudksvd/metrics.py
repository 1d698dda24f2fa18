"""Reconstruction quality metrics: MSE, PSNR, SSIM, dictionary divergence."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .imaging import ImageGray


class PsnrResult(NamedTuple):
    value: float
    is_infinite: bool


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference over all entries of two same-shape arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("mse of empty arrays is undefined")
    return float(np.mean((a - b) ** 2))


def psnr(reference: np.ndarray, test: np.ndarray, peak: float = 1.0) -> PsnrResult:
    """Peak signal-to-noise ratio, 10*log10(peak^2 / mse), in dB.

    Identical inputs have infinite PSNR; that case is flagged rather than
    raised so callers can serialize it.
    """
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    err = mse(reference, test)
    if err == 0.0:
        return PsnrResult(math.inf, True)
    return PsnrResult(10.0 * math.log10(peak * peak / err), False)


def _gaussian_kernel_1d(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable 2-D correlation, 'valid' region only."""
    size = kernel.size
    win = np.lib.stride_tricks.sliding_window_view(img, size, axis=1)
    tmp = win @ kernel
    win = np.lib.stride_tricks.sliding_window_view(tmp, size, axis=0)
    return np.tensordot(win, kernel, axes=([2], [0]))


def ssim(reference: ImageGray, test: ImageGray) -> float:
    """Structural similarity index with the standard constants.

    11x11 Gaussian window (sigma 1.5), C1 = (0.01*L)^2, C2 = (0.03*L)^2 with
    dynamic range L = 1, averaged over valid window positions only. Both
    images must be at least 11 pixels on each side.
    """
    if reference.pixels.shape != test.pixels.shape:
        raise ValueError(
            f"shape mismatch: {reference.pixels.shape} vs {test.pixels.shape}"
        )
    size = 11
    if reference.height < size or reference.width < size:
        raise ValueError(f"images must be at least {size}x{size} for SSIM")
    kernel = _gaussian_kernel_1d(size, 1.5)
    x = reference.pixels
    y = test.pixels
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    mu_x = _filter_valid(x, kernel)
    mu_y = _filter_valid(y, kernel)
    xx = _filter_valid(x * x, kernel) - mu_x ** 2
    yy = _filter_valid(y * y, kernel) - mu_y ** 2
    xy = _filter_valid(x * y, kernel) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def dict_divergence(dictionaries) -> float:
    """Mean pairwise MSE between the nodes' dictionary matrices.

    Columns are compared in place (no atom matching across nodes). Returns
    NaN for a single node, where disagreement is undefined.
    """
    mats = [np.asarray(getattr(d, "data", d), dtype=np.float64) for d in dictionaries]
    if len(mats) == 0:
        raise ValueError("need at least one dictionary")
    shape = mats[0].shape
    for m in mats[1:]:
        if m.shape != shape:
            raise ValueError(f"dictionary shape mismatch: {m.shape} vs {shape}")
    h = len(mats)
    if h == 1:
        return float("nan")
    total = 0.0
    pairs = 0
    for i in range(h):
        for j in range(i + 1, h):
            total += float(np.mean((mats[i] - mats[j]) ** 2))
            pairs += 1
    return total / pairs
