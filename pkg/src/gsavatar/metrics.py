"""Reconstruction metrics: PSNR, SSIM (luma), foreground patch comparison."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_LUMA = np.array([0.299, 0.587, 0.114], np.float32)  # Rec. 601


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for images in [0, 1]; +inf when identical."""
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes differ {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2 * sigma**2))
    return (w / w.sum()).astype(np.float64)


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # separable valid-mode filtering; windows land on the last axis
    from numpy.lib.stride_tricks import sliding_window_view

    tmp = sliding_window_view(img, len(win), axis=1) @ win
    return sliding_window_view(tmp, len(win), axis=0) @ win


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03) -> float:
    """SSIM on Rec.601 luma, 11x11 Gaussian window sigma=1.5, valid region."""
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes differ {a.shape} vs {b.shape}")
    x = (a @ _LUMA).astype(np.float64) if a.ndim == 3 else a.astype(np.float64)
    y = (b @ _LUMA).astype(np.float64) if b.ndim == 3 else b.astype(np.float64)
    win = _gaussian_window()
    c1, c2 = k1**2, k2**2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    xx = _filter_valid(x * x, win) - mu_x**2
    yy = _filter_valid(y * y, win) - mu_y**2
    xy = _filter_valid(x * y, win) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def patch_metric(
    pred: np.ndarray,
    target: np.ndarray,
    fg_mask: np.ndarray,
    patch: int = 64,
    fg_threshold: float = 0.5,
):
    """Per-patch PSNR on patches whose foreground coverage exceeds the threshold.

    Returns (psnrs, coords): one entry per valid non-overlapping patch. An
    empty result means no patch cleared the threshold.
    """
    h, w = target.shape[:2]
    psnrs, coords = [], []
    for y0 in range(0, h - patch + 1, patch):
        for x0 in range(0, w - patch + 1, patch):
            frac = float(fg_mask[y0 : y0 + patch, x0 : x0 + patch].mean())
            if frac <= fg_threshold:
                continue
            psnrs.append(psnr(pred[y0 : y0 + patch, x0 : x0 + patch],
                              target[y0 : y0 + patch, x0 : x0 + patch]))
            coords.append((y0, x0))
    return psnrs, coords
