"""PSNR and SSIM on the 0..255 display range, in RGB or on the
BT.601 luminance channel."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, UsageError
from .vision import rgb_to_ycbcr_y

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 255.0


def _prepare(pred, target, mode: str) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"image shapes differ: {p.shape} vs {t.shape}")
    mode = mode.lower()
    if mode == "y":
        p, t = rgb_to_ycbcr_y(p), rgb_to_ycbcr_y(t)
    elif mode != "rgb":
        raise UsageError(f"mode must be 'y' or 'rgb', got {mode!r}")
    if p.ndim == 2:
        p, t = p[:, :, None], t[:, :, None]
    return p, t


def psnr(pred, target, mode: str = "y") -> float:
    """20 log10(255 / RMSE); identical images report the 100 dB cap."""
    p, t = _prepare(pred, target, mode)
    mse = np.mean((p - t) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 20.0 * np.log10(255.0 / np.sqrt(mse)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # valid-mode 2-D correlation
    v = sliding_window_view(img, window.shape)
    return np.tensordot(v, window, axes=([2, 3], [0, 1]))


def _ssim_channel(p: np.ndarray, t: np.ndarray, window: np.ndarray) -> float:
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    mu_p = _windowed_mean(p, window)
    mu_t = _windowed_mean(t, window)
    var_p = _windowed_mean(p * p, window) - mu_p * mu_p
    var_t = _windowed_mean(t * t, window) - mu_t * mu_t
    cov = _windowed_mean(p * t, window) - mu_p * mu_t
    num = (2.0 * mu_p * mu_t + c1) * (2.0 * cov + c2)
    den = (mu_p * mu_p + mu_t * mu_t + c1) * (var_p + var_t + c2)
    return float(np.mean(num / den))


def ssim(pred, target, mode: str = "y") -> float:
    """Mean local structural similarity over 11x11 Gaussian windows.

    RGB mode averages the per-channel scores.
    """
    p, t = _prepare(pred, target, mode)
    if p.shape[0] < SSIM_WINDOW or p.shape[1] < SSIM_WINDOW:
        raise UsageError(
            f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {p.shape[:2]}"
        )
    window = gaussian_window()
    scores = [_ssim_channel(p[:, :, c], t[:, :, c], window) for c in range(p.shape[2])]
    return float(np.mean(scores))
