"""Image-domain kernels: overlapped patch unfold/fold, bicubic
resampling with antialiasing, and RGB -> luminance conversion.

unfold and fold are differentiable (tape-registered); fold without
normalization is the exact adjoint of unfold. Resampling and color
conversion are plain numpy functions used by the data pipeline and
the metrics, where no gradients flow.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class PatchSpec:
    """Sliding-window geometry: patch size k, stride s, zero padding p."""

    k: int
    s: int
    p: int

    def __post_init__(self):
        if self.k < 1 or self.s < 1 or self.p < 0:
            raise ConfigError(f"invalid patch spec k={self.k} s={self.s} p={self.p}")
        if self.p >= self.k:
            raise ConfigError(f"padding {self.p} must be smaller than patch size {self.k}")


def token_count(h: int, w: int, spec: PatchSpec) -> tuple[int, int, int]:
    """Window-grid extents (rows, cols) and total windows l for an h x w image."""
    rows = (h + 2 * spec.p - spec.k) // spec.s + 1
    cols = (w + 2 * spec.p - spec.k) // spec.s + 1
    if rows < 1 or cols < 1:
        raise ConfigError(
            f"patch spec k={spec.k} s={spec.s} p={spec.p} yields no windows on {h}x{w}"
        )
    return rows, cols, rows * cols


def _unfold_nd(img: np.ndarray, spec: PatchSpec) -> np.ndarray:
    h, w, c = img.shape
    rows, cols, l = token_count(h, w, spec)
    k, s, p = spec.k, spec.s, spec.p
    padded = np.pad(img, ((p, p), (p, p), (0, 0))) if p else img
    win = sliding_window_view(padded, (k, k), axis=(0, 1))[::s, ::s]
    # (rows, cols, C, k, k) -> (rows, cols, k, k, C): within-patch order is
    # row, then column, then channel.
    win = win.transpose(0, 1, 3, 4, 2)
    return np.ascontiguousarray(win).reshape(l, k * k * c)


def _fold_nd(tok: np.ndarray, h: int, w: int, spec: PatchSpec) -> np.ndarray:
    rows, cols, l = token_count(h, w, spec)
    k, s, p = spec.k, spec.s, spec.p
    c = tok.shape[1] // (k * k)
    t = tok.reshape(rows, cols, k, k, c)
    canvas = np.zeros((h + 2 * p, w + 2 * p, c), dtype=tok.dtype)
    for dy in range(k):
        ys = slice(dy, dy + (rows - 1) * s + 1, s)
        for dx in range(k):
            xs = slice(dx, dx + (cols - 1) * s + 1, s)
            canvas[ys, xs] += t[:, :, dy, dx, :]
    return canvas[p:p + h, p:p + w] if p else canvas


@lru_cache(maxsize=64)
def coverage_counts(h: int, w: int, spec: PatchSpec) -> np.ndarray:
    """Per-pixel count of sliding windows covering each pixel."""
    rows, cols, l = token_count(h, w, spec)
    ones = np.ones((l, spec.k * spec.k), dtype=np.float64)
    cov = _fold_nd(ones, h, w, spec)[:, :, 0]
    cov.setflags(write=False)
    return cov


def unfold(img, spec: PatchSpec) -> Tensor:
    """Split an H x W x C image into overlapped flattened k x k patches.

    Output row i is the patch at grid position i in row-major grid
    order; the padded border contributes zeros.
    """
    x = T.as_tensor(img)
    if x.ndim != 3:
        raise ShapeError(f"unfold expects an H x W x C image, got shape {x.shape}")
    h, w, c = x.shape
    arr = _unfold_nd(x.data, spec)

    def grad_fn(g):
        return (_fold_nd(g, h, w, spec),)

    return T._apply("unfold", arr, (x,), grad_fn)


def fold(tokens, h: int, w: int, spec: PatchSpec, normalize: bool = True) -> Tensor:
    """Scatter flattened patches back onto an h x w canvas.

    Overlapping contributions are summed; with ``normalize`` each pixel
    is divided by its coverage count (uncovered pixels stay zero). The
    unnormalized variant is the exact adjoint of :func:`unfold`.
    """
    t = T.as_tensor(tokens)
    if t.ndim != 2 or t.shape[1] % (spec.k * spec.k) != 0:
        raise ShapeError(f"fold expects (l, C*k*k) tokens, got shape {t.shape}")
    rows, cols, l = token_count(h, w, spec)
    if t.shape[0] != l:
        raise ShapeError(f"fold got {t.shape[0]} tokens, spec implies {l} for {h}x{w}")
    arr = _fold_nd(t.data, h, w, spec)
    if normalize:
        cov = coverage_counts(h, w, spec)[:, :, None]
        arr = np.divide(arr, cov, out=np.zeros_like(arr), where=cov > 0)

    def grad_fn(g):
        if normalize:
            cov_ = coverage_counts(h, w, spec)[:, :, None]
            g = np.divide(g, cov_, out=np.zeros_like(g), where=cov_ > 0)
        return (_unfold_nd(np.ascontiguousarray(g), spec),)

    return T._apply("fold", arr, (t,), grad_fn)


# --- bicubic resampling ---

def _cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    far = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def _resize_weights(in_size: int, out_size: int) -> np.ndarray:
    """Dense (out_size, in_size) row-stochastic resampling matrix.

    Cubic convolution with a = -0.5; when downsampling the kernel
    support is widened by the scale factor (antialiasing). Sample
    positions outside the image clamp to the border.
    """
    scale = in_size / out_size
    width = max(scale, 1.0)
    u = (np.arange(out_size) + 0.5) * scale - 0.5
    support = 2.0 * width
    lo = np.floor(u - support).astype(int) + 1
    n_taps = int(np.ceil(2.0 * support)) + 1
    idx = lo[:, None] + np.arange(n_taps)[None, :]
    w = _cubic_kernel((u[:, None] - idx) / width) / width
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_size - 1)
    mat = np.zeros((out_size, in_size))
    np.add.at(mat, (np.arange(out_size)[:, None], idx), w)
    return mat


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int,
                   value_range: tuple[float, float] | None = None) -> np.ndarray:
    """Separable bicubic resize of an H x W x C (or H x W) image.

    Pass ``value_range`` to clip the output when operating on
    display-range images.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output extents must be >= 1, got {out_h}x{out_w}")
    arr = np.asarray(img, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    wr = _resize_weights(h, out_h)
    wc = _resize_weights(w, out_w)
    out = np.tensordot(wr, arr, axes=(1, 0))          # (out_h, W, C)
    out = np.tensordot(out, wc, axes=(1, 1))          # (out_h, C, out_w)
    out = out.transpose(0, 2, 1)
    if value_range is not None:
        out = np.clip(out, value_range[0], value_range[1])
    return out[:, :, 0] if squeeze else out


def rgb_to_ycbcr_y(img: np.ndarray) -> np.ndarray:
    """BT.601 studio-range luminance of an H x W x 3 image in 0..255."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 image, got shape {arr.shape}")
    y = 16.0 + (65.481 * arr[:, :, 0] + 128.553 * arr[:, :, 1] + 24.966 * arr[:, :, 2]) / 255.0
    return y[:, :, None]
