"""Training objectives: robust pixel loss plus landmark regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_pix: float = 1.0
    lambda_pts: float = 0.1
    eps: float = 1e-3

    def __post_init__(self):
        if self.lambda_pix < 0 or self.lambda_pts < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.eps <= 0:
            raise ConfigError("charbonnier eps must be positive")


def charbonnier(pred: Tensor, target, eps: float = 1e-3) -> Tensor:
    """Mean elementwise sqrt((pred - target)^2 + eps^2).

    Smooth near zero residual (gradient vanishes at the origin) and
    L1-like in the tails; equals eps exactly when pred == target.
    """
    pred = T.as_tensor(pred)
    target = T.as_tensor(target, pred)
    if pred.shape != target.shape:
        raise ShapeError(f"charbonnier shapes differ: {pred.shape} vs {target.shape}")
    d = T.sub(pred, target)
    return T.mean(T.sqrt(T.add(T.mul(d, d), eps * eps)))


def smooth_l1(pred: Tensor, target) -> Tensor:
    """Mean smooth-L1 over landmark coordinates.

    Quadratic (0.5 d^2) below |d| = 1, linear (|d| - 0.5) above; the two
    branches agree at the breakpoint.
    """
    pred = T.as_tensor(pred)
    target = T.as_tensor(target, pred)
    if pred.shape != target.shape:
        raise ShapeError(f"smooth_l1 shapes differ: {pred.shape} vs {target.shape}")
    d = T.sub(pred, target)
    ad = T.abs_(d)
    quad_mask = Tensor((ad.data < 1.0).astype(pred.dtype), dtype=pred.dtype)
    quad = T.mul(T.mul(d, d), 0.5)
    lin = T.sub(ad, 0.5)
    branched = T.add(T.mul(quad, quad_mask), T.mul(lin, T.sub(1.0, quad_mask)))
    return T.mean(branched)


def total_loss(pred_frames: Tensor, target_frames: np.ndarray,
               landmark_history: list[Tensor], gt_landmarks: np.ndarray,
               weights: LossWeights) -> tuple[Tensor, float, float]:
    """Sum over snapshots of weighted pixel + landmark losses.

    The landmark term for a snapshot averages the smooth-L1 of every
    recurrence's prediction, so early estimates stay supervised.
    Returns (total, pixel term value, landmark term value).
    """
    n = pred_frames.shape[0]
    if target_frames.shape != pred_frames.shape:
        raise ShapeError(
            f"prediction/target shapes differ: {pred_frames.shape} vs {target_frames.shape}"
        )
    if gt_landmarks.shape != (n, 5, 2):
        raise ShapeError(f"expected ({n}, 5, 2) landmarks, got {gt_landmarks.shape}")
    r = len(landmark_history)
    pix_terms = []
    pts_terms = []
    for j in range(n):
        pix_terms.append(charbonnier(pred_frames[j], target_frames[j], weights.eps))
        per_rec = [smooth_l1(lms[j], gt_landmarks[j]) for lms in landmark_history]
        total_pts = per_rec[0]
        for t in per_rec[1:]:
            total_pts = T.add(total_pts, t)
        pts_terms.append(T.mul(total_pts, 1.0 / r))
    pix = pix_terms[0]
    pts = pts_terms[0]
    for t in pix_terms[1:]:
        pix = T.add(pix, t)
    for t in pts_terms[1:]:
        pts = T.add(pts, t)
    total = T.add(T.mul(pix, weights.lambda_pix), T.mul(pts, weights.lambda_pts))
    return total, pix.item(), pts.item()
