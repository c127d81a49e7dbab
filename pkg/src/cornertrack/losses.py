"""Ground-truth rendering and the training objective for the corner heads.

Heatmap targets are unnormalised Gaussians whose spread comes from an
IoU-preserving radius; the objective is a penalty-reduced focal loss on the
heatmaps plus a smooth-L1 loss on sub-stride offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor

CLAMP_EPS = 1e-7


class ContractError(ValueError):
    """Raised when a loss is called outside its preconditions."""


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2.0
    beta: float = 4.0
    lam: float = 1.0
    radius_iou: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("focal exponents must be positive")
        if self.lam < 0:
            raise ValueError("offset weight must be non-negative")
        if not 0 < self.radius_iou < 1:
            raise ValueError("radius IoU threshold must lie in (0, 1)")


# --- radius -----------------------------------------------------------------

def _shrink_bound(w: float, h: float, d: float) -> float:
    # (w - 2r)(h - 2r) >= d*w*h, smaller root of 4r^2 - 2(w+h)r + (1-d)wh
    s = w + h
    return (s - math.sqrt(s * s - 4.0 * w * h * (1.0 - d))) / 4.0


def _expand_bound(w: float, h: float, d: float) -> float:
    # w*h >= d(w + 2r)(h + 2r)
    s = w + h
    return (-d * s + math.sqrt(d * d * s * s + 4.0 * d * (1.0 - d) * w * h)) / (4.0 * d)


def _translate_bound(w: float, h: float, d: float) -> float:
    # (1+d)(w - r)(h - r) >= 2d*w*h
    s = w + h
    return (s - math.sqrt(s * s - 4.0 * w * h * (1.0 - d) / (1.0 + d))) / 2.0


def radius_ious(w: float, h: float, r: float) -> tuple[float, float, float]:
    """IoU of the shrunk, expanded and translated boxes against the original."""
    area = w * h
    shrink = max(w - 2 * r, 0.0) * max(h - 2 * r, 0.0) / area
    expand = area / ((w + 2 * r) * (h + 2 * r))
    inter = max(w - r, 0.0) * max(h - r, 0.0)
    translate = inter / (2 * area - inter)
    return shrink, expand, translate


def radius_ok(w: float, h: float, r: int, d: float) -> bool:
    return all(v >= d for v in radius_ious(w, h, r))


def gaussian_radius(w: float, h: float, d: float = 0.5) -> int:
    """Largest integer displacement keeping every corner-jitter case at IoU >= d."""
    if w <= 0 or h <= 0:
        raise ValueError(f"box dimensions must be positive, got {w}x{h}")
    if not 0 < d < 1:
        raise ValueError(f"d must lie in (0, 1), got {d}")
    bound = min(_shrink_bound(w, h, d), _expand_bound(w, h, d), _translate_bound(w, h, d))
    r = max(0, math.floor(bound))
    # roots that land on an integer can come out a hair low or high in floating point
    if radius_ok(w, h, r + 1, d):
        r += 1
    elif r > 0 and not radius_ok(w, h, r, d):
        r -= 1
    return r


def gaussian_radius_bruteforce(w: float, h: float, d: float = 0.5) -> int:
    r = 0
    while radius_ok(w, h, r + 1, d):
        r += 1
    return r


# --- targets ----------------------------------------------------------------

def render_heatmap(grid_h: int, grid_w: int, center: tuple[int, int], radius: int) -> Tensor:
    """Unnormalised Gaussian with sigma = radius / 3, peaking at 1 on ``center``.

    ``center`` is (x, y) in grid cells. A zero radius gives a one-hot map.
    """
    cx, cy = center
    if not (0 <= cx < grid_w and 0 <= cy < grid_h):
        raise ValueError(f"center {center} outside {grid_w}x{grid_h} grid")
    if radius < 0:
        raise ValueError("radius must be non-negative")
    out = np.zeros((1, 1, grid_h, grid_w))
    if radius == 0:
        out[0, 0, cy, cx] = 1.0
        return Tensor._wrap(out)
    sigma = radius / 3.0
    ys = np.arange(grid_h)[:, None] - cy
    xs = np.arange(grid_w)[None, :] - cx
    out[0, 0] = np.exp(-(xs * xs + ys * ys) / (2.0 * sigma * sigma))
    return Tensor._wrap(out)


def offset_target(m: float, n: float, s: int) -> tuple[float, float]:
    if s < 1:
        raise ValueError("stride must be >= 1")
    u, v = m / s, n / s
    return u - math.floor(u), v - math.floor(v)


# --- losses -----------------------------------------------------------------

def focal_loss_array(pred: np.ndarray, target: np.ndarray, alpha: float, beta: float,
                     k: int) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to ``pred``."""
    p = np.clip(pred, CLAMP_EPS, 1.0 - CLAMP_EPS)
    inside = (pred >= CLAMP_EPS) & (pred <= 1.0 - CLAMP_EPS)
    pos = target == 1.0
    log_p = np.log(p)
    log_q = np.log1p(-p)
    neg_w = (1.0 - target) ** beta
    loss_pos = (1.0 - p) ** alpha * log_p
    loss_neg = neg_w * p ** alpha * log_q
    value = -float(np.sum(np.where(pos, loss_pos, loss_neg))) / k
    d_pos = alpha * (1.0 - p) ** (alpha - 1.0) * log_p - (1.0 - p) ** alpha / p
    d_neg = -neg_w * (alpha * p ** (alpha - 1.0) * log_q - p ** alpha / (1.0 - p))
    grad = np.where(pos, d_pos, d_neg) / k
    grad = np.where(inside, grad, 0.0)
    return value, grad


def focal_loss(pred: Tensor, target: Tensor, weights: LossWeights = LossWeights(), k: int = 1) -> float:
    """Penalty-reduced focal loss over a probability heatmap, normalised by ``k``.

    Cells where the target equals exactly 1 are positives. Predictions are
    clamped to [1e-7, 1 - 1e-7] before taking logs.
    """
    if k < 1:
        raise ContractError(f"K must be >= 1, got {k}")
    if pred.shape != target.shape:
        raise ShapeError(f"focal_loss: {pred.shape} vs {target.shape}")
    value, _ = focal_loss_array(pred.data, target.data, weights.alpha, weights.beta, k)
    return value


def smooth_l1_array(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ax = np.abs(x)
    small = ax < 1.0
    return np.where(small, 0.5 * x * x, ax - 0.5), np.where(small, x, np.sign(x))


def offset_loss(pred, target, k: int | None = None) -> float:
    """Mean smooth-L1 over K offset pairs, each pair summed over its components."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    t = np.asarray(target, dtype=np.float64).reshape(-1, 2)
    if p.shape != t.shape:
        raise ContractError(f"offset_loss: {p.shape[0]} predictions vs {t.shape[0]} targets")
    k = p.shape[0] if k is None else k
    if k < 1:
        raise ContractError(f"K must be >= 1, got {k}")
    value, _ = smooth_l1_array(p - t)
    return float(value.sum()) / k


def total_loss(tracking: float, offset: float, lam: float = 1.0) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return tracking + lam * offset
