"""Fuse per-level corner sets and pick one box per frame.

Candidates are scored by their raw corner score times a size/aspect penalty,
then blended with a window score assigned by motion rank: the candidate that
moved most since the last frame gets the smallest window score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Sequence

import numpy as np

from .cropping import BBox, CropMapping
from .decoding import FRAME, PATCH, CornerSet
from .losses import ContractError


@dataclass(frozen=True)
class TrackerHyper:
    eta: float = -0.1
    gamma: float = 0.3
    lr: float = 0.3
    n: int = 15
    t_wh: float = 0.5
    d: float = 0.5

    def __post_init__(self):
        if self.eta > 0:
            raise ValueError(f"eta must be <= 0, got {self.eta}")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0 < self.lr <= 1:
            raise ValueError(f"lr must lie in (0, 1], got {self.lr}")
        if self.n < 1:
            raise ValueError(f"N must be >= 1, got {self.n}")
        if not 0 < self.t_wh <= 1:
            raise ValueError(f"t_wh must lie in (0, 1], got {self.t_wh}")
        if not 0 < self.d < 1:
            raise ValueError(f"d must lie in (0, 1), got {self.d}")


@dataclass(frozen=True)
class TrackerState:
    """Per-sequence tracking state; replaced, never mutated, on each frame."""

    box: BBox
    hyper: TrackerHyper = TrackerHyper()
    template_features: Any = None
    mapping: CropMapping | None = None
    frame_size: tuple[int, int] | None = None  # (width, height)
    model: Any = None  # extractor, parameters and settings used by the tracker

    @property
    def center(self) -> tuple[float, float]:
        return self.box.cx, self.box.cy

    @property
    def w(self) -> float:
        return self.box.w

    @property
    def h(self) -> float:
        return self.box.h


def fuse_levels(sets: Sequence[CornerSet], mapping: CropMapping) -> CornerSet:
    """Concatenate level sets (in the given order) and map them to frame coordinates."""
    spaces = {s.space for s in sets}
    if spaces != {PATCH}:
        raise ContractError(f"fuse_levels expects patch-space sets, got {sorted(spaces)}")
    rows = np.concatenate([s.rows for s in sets], axis=0).copy()
    rows[:, [0, 2]] = rows[:, [0, 2]] / mapping.scale + mapping.offset_x
    rows[:, [1, 3]] = rows[:, [1, 3]] / mapping.scale + mapping.offset_y
    return CornerSet(rows, FRAME)


def scale_term(w: float, h: float) -> float:
    """sqrt((w + p)(h + p)) with padding p = (w + h) / 2."""
    p = (w + h) / 2
    return math.sqrt(max((w + p) * (h + p), 0.0))


def _change(a: float, b: float) -> float:
    return max(a / b, b / a)


def penalty_terms(w: float, h: float, prev: BBox) -> tuple[float, float]:
    """The aspect-ratio and scale change factors (both >= 1)."""
    ratio = _change(h / w, prev.h / prev.w)
    scale = _change(scale_term(w, h), scale_term(prev.w, prev.h))
    return ratio, scale


def penalty(row, state: TrackerState, eta: float | None = None) -> float:
    """exp(eta * ratio_change * scale_change); zero for a candidate without area."""
    eta = state.hyper.eta if eta is None else eta
    w = row[2] - row[0]
    h = row[3] - row[1]
    if w <= 0 or h <= 0:
        return 0.0
    ratio, scale = penalty_terms(w, h, state.box)
    return math.exp(eta * ratio * scale)


def variation(row, prev: BBox) -> float:
    cx = (row[0] + row[2]) / 2
    cy = (row[1] + row[3]) / 2
    w = row[2] - row[0]
    h = row[3] - row[1]
    return abs(cx - prev.cx) + abs(cy - prev.cy) + abs(w - prev.w) + abs(h - prev.h)


def motion_rank(corners: CornerSet, state: TrackerState) -> list[int]:
    """Row indices ordered from largest to smallest change; ties by row index."""
    if len(corners) == 0:
        raise ValueError("motion_rank needs at least one candidate")
    v = [variation(r, state.box) for r in corners.rows]
    return sorted(range(len(v)), key=lambda i: (-v[i], i))


def hanning_ramp(m: int) -> np.ndarray:
    """Rising half of a Hanning window sampled at u = 1..m; ends at 1."""
    u = np.arange(1, m + 1)
    return 0.5 * (1.0 - np.cos(np.pi * u / m))


def window_blend(penalized: Sequence[float], order: Sequence[int], gamma: float) -> np.ndarray:
    """Final score per row: rank u of the motion order gets the u-th ramp value."""
    if not 0 <= gamma <= 1:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    s_pen = np.asarray(penalized, dtype=np.float64)
    order = np.asarray(order, dtype=np.intp)
    if sorted(order.tolist()) != list(range(len(s_pen))):
        raise ValueError("order must be a permutation of the row indices")
    ramp = hanning_ramp(len(s_pen))
    final = np.empty_like(s_pen)
    final[order] = s_pen[order] * (1.0 - gamma) + ramp * gamma
    return final


def select_and_smooth(corners: CornerSet, state: TrackerState) -> tuple[BBox, TrackerState]:
    """Pick the best-scoring box; move the centre there and ease the size toward it.

    Rows without positive width and height are never picked. If no row has a
    positive score the previous box is kept.
    """
    if len(corners) == 0:
        raise ValueError("select_and_smooth needs at least one candidate")
    rows = corners.rows
    eligible = (rows[:, 2] > rows[:, 0]) & (rows[:, 3] > rows[:, 1]) & (rows[:, 4] > 0)
    if not eligible.any():
        return state.box, state
    scores = np.where(eligible, rows[:, 4], -np.inf)
    best = rows[int(np.argmax(scores))]
    lr = state.hyper.lr
    prev = state.box
    w = (1 - lr) * prev.w + lr * (best[2] - best[0])
    h = (1 - lr) * prev.h + lr * (best[3] - best[1])
    cx = (best[0] + best[2]) / 2
    cy = (best[1] + best[3]) / 2
    box = BBox.from_center(cx, cy, w, h)
    return box, replace(state, box=box)
