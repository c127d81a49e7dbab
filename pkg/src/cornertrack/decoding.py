"""Turn corner heatmaps and offset maps into ranked corner pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import ContractError
from .tensor import ShapeError, Tensor, window_max_array

HEATMAP, PATCH, FRAME = "heatmap", "patch", "frame"
DEFAULT_TOP_N = 15
DEFAULT_NMS_WINDOW = 3


@dataclass(frozen=True)
class HeatmapBundle:
    """Post-sigmoid heatmaps and offset maps of one level (batch item 0)."""

    level: int
    stride: int
    tl_heatmap: Tensor
    br_heatmap: Tensor
    tl_offsets: Tensor
    br_offsets: Tensor

    def __post_init__(self):
        hw = self.tl_heatmap.shape[2:]
        for name in ("br_heatmap", "tl_offsets", "br_offsets"):
            if getattr(self, name).shape[2:] != hw:
                raise ShapeError(f"{name} spatial extents differ from tl_heatmap {hw}")
        for name in ("tl_offsets", "br_offsets"):
            if getattr(self, name).shape[1] != 2:
                raise ShapeError(f"{name} must have 2 channels")
        for name in ("tl_heatmap", "br_heatmap"):
            d = getattr(self, name).data
            if d.min() < 0 or d.max() > 1:
                raise ValueError(f"{name} values must lie in [0, 1]")


@dataclass(frozen=True)
class CornerSet:
    """Rows of (x_tl, y_tl, x_br, y_br, score) in one coordinate space."""

    rows: np.ndarray
    space: str = HEATMAP

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64).reshape(-1, 5)
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        if self.space not in (HEATMAP, PATCH, FRAME):
            raise ValueError(f"unknown coordinate space {self.space!r}")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def scores(self) -> np.ndarray:
        return self.rows[:, 4]

    def with_scores(self, scores) -> "CornerSet":
        rows = self.rows.copy()
        rows[:, 4] = scores
        return CornerSet(rows, self.space)


def heatmap_nms(heatmap: Tensor, window: int = DEFAULT_NMS_WINDOW) -> Tensor:
    """Zero every cell that is not the maximum of its window; plateaus survive."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"NMS window must be odd, got {window}")
    h = heatmap.data
    peaks = window_max_array(h, window)
    return Tensor._wrap(np.where(h == peaks, h, 0.0))


def topk(heatmap: Tensor, n: int) -> list[tuple[int, int, float]]:
    """The ``n`` highest cells of channel 0 as (x, y, score), row-major on ties.

    Returns fewer than ``n`` entries when the grid is smaller than ``n``.
    """
    if n < 1:
        raise ValueError("N must be >= 1")
    grid = heatmap.data[0, 0]
    flat = grid.reshape(-1)
    order = np.argsort(-flat, kind="stable")[:n]
    w = grid.shape[1]
    return [(int(i % w), int(i // w), float(flat[i])) for i in order]


def decode_level(bundle: HeatmapBundle, n: int = DEFAULT_TOP_N,
                 window: int = DEFAULT_NMS_WINDOW) -> CornerSet:
    """Top-n corner pairs of one level in heatmap coordinates.

    The i-th ranked top-left corner is paired with the i-th ranked
    bottom-right corner; pairs that do not form a box keep a zero score.
    """
    tl = topk(heatmap_nms(bundle.tl_heatmap, window), n)
    br = topk(heatmap_nms(bundle.br_heatmap, window), n)
    tl_off = bundle.tl_offsets.data[0]
    br_off = bundle.br_offsets.data[0]
    rows = []
    for (x0, y0, s0), (x1, y1, s1) in zip(tl, br):
        xt = x0 + tl_off[0, y0, x0]
        yt = y0 + tl_off[1, y0, x0]
        xb = x1 + br_off[0, y1, x1]
        yb = y1 + br_off[1, y1, x1]
        score = (s0 + s1) / 2 if (xb > xt and yb > yt) else 0.0
        rows.append((xt, yt, xb, yb, score))
    return CornerSet(np.array(rows, dtype=np.float64).reshape(-1, 5), HEATMAP)


def to_patch_coords(corners: CornerSet, stride: int, origin: float = 0.0) -> CornerSet:
    """Scale heatmap coordinates by the stride.

    ``origin`` is the patch-grid cell that heatmap cell 0 sits on (non-zero
    when correlation with a k x k template shrinks the grid by k - 1).
    """
    if corners.space != HEATMAP:
        raise ContractError(f"expected heatmap coordinates, got {corners.space}")
    rows = corners.rows.copy()
    rows[:, :4] = (rows[:, :4] + origin) * stride
    return CornerSet(rows, PATCH)


def corner_grid_position(m: float, stride: int, origin: float = 0.0) -> tuple[int, float]:
    """Grid cell and sub-cell offset of patch coordinate ``m``."""
    g = m / stride - origin
    cell = int(np.floor(g))
    return cell, g - cell
