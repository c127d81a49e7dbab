"""Depth-wise cross-correlation of template features over search features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor

SIDES = ("t", "l", "b", "r")


def depthwise_correlate_array(template: np.ndarray, search: np.ndarray) -> np.ndarray:
    kh, kw = template.shape[2:]
    ho = search.shape[2] - kh + 1
    wo = search.shape[3] - kw + 1
    out = np.zeros(search.shape[:2] + (ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out += template[:, :, i:i + 1, j:j + 1] * search[:, :, i:i + ho, j:j + wo]
    return out


def _check(template: Tensor, search: Tensor) -> None:
    tn, tc, th, tw = template.shape
    sn, sc, sh, sw = search.shape
    if tc != sc:
        raise ShapeError(f"correlation: template has {tc} channels, search has {sc}")
    if tn != sn and tn != 1:
        raise ShapeError(f"correlation: batch {tn} vs {sn}")
    if th > sh or tw > sw:
        raise ShapeError(f"correlation: template {th}x{tw} larger than search {sh}x{sw}")


def depthwise_correlate(template: Tensor, search: Tensor) -> Tensor:
    """Per-channel valid correlation; channel count is preserved.

    A template with batch 1 is shared across every search item.
    """
    _check(template, search)
    return Tensor._wrap(depthwise_correlate_array(template.data, search.data))


@dataclass(frozen=True)
class FeatureLevel:
    """Template and search features of one backbone level."""

    level: int
    stride: int
    templates: dict[str, Tensor]
    search: Tensor

    def __post_init__(self):
        if self.level not in (3, 4, 5):
            raise ValueError(f"level must be 3, 4 or 5, got {self.level}")
        if self.stride <= 0:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if set(self.templates) != set(SIDES):
            raise ValueError(f"templates must be keyed by {SIDES}")
        c = self.search.shape[1]
        for side, t in self.templates.items():
            if t.shape[1] != c:
                raise ShapeError(f"template {side} has {t.shape[1]} channels, search has {c}")


def correlate_level(level: FeatureLevel) -> dict[str, Tensor]:
    """Boundary correlation maps keyed 't', 'l', 'b', 'r'."""
    return {side: depthwise_correlate(level.templates[side], level.search) for side in SIDES}
