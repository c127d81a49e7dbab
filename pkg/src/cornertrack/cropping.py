"""Boundary template crops, search-region crops, and patch/frame mappings.

All resampling is nearest-neighbour: output pixel ``u`` of a crop with frame
origin ``o`` and scale ``k`` (patch pixels per frame pixel) reads frame pixel
``floor(o + (u + 0.5) / k)``. Samples that fall outside the frame, or outside
the retained boundary strip of a template, take the per-channel frame mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

DEFAULT_TEMPLATE_SIZE = 127
DEFAULT_SEARCH_SIZE = 255


class InputError(ValueError):
    """Raised for degenerate boxes or frames."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in corner form, frame-pixel coordinates."""

    x_tl: float
    y_tl: float
    x_br: float
    y_br: float

    def __post_init__(self):
        if not (self.x_br > self.x_tl and self.y_br > self.y_tl):
            raise InputError(f"invalid box {self}: need x_br > x_tl and y_br > y_tl")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(x, y, x + w, y + h)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    @property
    def w(self) -> float:
        return self.x_br - self.x_tl

    @property
    def h(self) -> float:
        return self.y_br - self.y_tl

    @property
    def cx(self) -> float:
        return (self.x_tl + self.x_br) / 2

    @property
    def cy(self) -> float:
        return (self.y_tl + self.y_br) / 2

    def xywh(self) -> tuple[float, float, float, float]:
        return self.x_tl, self.y_tl, self.w, self.h

    def clip(self, frame_w: float, frame_h: float) -> "BBox":
        x0, y0 = max(self.x_tl, 0.0), max(self.y_tl, 0.0)
        x1, y1 = min(self.x_br, float(frame_w)), min(self.y_br, float(frame_h))
        if x1 <= x0 or y1 <= y0:
            raise InputError(f"box {self} has no area inside a {frame_w}x{frame_h} frame")
        return BBox(x0, y0, x1, y1)


@dataclass(frozen=True)
class CropMapping:
    """Affine map between patch pixels and frame pixels."""

    scale: float
    offset_x: float
    offset_y: float

    def __post_init__(self):
        if not self.scale > 0:
            raise InputError(f"mapping scale must be positive, got {self.scale}")

    def to_frame(self, x: float, y: float) -> tuple[float, float]:
        return x / self.scale + self.offset_x, y / self.scale + self.offset_y

    def to_patch(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.offset_x) * self.scale, (y - self.offset_y) * self.scale

    def box_to_patch(self, box: BBox) -> BBox:
        x0, y0 = self.to_patch(box.x_tl, box.y_tl)
        x1, y1 = self.to_patch(box.x_br, box.y_br)
        return BBox(x0, y0, x1, y1)

    def box_to_frame(self, box: BBox) -> BBox:
        x0, y0 = self.to_frame(box.x_tl, box.y_tl)
        x1, y1 = self.to_frame(box.x_br, box.y_br)
        return BBox(x0, y0, x1, y1)


@dataclass(frozen=True)
class TemplateSet:
    z_t: Tensor
    z_l: Tensor
    z_b: Tensor
    z_r: Tensor

    def __post_init__(self):
        shapes = {z.shape for z in (self.z_t, self.z_l, self.z_b, self.z_r)}
        if len(shapes) != 1:
            raise InputError(f"boundary templates differ in shape: {shapes}")

    def by_side(self) -> dict[str, Tensor]:
        return {"t": self.z_t, "l": self.z_l, "b": self.z_b, "r": self.z_r}


def map_patch_to_frame(x: float, y: float, mapping: CropMapping) -> tuple[float, float]:
    return mapping.to_frame(x, y)


def context_size(w: float, h: float) -> float:
    """Side of the square context around a w x h target."""
    p = (w + h) / 2
    return math.sqrt((w + p) * (h + p))


def pad_value(frame: Tensor) -> np.ndarray:
    """Per-channel frame mean; exact for constant channels (summation would drift)."""
    data = frame.data[0]
    lo = data.min(axis=(1, 2))
    return np.where(lo == data.max(axis=(1, 2)), lo, data.mean(axis=(1, 2)))


def sample_coords(origin: float, scale: float, size: int) -> np.ndarray:
    """Continuous frame coordinate of each output pixel centre."""
    return origin + (np.arange(size) + 0.5) / scale


def _resample(frame: Tensor, mapping: CropMapping, size: int,
              keep: np.ndarray | None = None) -> Tensor:
    data = frame.data[0]
    c, fh, fw = data.shape
    xs = sample_coords(mapping.offset_x, mapping.scale, size)
    ys = sample_coords(mapping.offset_y, mapping.scale, size)
    xi = np.floor(xs).astype(np.intp)
    yi = np.floor(ys).astype(np.intp)
    valid = ((yi >= 0) & (yi < fh))[:, None] & ((xi >= 0) & (xi < fw))[None, :]
    if keep is not None:
        valid &= keep
    patch = data[:, np.clip(yi, 0, fh - 1)][:, :, np.clip(xi, 0, fw - 1)]
    pad = pad_value(frame).reshape(c, 1, 1)
    out = np.where(valid[None], patch, pad)
    return Tensor._wrap(out[None].copy())


def _check_frame(frame: Tensor) -> None:
    if frame.shape[0] != 1:
        raise InputError(f"expected a single frame (batch 1), got batch {frame.shape[0]}")


def strip_bounds(box: BBox, side: str, t_wh: float) -> tuple[float, float, float, float]:
    """(x0, y0, x1, y1) of the boundary strip retained for one template."""
    if side == "t":
        half = t_wh * box.h / 2
        return box.x_tl, box.y_tl - half, box.x_br, box.y_tl + half
    if side == "b":
        half = t_wh * box.h / 2
        return box.x_tl, box.y_br - half, box.x_br, box.y_br + half
    if side == "l":
        half = t_wh * box.w / 2
        return box.x_tl - half, box.y_tl, box.x_tl + half, box.y_br
    if side == "r":
        half = t_wh * box.w / 2
        return box.x_br - half, box.y_tl, box.x_br + half, box.y_br
    raise ValueError(f"unknown side {side!r}")


def template_mapping(box: BBox, template_size: int) -> CropMapping:
    side = context_size(box.w, box.h)
    return CropMapping(template_size / side, box.cx - side / 2, box.cy - side / 2)


def crop_boundary_templates(frame: Tensor, box: BBox, t_wh: float = 0.5,
                            template_size: int = DEFAULT_TEMPLATE_SIZE) -> TemplateSet:
    """Four square crops around ``box``, each keeping only one boundary strip."""
    _check_frame(frame)
    if not 0 < t_wh <= 1:
        raise InputError(f"t_wh must lie in (0, 1], got {t_wh}")
    if template_size < 1:
        raise InputError("template_size must be positive")
    box = box.clip(frame.shape[3], frame.shape[2])
    mapping = template_mapping(box, template_size)
    xs = sample_coords(mapping.offset_x, mapping.scale, template_size)
    ys = sample_coords(mapping.offset_y, mapping.scale, template_size)
    crops = {}
    for side in ("t", "l", "b", "r"):
        x0, y0, x1, y1 = strip_bounds(box, side, t_wh)
        keep = ((ys >= y0) & (ys < y1))[:, None] & ((xs >= x0) & (xs < x1))[None, :]
        crops[side] = _resample(frame, mapping, template_size, keep)
    return TemplateSet(crops["t"], crops["l"], crops["b"], crops["r"])


def search_mapping(box: BBox, search_size: int) -> CropMapping:
    side = 2.0 * context_size(box.w, box.h)
    return CropMapping(search_size / side, box.cx - side / 2, box.cy - side / 2)


def crop_search_region(frame: Tensor, box: BBox, search_size: int = DEFAULT_SEARCH_SIZE,
                       template_size: int = DEFAULT_TEMPLATE_SIZE) -> tuple[Tensor, CropMapping]:
    """Square crop of twice the context size around the previous target centre."""
    _check_frame(frame)
    if frame.shape[2] < 1 or frame.shape[3] < 1:
        raise InputError("empty frame")
    if search_size < template_size:
        raise InputError(f"search_size {search_size} smaller than template size {template_size}")
    mapping = search_mapping(box, search_size)
    return _resample(frame, mapping, search_size), mapping
