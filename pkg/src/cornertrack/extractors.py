"""Feature extractors for the three backbone levels.

Any object with ``strides``, ``channels``, ``extract_template`` and
``extract_search`` can drive the tracker. Two are provided:

* :class:`ToyConvExtractor`, a small seeded conv stack per level;
* :class:`OracleExtractor`, which knows the target's colour and emits exact
  boundary-indicator maps, so the rest of the pipeline can be exercised
  without a trained backbone.
"""

from __future__ import annotations

import math
from typing import Protocol, Sequence

import numpy as np

from .cropping import BBox
from .head import ModelParams, LevelParams, routing_head_params, _bias
from .tensor import Tensor, conv2d_array

LEVELS = (3, 4, 5)


class FeatureExtractor(Protocol):
    strides: tuple[int, int, int]
    channels: tuple[int, int, int]

    def extract_template(self, image: Tensor, side: str) -> list[Tensor]:
        """Features of one boundary template image, one tensor per level."""

    def extract_search(self, image: Tensor) -> list[Tensor]:
        """Features of a search patch, one tensor per level."""


class ToyConvExtractor:
    """Three stride-2 conv + ReLU layers per level (overall stride 8).

    Level widths default to 16/32/64 channels. Template features are
    centre-cropped to ``template_crop`` cells, as Siamese trackers commonly do
    to keep the correlation kernel on the target.
    """

    def __init__(self, seed: int = 0, widths: Sequence[int] = (16, 32, 64),
                 template_crop: int = 7, in_channels: int = 3):
        rng = np.random.default_rng(seed)
        self.widths = tuple(int(w) for w in widths)
        self.template_crop = template_crop
        self.strides = (8, 8, 8)
        self.channels = self.widths  # type: ignore[assignment]
        self.layers: list[list[tuple[np.ndarray, np.ndarray]]] = []
        for w in self.widths:
            stack = []
            c_in = in_channels
            for _ in range(3):
                std = math.sqrt(2.0 / (c_in * 9))
                stack.append((rng.normal(0.0, std, size=(w, c_in, 3, 3)), np.zeros(w)))
                c_in = w
            self.layers.append(stack)

    def _features(self, image: Tensor) -> list[Tensor]:
        # mean-centre so the zero padding of the convs matches the image average
        x0 = image.data - image.data.mean(axis=(2, 3), keepdims=True)
        out = []
        for stack in self.layers:
            x = x0
            for w, b in stack:
                x = np.maximum(conv2d_array(x, w, b, stride=2, padding=1), 0.0)
            out.append(Tensor._wrap(x))
        return out

    def extract_search(self, image: Tensor) -> list[Tensor]:
        return self._features(image)

    def extract_template(self, image: Tensor, side: str) -> list[Tensor]:
        feats = self._features(image)
        k = self.template_crop
        out = []
        for f in feats:
            h, w = f.shape[2:]
            if k and k < min(h, w):
                y0, x0 = (h - k) // 2, (w - k) // 2
                f = Tensor._wrap(f.data[:, :, y0:y0 + k, x0:x0 + k].copy())
            out.append(f)
        return out


# oracle channel layout: edge indicators then sub-cell boundary positions
EDGE = {"t": 0, "l": 1, "b": 2, "r": 3}
FRAC = {"t": 4, "l": 5, "b": 6, "r": 7}
ORACLE_CHANNELS = 8


class OracleExtractor:
    """Boundary maps computed from a colour-keyed target mask.

    A pixel belongs to the target when every channel is within ``tolerance``
    of the target colour. For each boundary, a grid cell is marked when the
    boundary passes through it; the companion channel stores where inside
    the cell the boundary lies (as a fraction of the stride), so an offset
    head can recover sub-cell positions.

    The target colour is given up front or taken from the first frame with
    :meth:`fit_appearance`.
    """

    def __init__(self, fill: Sequence[float] | None = None, tolerance: float = 0.2, stride: int = 8):
        self.fill = None if fill is None else np.asarray(fill, dtype=np.float64)
        self.tolerance = tolerance
        self.stride = stride
        self.strides = (stride, stride, stride)
        self.channels = (ORACLE_CHANNELS,) * 3

    def fit_appearance(self, frame: Tensor, box: BBox) -> None:
        data = frame.data[0]
        fh, fw = data.shape[1:]
        x0 = int(np.clip(math.floor(box.cx - box.w / 4), 0, fw - 1))
        x1 = int(np.clip(math.ceil(box.cx + box.w / 4), x0 + 1, fw))
        y0 = int(np.clip(math.floor(box.cy - box.h / 4), 0, fh - 1))
        y1 = int(np.clip(math.ceil(box.cy + box.h / 4), y0 + 1, fh))
        self.fill = np.median(data[:, y0:y1, x0:x1].reshape(data.shape[0], -1), axis=1)

    def extract_template(self, image: Tensor, side: str) -> list[Tensor]:
        v = np.zeros((1, ORACLE_CHANNELS, 1, 1))
        v[0, EDGE[side]] = 1.0
        v[0, FRAC[side]] = 1.0
        return [Tensor._wrap(v.copy()) for _ in LEVELS]

    def mask(self, image: Tensor) -> np.ndarray:
        if self.fill is None:
            raise RuntimeError("OracleExtractor needs a target colour; call fit_appearance first")
        diff = np.abs(image.data[0] - self.fill.reshape(-1, 1, 1))
        return np.all(diff <= self.tolerance, axis=0)

    def boundary_maps(self, image: Tensor) -> np.ndarray:
        m = self.mask(image)
        h, w = m.shape
        s = self.stride
        gh, gw = math.ceil(h / s), math.ceil(w / s)
        out = np.zeros((ORACLE_CHANNELS, gh, gw))
        pad = np.pad(m, 1)
        inner = pad[1:-1, 1:-1]
        edges = {
            "t": inner & ~pad[:-2, 1:-1],
            "b": inner & ~pad[2:, 1:-1],
            "l": inner & ~pad[1:-1, :-2],
            "r": inner & ~pad[1:-1, 2:],
        }
        for side, e in edges.items():
            ys, xs = np.nonzero(e)
            if side in ("t", "b"):
                pos = ys + (1 if side == "b" else 0)  # boundary coordinate along y
                across = (xs, xs + 1)
                cell = np.minimum(pos // s, gh - 1)
                frac = pos / s - cell
                for a in across:
                    col = np.minimum(a // s, gw - 1)
                    out[EDGE[side], cell, col] = 1.0
                    out[FRAC[side], cell, col] = frac
            else:
                pos = xs + (1 if side == "r" else 0)
                across = (ys, ys + 1)
                cell = np.minimum(pos // s, gw - 1)
                frac = pos / s - cell
                for a in across:
                    row = np.minimum(a // s, gh - 1)
                    out[EDGE[side], row, cell] = 1.0
                    out[FRAC[side], row, cell] = frac
        return out

    def extract_search(self, image: Tensor) -> list[Tensor]:
        maps = self.boundary_maps(image)[None]
        return [Tensor._wrap(maps.copy()) for _ in LEVELS]


def oracle_model_params(use_offsets: bool = True) -> ModelParams:
    """Identity adjust convs and routing heads matched to :class:`OracleExtractor`."""
    c = ORACLE_CHANNELS
    eye = np.eye(c).reshape(c, c, 1, 1)
    tl = routing_head_params(c, EDGE["t"], FRAC["t"], EDGE["l"], FRAC["l"], use_offsets=use_offsets)
    br = routing_head_params(c, EDGE["b"], FRAC["b"], EDGE["r"], FRAC["r"], use_offsets=use_offsets)
    level = LevelParams(Tensor._wrap(eye.copy()), _bias(np.zeros(c)),
                        Tensor._wrap(eye.copy()), _bias(np.zeros(c)), tl, br)
    return ModelParams((level, level, level))
