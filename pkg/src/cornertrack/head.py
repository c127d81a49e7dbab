"""Corner heads built around directional pooling, and their parameter files.

A head takes the two boundary correlation maps of one corner type. Each map
goes through a 3x3 conv + ReLU and is pooled in its scan direction; the sum
of the pooled maps passes a 3x3 conv, is added to 1x1 projection shortcuts of
both raw inputs, and is rectified. Two branches (3x3 conv + ReLU + 1x1 conv)
then emit heatmap logits and offsets.

Parameter file layout (little-endian)::

    magic   4 bytes  b"CTRK"
    version uint32   1
    count   uint32   number of tensors
    shapes  count x 4 x uint32
    data    float64 values of every tensor in order, row-major

Tensor order is level 3, 4, 5; within a level: template adjust weight/bias,
search adjust weight/bias, then the top-left head and the bottom-right head,
each in :data:`HEAD_FIELDS` order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape
from .tensor import ShapeError, Tensor

TOP_LEFT = "top_left"
BOTTOM_RIGHT = "bottom_right"

HEAD_FIELDS = (
    "pre_a_w", "pre_a_b", "pre_b_w", "pre_b_b",
    "post_w", "post_b",
    "short_a_w", "short_a_b", "short_b_w", "short_b_b",
    "hm_w", "hm_b", "hm_out_w", "hm_out_b",
    "off_w", "off_b", "off_out_w", "off_out_b",
)

MAGIC = b"CTRK"
VERSION = 1


@dataclass(frozen=True)
class CornerHeadParams:
    pre_a_w: Tensor
    pre_a_b: Tensor
    pre_b_w: Tensor
    pre_b_b: Tensor
    post_w: Tensor
    post_b: Tensor
    short_a_w: Tensor
    short_a_b: Tensor
    short_b_w: Tensor
    short_b_b: Tensor
    hm_w: Tensor
    hm_b: Tensor
    hm_out_w: Tensor
    hm_out_b: Tensor
    off_w: Tensor
    off_b: Tensor
    off_out_w: Tensor
    off_out_b: Tensor

    def __post_init__(self):
        width, in_ch = self.pre_a_w.shape[:2]
        expect = {
            "pre_a_w": (width, in_ch, 3, 3), "pre_b_w": (width, in_ch, 3, 3),
            "post_w": (width, width, 3, 3),
            "short_a_w": (width, in_ch, 1, 1), "short_b_w": (width, in_ch, 1, 1),
            "hm_w": (width, width, 3, 3), "hm_out_w": (1, width, 1, 1),
            "off_w": (width, width, 3, 3), "off_out_w": (2, width, 1, 1),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"{name}: expected {shape}, got {got}")
            bias = getattr(self, name[:-1] + "b")
            if bias.shape != (1, 1, 1, shape[0]):
                raise ShapeError(f"{name[:-1]}b: expected (1, 1, 1, {shape[0]}), got {bias.shape}")

    @property
    def in_channels(self) -> int:
        return self.pre_a_w.shape[1]

    @property
    def width(self) -> int:
        return self.pre_a_w.shape[0]

    def tensors(self) -> list[Tensor]:
        return [getattr(self, f) for f in HEAD_FIELDS]

    @classmethod
    def from_tensors(cls, tensors) -> "CornerHeadParams":
        return cls(**dict(zip(HEAD_FIELDS, tensors)))


def _bias(values) -> Tensor:
    v = np.asarray(values, dtype=np.float64).reshape(1, 1, 1, -1)
    return Tensor._wrap(v.copy())


def init_head_params(in_channels: int, width: int, rng: np.random.Generator,
                     heatmap_prior: float = -2.19) -> CornerHeadParams:
    """He-style random initialisation; the heatmap bias starts at a low prior."""

    def conv(o, i, k):
        std = np.sqrt(2.0 / (i * k * k))
        return Tensor._wrap(rng.normal(0.0, std, size=(o, i, k, k)))

    return CornerHeadParams(
        pre_a_w=conv(width, in_channels, 3), pre_a_b=_bias(np.zeros(width)),
        pre_b_w=conv(width, in_channels, 3), pre_b_b=_bias(np.zeros(width)),
        post_w=conv(width, width, 3), post_b=_bias(np.zeros(width)),
        short_a_w=conv(width, in_channels, 1), short_a_b=_bias(np.zeros(width)),
        short_b_w=conv(width, in_channels, 1), short_b_b=_bias(np.zeros(width)),
        hm_w=conv(width, width, 3), hm_b=_bias(np.zeros(width)),
        hm_out_w=Tensor._wrap(rng.normal(0.0, 0.01, size=(1, width, 1, 1))),
        hm_out_b=_bias([heatmap_prior]),
        off_w=conv(width, width, 3), off_b=_bias(np.zeros(width)),
        off_out_w=Tensor._wrap(rng.normal(0.0, 0.01, size=(2, width, 1, 1))),
        off_out_b=_bias(np.zeros(2)),
    )


def _select_kernel(out_ch: int, in_ch: int, k: int, routes: dict[int, tuple[int, float]]) -> Tensor:
    """Kernel whose centre tap copies input channel ``src`` (times ``gain``) to output ``dst``."""
    w = np.zeros((out_ch, in_ch, k, k))
    c = k // 2
    for dst, (src, gain) in routes.items():
        w[dst, src, c, c] = gain
    return Tensor._wrap(w)


def identity_head_params(channels: int = 1) -> CornerHeadParams:
    """Every conv is an identity map; offsets repeat channel 0."""
    eye3 = _select_kernel(channels, channels, 3, {i: (i, 1.0) for i in range(channels)})
    eye1 = _select_kernel(channels, channels, 1, {i: (i, 1.0) for i in range(channels)})
    zero = _bias(np.zeros(channels))
    return CornerHeadParams(
        pre_a_w=eye3, pre_a_b=zero, pre_b_w=eye3, pre_b_b=zero,
        post_w=eye3, post_b=zero,
        short_a_w=eye1, short_a_b=zero, short_b_w=eye1, short_b_b=zero,
        hm_w=eye3, hm_b=zero,
        hm_out_w=_select_kernel(1, channels, 1, {0: (0, 1.0)}), hm_out_b=_bias([0.0]),
        off_w=eye3, off_b=zero,
        off_out_w=_select_kernel(2, channels, 1, {0: (0, 1.0), 1: (0, 1.0)}), off_out_b=_bias([0.0, 0.0]),
    )


def zero_head_params(in_channels: int, width: int) -> CornerHeadParams:
    def z(*shape):
        return Tensor.zeros(shape)

    return CornerHeadParams(
        pre_a_w=z(width, in_channels, 3, 3), pre_a_b=z(1, 1, 1, width),
        pre_b_w=z(width, in_channels, 3, 3), pre_b_b=z(1, 1, 1, width),
        post_w=z(width, width, 3, 3), post_b=z(1, 1, 1, width),
        short_a_w=z(width, in_channels, 1, 1), short_a_b=z(1, 1, 1, width),
        short_b_w=z(width, in_channels, 1, 1), short_b_b=z(1, 1, 1, width),
        hm_w=z(width, width, 3, 3), hm_b=z(1, 1, 1, width),
        hm_out_w=z(1, width, 1, 1), hm_out_b=z(1, 1, 1, 1),
        off_w=z(width, width, 3, 3), off_b=z(1, 1, 1, width),
        off_out_w=z(2, width, 1, 1), off_out_b=z(1, 1, 1, 2),
    )


def routing_head_params(in_channels: int, edge_a: int, frac_a: int, edge_b: int, frac_b: int,
                        gain: float = 4.0, prior: float = -12.0,
                        use_offsets: bool = True) -> CornerHeadParams:
    """Hand-set head for edge-indicator features.

    Channel ``edge_a``/``edge_b`` of the two inputs carry binary boundary
    indicators; ``frac_a``/``frac_b`` carry the sub-cell position of that
    boundary along y (input a) and x (input b). The residual feature holds the
    corner evidence in channel 0 and the x/y fractions in channels 1/2.
    """
    width = 3
    zero = _bias(np.zeros(width))
    off_routes = {0: (1, 1.0), 1: (2, 1.0)} if use_offsets else {}
    return CornerHeadParams(
        pre_a_w=_select_kernel(width, in_channels, 3, {0: (edge_a, 1.0)}), pre_a_b=zero,
        pre_b_w=_select_kernel(width, in_channels, 3, {0: (edge_b, 1.0)}), pre_b_b=zero,
        post_w=_select_kernel(width, width, 3, {0: (0, 1.0)}), post_b=zero,
        short_a_w=_select_kernel(width, in_channels, 1, {0: (edge_a, 1.0), 2: (frac_a, 1.0)}),
        short_a_b=zero,
        short_b_w=_select_kernel(width, in_channels, 1, {0: (edge_b, 1.0), 1: (frac_b, 1.0)}),
        short_b_b=zero,
        hm_w=_select_kernel(width, width, 3, {0: (0, 1.0)}), hm_b=zero,
        hm_out_w=_select_kernel(1, width, 1, {0: (0, gain)}), hm_out_b=_bias([prior]),
        off_w=_select_kernel(width, width, 3, {1: (1, 1.0), 2: (2, 1.0)}), off_b=zero,
        off_out_w=_select_kernel(2, width, 1, off_routes), off_out_b=_bias([0.0, 0.0]),
    )


def corner_head(f_a, f_b, params: CornerHeadParams, which: str, tape: Tape | None = None):
    """Heatmap logits (1 channel) and offsets (2 channels: dx, dy) for one corner type.

    For ``top_left`` the inputs are the top and left correlation maps, pooled
    right-to-left and bottom-to-top. For ``bottom_right`` they are the bottom
    and right maps, pooled left-to-right and top-to-bottom.

    When ``tape`` is given the results are nodes on it (params registered on
    the tape are used as-is); otherwise plain tensors are returned.
    """
    if which == TOP_LEFT:
        dir_a, dir_b = "suffix_w", "suffix_h"
    elif which == BOTTOM_RIGHT:
        dir_a, dir_b = "prefix_w", "prefix_h"
    else:
        raise ValueError(f"which must be {TOP_LEFT!r} or {BOTTOM_RIGHT!r}, got {which!r}")
    shape_a = f_a.shape
    shape_b = f_b.shape
    if tuple(shape_a) != tuple(shape_b):
        raise ShapeError(f"corner_head: inputs differ, {shape_a} vs {shape_b}")
    if shape_a[1] != params.in_channels:
        raise ShapeError(f"corner_head: params expect {params.in_channels} channels, got {shape_a[1]}")

    t = tape if tape is not None else Tape()
    p = params
    a = t.relu(t.conv2d(f_a, p.pre_a_w, p.pre_a_b, padding=1))
    b = t.relu(t.conv2d(f_b, p.pre_b_w, p.pre_b_b, padding=1))
    pooled = t.add(t.pool(a, dir_a), t.pool(b, dir_b))
    merged = t.conv2d(pooled, p.post_w, p.post_b, padding=1)
    shortcut = t.add(t.conv2d(f_a, p.short_a_w, p.short_a_b), t.conv2d(f_b, p.short_b_w, p.short_b_b))
    feat = t.relu(t.add(merged, shortcut))
    logits = t.conv2d(t.relu(t.conv2d(feat, p.hm_w, p.hm_b, padding=1)), p.hm_out_w, p.hm_out_b)
    offsets = t.conv2d(t.relu(t.conv2d(feat, p.off_w, p.off_b, padding=1)), p.off_out_w, p.off_out_b)
    if tape is not None:
        return logits, offsets
    return logits.value, offsets.value


# --- full model parameters ----------------------------------------------------

@dataclass(frozen=True)
class LevelParams:
    """Adjustment convs for the template and search branches plus both heads."""

    adjust_template_w: Tensor
    adjust_template_b: Tensor
    adjust_search_w: Tensor
    adjust_search_b: Tensor
    top_left: CornerHeadParams
    bottom_right: CornerHeadParams

    def tensors(self) -> list[Tensor]:
        return [self.adjust_template_w, self.adjust_template_b,
                self.adjust_search_w, self.adjust_search_b,
                *self.top_left.tensors(), *self.bottom_right.tensors()]

    @classmethod
    def from_tensors(cls, ts) -> "LevelParams":
        n = len(HEAD_FIELDS)
        return cls(ts[0], ts[1], ts[2], ts[3],
                   CornerHeadParams.from_tensors(ts[4:4 + n]),
                   CornerHeadParams.from_tensors(ts[4 + n:4 + 2 * n]))


TENSORS_PER_LEVEL = 4 + 2 * len(HEAD_FIELDS)


@dataclass(frozen=True)
class ModelParams:
    levels: tuple[LevelParams, LevelParams, LevelParams]

    def tensors(self) -> list[Tensor]:
        return [t for lv in self.levels for t in lv.tensors()]

    @classmethod
    def from_tensors(cls, ts) -> "ModelParams":
        ts = list(ts)
        if len(ts) != 3 * TENSORS_PER_LEVEL:
            raise ValueError(f"expected {3 * TENSORS_PER_LEVEL} tensors, got {len(ts)}")
        k = TENSORS_PER_LEVEL
        return cls(tuple(LevelParams.from_tensors(ts[i * k:(i + 1) * k]) for i in range(3)))  # type: ignore[arg-type]


def init_level_params(feature_channels: int, width: int, rng: np.random.Generator) -> LevelParams:
    def adjust():
        std = np.sqrt(2.0 / feature_channels)
        return (Tensor._wrap(rng.normal(0.0, std, size=(width, feature_channels, 1, 1))),
                _bias(np.zeros(width)))

    tw, tb = adjust()
    sw, sb = adjust()
    return LevelParams(tw, tb, sw, sb, init_head_params(width, width, rng), init_head_params(width, width, rng))


def init_model_params(feature_channels: tuple[int, int, int], width: int, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(tuple(init_level_params(c, width, rng) for c in feature_channels))  # type: ignore[arg-type]


def save_params(path: str | Path, params: ModelParams) -> None:
    tensors = params.tensors()
    header = bytearray(MAGIC)
    header += struct.pack("<II", VERSION, len(tensors))
    for t in tensors:
        header += struct.pack("<4I", *t.shape)
    body = b"".join(t.data.astype("<f8").tobytes() for t in tensors)
    Path(path).write_bytes(bytes(header) + body)


def load_params(path: str | Path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a parameter file (bad magic)")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = 12
    shapes = []
    for _ in range(count):
        shapes.append(struct.unpack_from("<4I", raw, pos))
        pos += 16
    tensors = []
    for shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(shape)
        tensors.append(Tensor._wrap(arr))
        pos += 8 * n
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    return ModelParams.from_tensors(tensors)

