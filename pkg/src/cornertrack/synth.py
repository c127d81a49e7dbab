"""Deterministic synthetic sequences: a coloured rectangle drifting over a
plain background, with optional distractor and bounded additive noise.

Randomness comes from a 64-bit linear congruential generator so a sequence
is reproducible from its seed in any language::

    state <- (6364136223846793005 * state + 1442695040888963407) mod 2**64
    uniform = (state >> 11) / 2**53
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cropping import BBox, InputError
from .tensor import Tensor

LCG_MULT = 6364136223846793005
LCG_INC = 1442695040888963407
_MASK = (1 << 64) - 1
MIN_SIDE = 8.0


class Lcg64:
    """Linear congruential generator with block (vectorised) draws."""

    def __init__(self, seed: int):
        self.state = seed & _MASK
        self._coef: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def next_u64(self) -> int:
        self.state = (LCG_MULT * self.state + LCG_INC) & _MASK
        return self.state

    def uniform(self) -> float:
        return (self.next_u64() >> 11) / float(1 << 53)

    def _coefficients(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        # state_k = A_k * state_0 + C_k (mod 2**64), k = 1..n; uint64 arithmetic wraps
        if n not in self._coef:
            with np.errstate(over="ignore"):
                a = np.cumprod(np.full(n, LCG_MULT, dtype=np.uint64), dtype=np.uint64)
                powers = np.concatenate([np.ones(1, dtype=np.uint64), a[:-1]])
                c = np.cumsum(powers, dtype=np.uint64) * np.uint64(LCG_INC)
            self._coef[n] = (a, c)
        return self._coef[n]

    def uniform_block(self, n: int) -> np.ndarray:
        """``n`` consecutive draws, identical to calling :meth:`uniform` n times."""
        if n == 0:
            return np.zeros(0)
        a, c = self._coefficients(n)
        with np.errstate(over="ignore"):
            states = a * np.uint64(self.state) + c
        self.state = int(states[-1])
        return (states >> np.uint64(11)).astype(np.float64) / float(1 << 53)


@dataclass(frozen=True)
class SequenceSpec:
    frame_width: int = 320
    frame_height: int = 240
    length: int = 50
    init_box: tuple[float, float, float, float] = (140.0, 100.0, 40.0, 40.0)  # x, y, w, h
    velocity: tuple[float, float] = (0.0, 0.0)
    scale_rate: float = 1.0
    aspect_rate: float = 1.0
    distractor: bool = False
    noise: float = 0.0
    seed: int = 0
    background: tuple[float, float, float] = (0.15, 0.2, 0.3)
    fill: tuple[float, float, float] = (0.85, 0.35, 0.2)
    distractor_fill: tuple[float, float, float] = (0.3, 0.7, 0.4)

    def validate(self) -> None:
        if self.frame_width < MIN_SIDE or self.frame_height < MIN_SIDE:
            raise InputError("frame must be at least 8x8")
        if self.length < 1:
            raise InputError("length must be >= 1")
        x, y, w, h = self.init_box
        if w < MIN_SIDE or h < MIN_SIDE:
            raise InputError(f"initial box {w}x{h} smaller than {MIN_SIDE}x{MIN_SIDE}")
        if x < 0 or y < 0 or x + w > self.frame_width or y + h > self.frame_height:
            raise InputError("initial box must lie inside the frame")
        if self.scale_rate <= 0 or self.aspect_rate <= 0:
            raise InputError("scale and aspect rates must be positive")
        if self.noise < 0:
            raise InputError("noise amplitude must be non-negative")
        for name in ("background", "fill", "distractor_fill"):
            if len(getattr(self, name)) != 3:
                raise InputError(f"{name} must be an RGB triple")

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown sequence spec keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class SyntheticSequence:
    frames: list[Tensor]
    boxes: list[BBox]
    spec: SequenceSpec
    distractor_boxes: list[BBox] = field(default_factory=list)


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def box_at(spec: SequenceSpec, k: int, velocity=None, start=None) -> BBox:
    """Ground-truth box of frame ``k`` (motion clipped to keep it in frame)."""
    x, y, w0, h0 = spec.init_box if start is None else start
    vx, vy = spec.velocity if velocity is None else velocity
    fw, fh = spec.frame_width, spec.frame_height
    w = _clamp(w0 * (spec.scale_rate * spec.aspect_rate) ** k, MIN_SIDE, fw)
    h = _clamp(h0 * spec.scale_rate ** k, MIN_SIDE, fh)
    cx = _clamp(x + w0 / 2 + vx * k, w / 2, fw - w / 2)
    cy = _clamp(y + h0 / 2 + vy * k, h / 2, fh - h / 2)
    return BBox.from_center(cx, cy, w, h)


def _pixel_mask(box: BBox, fw: int, fh: int) -> np.ndarray:
    xs = np.arange(fw) + 0.5
    ys = np.arange(fh) + 0.5
    return ((ys >= box.y_tl) & (ys < box.y_br))[:, None] & ((xs >= box.x_tl) & (xs < box.x_br))[None, :]


def _distractor_start(spec: SequenceSpec) -> tuple[float, float, float, float]:
    x, y, w, h = spec.init_box
    # half a frame to the side of the target (mirroring would hide a centred target's twin)
    half = spec.frame_width / 2
    dx = x + half if x + half + w <= spec.frame_width else max(x - half, 0.0)
    return dx, y, w, h


def generate(spec: SequenceSpec) -> SyntheticSequence:
    spec.validate()
    fw, fh = spec.frame_width, spec.frame_height
    rng = Lcg64(spec.seed)
    bg = np.asarray(spec.background, dtype=np.float64).reshape(3, 1, 1)
    fill = np.asarray(spec.fill, dtype=np.float64).reshape(3, 1, 1)
    dfill = np.asarray(spec.distractor_fill, dtype=np.float64).reshape(3, 1, 1)
    frames, boxes, dboxes = [], [], []
    dstart = _distractor_start(spec)
    dvel = (-spec.velocity[0] or 1.0, -spec.velocity[1] or 0.5)
    for k in range(spec.length):
        box = box_at(spec, k)
        img = np.broadcast_to(bg, (3, fh, fw)).copy()
        if spec.distractor:
            dbox = box_at(spec, k, velocity=dvel, start=dstart)
            dboxes.append(dbox)
            img = np.where(_pixel_mask(dbox, fw, fh)[None], dfill, img)
        img = np.where(_pixel_mask(box, fw, fh)[None], fill, img)
        if spec.noise > 0:
            noise = rng.uniform_block(3 * fh * fw).reshape(3, fh, fw)
            img = np.clip(img + spec.noise * (2.0 * noise - 1.0), 0.0, 1.0)
        frames.append(Tensor._wrap(img[None].copy()))
        boxes.append(box)
    return SyntheticSequence(frames, boxes, spec, dboxes)


def expected_width(spec: SequenceSpec, k: int) -> float:
    """Unclipped geometric width after ``k`` frames."""
    return spec.init_box[2] * (spec.scale_rate * spec.aspect_rate) ** k


def write_sequence(seq: SyntheticSequence, out_dir: str | Path) -> Path:
    """Persist frames and ground truth in the benchmark directory layout."""
    from .io import save_frame, write_boxes

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        save_frame(out / f"{i:05d}.png", frame)
    write_boxes(out / "groundtruth_rect.txt", seq.boxes)
    (out / "sequence.json").write_text(seq.spec.to_json() + "\n")
    return out

