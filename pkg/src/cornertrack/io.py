"""Sequence directories, box files, and frame images."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .cropping import BBox
from .tensor import Tensor

GROUNDTRUTH = "groundtruth_rect.txt"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
_SPLIT = re.compile(r"[,\t ]+")


class SequenceError(ValueError):
    """Raised for unreadable or malformed sequence directories."""


def load_frame(path: str | Path) -> Tensor:
    """8-bit RGB image as a (1, 3, H, W) tensor scaled to [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Tensor._wrap(arr.transpose(2, 0, 1)[None].copy())


def frame_to_uint8(frame: Tensor) -> np.ndarray:
    rgb = frame.data[0]
    if rgb.shape[0] == 1:
        rgb = np.repeat(rgb, 3, axis=0)
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_frame(path: str | Path, frame: Tensor) -> None:
    Image.fromarray(frame_to_uint8(frame), mode="RGB").save(path, format="PNG")


def save_overlay(path: str | Path, frame: Tensor, boxes: Sequence[BBox],
                 colors: Sequence[tuple[int, int, int]] = ((255, 255, 0), (0, 255, 255))) -> None:
    im = Image.fromarray(frame_to_uint8(frame), mode="RGB")
    draw = ImageDraw.Draw(im)
    for box, color in zip(boxes, colors):
        draw.rectangle([round(box.x_tl), round(box.y_tl), round(box.x_br) - 1, round(box.y_br) - 1],
                       outline=color, width=1)
    im.save(path, format="PNG")


def parse_box_line(line: str) -> tuple[float, float, float, float]:
    parts = [p for p in _SPLIT.split(line.strip()) if p]
    if len(parts) != 4:
        raise SequenceError(f"expected 4 values per line, got {line!r}")
    x, y, w, h = (float(p) for p in parts)
    return x, y, w, h


def read_boxes(path: str | Path) -> list[tuple[float, float, float, float]]:
    """x,y,w,h rows; commas, tabs or spaces separate values."""
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rows.append(parse_box_line(line))
    return rows


def format_box(box: BBox) -> str:
    x, y, w, h = box.xywh()
    return f"{x:.4f},{y:.4f},{w:.4f},{h:.4f}"


def write_boxes(path: str | Path, boxes: Iterable[BBox]) -> None:
    Path(path).write_text("".join(format_box(b) + "\n" for b in boxes))


@dataclass(frozen=True)
class SequenceDir:
    name: str
    frame_paths: tuple[Path, ...]
    groundtruth: tuple[tuple[float, float, float, float], ...]

    def __len__(self) -> int:
        return len(self.frame_paths)

    def frame(self, i: int) -> Tensor:
        return load_frame(self.frame_paths[i])

    def gt_box(self, i: int) -> BBox:
        return BBox.from_xywh(*self.groundtruth[i])


def _frame_key(p: Path):
    digits = re.findall(r"\d+", p.stem)
    return (int(digits[-1]) if digits else -1, p.name)


def list_frames(directory: Path) -> list[Path]:
    img_dir = directory / "img" if (directory / "img").is_dir() else directory
    frames = [p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()]
    return sorted(frames, key=_frame_key)


def load_sequence(directory: str | Path) -> SequenceDir:
    d = Path(directory)
    if not d.is_dir():
        raise SequenceError(f"{d} is not a directory")
    gt_path = d / GROUNDTRUTH
    if not gt_path.is_file():
        raise SequenceError(f"{d}: missing {GROUNDTRUTH}")
    gt = read_boxes(gt_path)
    if not gt:
        raise SequenceError(f"{gt_path} is empty")
    frames = list_frames(d)
    if not frames:
        raise SequenceError(f"{d}: no image frames")
    return SequenceDir(d.name, tuple(frames), tuple(gt))
