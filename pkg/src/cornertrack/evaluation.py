"""One-pass evaluation: success, precision and normalised precision.

Threshold grids follow the usual single-object-tracking convention:
IoU thresholds 0..1 in steps of 0.05 (success counts IoU > t, plus IoU = 1
at t = 1), centre error thresholds 0..50 px (precision counts error <= tau),
and normalised error thresholds 0..0.5 in steps of 0.005.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .cropping import BBox, InputError

SUCCESS_THRESHOLDS = np.arange(21) / 20
PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)
NORM_THRESHOLDS = np.arange(101) / 200
PRECISION_AT = 20


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_br, b.x_br) - max(a.x_tl, b.x_tl)
    ih = min(a.y_br, b.y_br) - max(a.y_tl, b.y_tl)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def center_error(a: BBox, b: BBox) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def normalized_error(pred: BBox, gt: BBox) -> float:
    return math.hypot((pred.cx - gt.cx) / gt.w, (pred.cy - gt.cy) / gt.h)


def success_auc(ious: Sequence[float]) -> tuple[np.ndarray, float]:
    v = np.asarray(ious, dtype=np.float64)
    if v.size == 0:
        raise InputError("success_auc needs at least one frame")
    if np.any((v < 0) | (v > 1)):
        raise InputError("IoU values must lie in [0, 1]")
    t = SUCCESS_THRESHOLDS[:, None]
    # strict '>' everywhere except the last threshold, where perfect overlap counts;
    # otherwise no tracker could reach an AUC of 1
    hits = (v[None, :] > t) | ((t >= 1.0) & (v[None, :] >= 1.0))
    curve = hits.mean(axis=1)
    return curve, float(curve.mean())


def precision(center_errors: Sequence[float]) -> tuple[np.ndarray, float]:
    """Curve over 0..50 px and its value at 20 px."""
    v = np.asarray(center_errors, dtype=np.float64)
    if v.size == 0:
        raise InputError("precision needs at least one frame")
    if np.any(v < 0):
        raise InputError("centre errors must be non-negative")
    curve = (v[None, :] <= PRECISION_THRESHOLDS[:, None]).mean(axis=1)
    return curve, float(curve[PRECISION_AT])


def normalized_precision(norm_errors: Sequence[float]) -> tuple[np.ndarray, float]:
    v = np.asarray(norm_errors, dtype=np.float64)
    if v.size == 0:
        raise InputError("normalized_precision needs at least one frame")
    if np.any(v < 0):
        raise InputError("normalised errors must be non-negative")
    curve = (v[None, :] <= NORM_THRESHOLDS[:, None]).mean(axis=1)
    return curve, float(curve.mean())


@dataclass(frozen=True)
class MetricReport:
    success_curve: np.ndarray
    success_auc: float
    precision_curve: np.ndarray
    precision_at_20: float
    norm_precision_curve: np.ndarray
    norm_precision_auc: float
    fps: float = 0.0
    frames: int = 0
    skipped_frames: int = 0  # degenerate ground truth, left out of normalised precision

    def __post_init__(self):
        check_report(self)


def check_report(r: MetricReport) -> None:
    """Raise if any curve leaves [0, 1] or breaks its monotonic direction."""
    for name in ("success_curve", "precision_curve", "norm_precision_curve"):
        c = getattr(r, name)
        if np.any(c < 0) or np.any(c > 1):
            raise ValueError(f"{name} has values outside [0, 1]")
    if np.any(np.diff(r.success_curve) > 0):
        raise ValueError("success curve must be non-increasing")
    if np.any(np.diff(r.precision_curve) < 0) or np.any(np.diff(r.norm_precision_curve) < 0):
        raise ValueError("precision curves must be non-decreasing")


def _xywh(b) -> tuple[float, float, float, float]:
    if isinstance(b, BBox):
        return b.xywh()
    x, y, w, h = (float(v) for v in b)
    return x, y, w, h


def iou_xywh(a, b) -> float:
    """IoU of two x,y,w,h rows; 0 if either has no area."""
    ax, ay, aw, ah = _xywh(a)
    bx, by, bw, bh = _xywh(b)
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        return 0.0
    return iou(BBox.from_xywh(ax, ay, aw, ah), BBox.from_xywh(bx, by, bw, bh))


def evaluate_boxes(pred: Sequence, gt: Sequence, fps: float = 0.0) -> MetricReport:
    """Metrics for predicted vs ground-truth boxes (BBox or x,y,w,h rows).

    Ground-truth rows without area count as failures for success and are
    left out of normalised precision; ``skipped_frames`` counts them.
    """
    if len(pred) != len(gt):
        raise InputError(f"{len(pred)} predicted boxes for {len(gt)} ground-truth boxes")
    if not len(gt):
        raise InputError("no frames to evaluate")
    p = np.array([_xywh(b) for b in pred])
    g = np.array([_xywh(b) for b in gt])
    s_curve, s_auc = success_auc([iou_xywh(a, b) for a, b in zip(p, g)])
    dx = (p[:, 0] + p[:, 2] / 2) - (g[:, 0] + g[:, 2] / 2)
    dy = (p[:, 1] + p[:, 3] / 2) - (g[:, 1] + g[:, 3] / 2)
    p_curve, p20 = precision(np.hypot(dx, dy))
    ok = (g[:, 2] > 0) & (g[:, 3] > 0)
    if ok.any():
        n_curve, n_auc = normalized_precision(np.hypot(dx[ok] / g[ok, 2], dy[ok] / g[ok, 3]))
    else:
        n_curve, n_auc = np.zeros_like(NORM_THRESHOLDS), 0.0
    return MetricReport(s_curve, s_auc, p_curve, p20, n_curve, n_auc, fps, len(g), int((~ok).sum()))


def aggregate(reports: Sequence[MetricReport]) -> MetricReport:
    """Mean over sequences, in the given order."""
    if not reports:
        raise InputError("no sequence reports to aggregate")

    def mean(name):
        return np.mean([getattr(r, name) for r in reports], axis=0)

    return MetricReport(mean("success_curve"), float(mean("success_auc")),
                        mean("precision_curve"), float(mean("precision_at_20")),
                        mean("norm_precision_curve"), float(mean("norm_precision_auc")),
                        float(mean("fps")), sum(r.frames for r in reports),
                        sum(r.skipped_frames for r in reports))


# --- benchmark runner -------------------------------------------------------

class SequenceLike(Protocol):
    name: str

    def __len__(self) -> int: ...

    def frame(self, i: int): ...

    def gt_box(self, i: int) -> BBox: ...


class Tracker(Protocol):
    def init(self, frame, box: BBox) -> None: ...

    def update(self, frame) -> BBox: ...


@dataclass(frozen=True)
class InMemorySequence:
    name: str
    frames: Sequence
    boxes: Sequence[BBox]

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, i: int):
        return self.frames[i]

    def gt_box(self, i: int) -> BBox:
        return self.boxes[i]


class EchoTracker:
    """Reports the ground truth; a sanity check for the protocol."""

    def __init__(self, sequence):
        self.sequence = sequence
        self.k = 0

    def init(self, frame, box: BBox) -> None:
        self.k = 0

    def update(self, frame) -> BBox:
        self.k += 1
        return self.sequence.gt_box(self.k)


class FrozenTracker:
    """Never moves from the initial box."""

    def __init__(self, sequence=None):
        self.box: BBox | None = None

    def init(self, frame, box: BBox) -> None:
        self.box = box

    def update(self, frame) -> BBox:
        return self.box


@dataclass
class BenchmarkResult:
    sequences: dict[str, MetricReport]
    aggregate: MetricReport
    boxes: dict[str, list[BBox]]
    skipped: dict[str, str] = field(default_factory=dict)


def run_sequence(sequence, tracker: Tracker) -> tuple[list[BBox], float]:
    """Init on frame 1 with its ground truth, track the rest; returns boxes and fps."""
    first = sequence.gt_box(0)
    boxes = [first]
    start = time.perf_counter()
    tracker.init(sequence.frame(0), first)
    for i in range(1, len(sequence)):
        boxes.append(tracker.update(sequence.frame(i)))
    elapsed = time.perf_counter() - start
    return boxes, len(sequence) / elapsed if elapsed > 0 else 0.0


def _gt_rows(seq) -> list[tuple[float, float, float, float]]:
    if hasattr(seq, "groundtruth"):
        return [_xywh(r) for r in seq.groundtruth]
    return [seq.gt_box(i).xywh() for i in range(len(seq))]


def run_benchmark(sequences: Sequence, make_tracker: Callable[[object], Tracker]) -> BenchmarkResult:
    """Evaluate every sequence in order; malformed ones are skipped and reported."""
    if not sequences:
        raise InputError("empty sequence set")
    reports: dict[str, MetricReport] = {}
    boxes: dict[str, list[BBox]] = {}
    skipped: dict[str, str] = {}
    for seq in sequences:
        try:
            gt = _gt_rows(seq)
            if len(gt) != len(seq):
                raise InputError(f"{len(gt)} ground-truth rows for {len(seq)} frames")
            seq.gt_box(0)
        except (InputError, ValueError, IndexError) as exc:
            skipped[seq.name] = str(exc)
            continue
        out, fps = run_sequence(seq, make_tracker(seq))
        boxes[seq.name] = out
        reports[seq.name] = evaluate_boxes(out, gt, fps)
    if not reports:
        raise InputError(f"no usable sequences (skipped: {skipped})")
    return BenchmarkResult(reports, aggregate(list(reports.values())), boxes, skipped)


# --- report files -------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.6f}"


def format_report(r: MetricReport, include_fps: bool = True) -> str:
    lines = [
        f"success_auc = {_fmt(r.success_auc)}",
        f"precision_at_20 = {_fmt(r.precision_at_20)}",
        f"norm_precision_auc = {_fmt(r.norm_precision_auc)}",
        f"frames = {r.frames}",
        f"skipped_frames = {r.skipped_frames}",
    ]
    if include_fps:
        lines.append(f"fps = {r.fps:.2f}")
    for name in ("success_curve", "precision_curve", "norm_precision_curve"):
        lines.append(f"{name} = " + " ".join(_fmt(v) for v in getattr(r, name)))
    return "\n".join(lines) + "\n"


def write_report(path: str | Path, r: MetricReport) -> None:
    Path(path).write_text(format_report(r))


def parse_report(text: str) -> dict[str, object]:
    out: dict[str, object] = {}
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        parts = value.split()
        out[key] = [float(p) for p in parts] if key.endswith("curve") else float(value)
    return out


def write_plot_data(path: str | Path, r: MetricReport) -> None:
    """(threshold, value) rows per curve, one block per metric."""
    blocks = []
    for name, thresholds, curve in (("success", SUCCESS_THRESHOLDS, r.success_curve),
                                    ("precision", PRECISION_THRESHOLDS, r.precision_curve),
                                    ("norm_precision", NORM_THRESHOLDS, r.norm_precision_curve)):
        rows = "\n".join(f"{t:.3f} {_fmt(v)}" for t, v in zip(thresholds, curve))
        blocks.append(f"# {name}\n{rows}\n")
    Path(path).write_text("\n".join(blocks))
