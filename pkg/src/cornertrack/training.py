"""Overfitting the heads on a handful of pairs with a frozen toy backbone.

The objective per level is focal loss on both corner heatmaps plus the
weighted smooth-L1 offset loss at the positive cells; levels are summed.
Optimisation is plain SGD with momentum and a fixed step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import NumericError, Tape
from .correlation import SIDES
from .cropping import BBox, TemplateSet, crop_boundary_templates, crop_search_region
from .decoding import CornerSet, HeatmapBundle, corner_grid_position, decode_level, to_patch_coords
from .extractors import LEVELS, ToyConvExtractor
from .head import BOTTOM_RIGHT, TOP_LEFT, ModelParams, corner_head, init_model_params
from .losses import LossWeights, gaussian_radius, render_heatmap
from .synth import SequenceSpec, generate, Lcg64
from .tensor import Tensor, sigmoid_array
from .tracker import level_bundle, template_features

TRAIN_TEMPLATE_SIZE = 63
TRAIN_SEARCH_SIZE = 127


class TrainingError(RuntimeError):
    """Raised when optimisation produces a non-finite loss."""


@dataclass(frozen=True)
class TrainingPair:
    templates: TemplateSet
    search: Tensor
    box: BBox  # ground truth in search-patch pixels


@dataclass(frozen=True)
class CornerTarget:
    cell: tuple[int, int]  # (x, y) heatmap cell
    offset: tuple[float, float]  # (dx, dy) sub-cell remainder


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float]


def synthetic_pairs(count: int, seed: int = 0, template_size: int = TRAIN_TEMPLATE_SIZE,
                    search_size: int = TRAIN_SEARCH_SIZE, t_wh: float = 0.5) -> list[TrainingPair]:
    """Pairs cut from short synthetic sequences with varied size and motion."""
    rng = Lcg64(seed)
    pairs = []
    for i in range(count):
        u = [rng.uniform() for _ in range(5)]
        w, h = 24 + 24 * u[0], 24 + 24 * u[1]
        spec = SequenceSpec(length=2, init_box=(140.0, 100.0, round(w), round(h)),
                            velocity=(8 * u[2] - 4, 8 * u[3] - 4), seed=seed + i)
        seq = generate(spec)
        templates = crop_boundary_templates(seq.frames[0], seq.boxes[0], t_wh, template_size)
        patch, mapping = crop_search_region(seq.frames[1], seq.boxes[0], search_size, template_size)
        pairs.append(TrainingPair(templates, patch, mapping.box_to_patch(seq.boxes[1])))
    return pairs


def corner_targets(box: BBox, stride: int, origin: float) -> tuple[CornerTarget, CornerTarget]:
    out = []
    for x, y in ((box.x_tl, box.y_tl), (box.x_br, box.y_br)):
        cx, dx = corner_grid_position(x, stride, origin)
        cy, dy = corner_grid_position(y, stride, origin)
        out.append(CornerTarget((cx, cy), (dx, dy)))
    return out[0], out[1]


class _LevelData:
    """Frozen backbone features and targets of one level for a batch of pairs."""

    def __init__(self, templates: dict[str, np.ndarray], search: np.ndarray, stride: int,
                 targets, grid: tuple[int, int], weights: LossWeights):
        self.templates = templates
        self.search = search
        self.stride = stride
        gh, gw = grid
        self.heatmaps = {}
        self.index = {}
        self.offsets = {}
        for branch, which in ((0, TOP_LEFT), (1, BOTTOM_RIGHT)):
            maps, idx, offs = [], [], []
            for b, (tl, br, box) in enumerate(targets):
                t = (tl, br)[branch]
                x, y = t.cell
                if not (0 <= x < gw and 0 <= y < gh):
                    raise ValueError(f"pair {b}: corner cell {t.cell} outside the {gw}x{gh} heatmap")
                r = gaussian_radius(box.w / stride, box.h / stride, weights.radius_iou)
                maps.append(render_heatmap(gh, gw, (x, y), r).data)
                idx += [(b, 0, y, x), (b, 1, y, x)]
                offs += list(t.offset)
            self.heatmaps[which] = np.concatenate(maps, axis=0)
            self.index[which] = idx
            self.offsets[which] = np.array(offs)


def _prepare(pairs, extractor) -> list[_LevelData]:
    raw_t = [{s: extractor.extract_template(p.templates.by_side()[s], s) for s in SIDES} for p in pairs]
    raw_s = [extractor.extract_search(p.search) for p in pairs]
    data = []
    for a in range(len(LEVELS)):
        stride = extractor.strides[a]
        tmpl = {s: np.concatenate([rt[s][a].data for rt in raw_t], axis=0) for s in SIDES}
        search = np.concatenate([rs[a].data for rs in raw_s], axis=0)
        kt = tmpl["t"].shape[2]
        grid = (search.shape[2] - kt + 1, search.shape[3] - tmpl["t"].shape[3] + 1)
        targets = [(*corner_targets(p.box, stride, (kt - 1) / 2), p.box) for p in pairs]
        data.append(_LevelData(tmpl, search, stride, targets, grid, LossWeights()))
    return data


def _forward(tape: Tape, params: ModelParams, data: list[_LevelData], weights: LossWeights, k: int):
    terms = []
    for lp, d in zip(params.levels, data):
        x = tape.relu(tape.conv2d(tape.constant(d.search), lp.adjust_search_w, lp.adjust_search_b))
        maps = {}
        for side in SIDES:
            z = tape.relu(tape.conv2d(tape.constant(d.templates[side]), lp.adjust_template_w,
                                      lp.adjust_template_b))
            maps[side] = tape.depthwise_correlate(z, x)
        for which, (a, b), hp in ((TOP_LEFT, ("t", "l"), lp.top_left),
                                  (BOTTOM_RIGHT, ("b", "r"), lp.bottom_right)):
            logits, offsets = corner_head(maps[a], maps[b], hp, which, tape=tape)
            prob = tape.sigmoid(logits)
            terms.append(tape.focal_loss(prob, d.heatmaps[which], weights.alpha, weights.beta, k))
            picked = tape.gather(offsets, d.index[which])
            terms.append(tape.scale(tape.smooth_l1(picked, d.offsets[which], k), weights.lam))
    return tape.add_scalars(*terms)


def overfit_train(pairs: list[TrainingPair], steps: int, step_size: float,
                  extractor: ToyConvExtractor | None = None, params: ModelParams | None = None,
                  momentum: float = 0.9, weights: LossWeights = LossWeights(),
                  head_width: int = 16, seed: int = 0, log=None) -> TrainResult:
    """Fit adjustment convs and corner heads to ``pairs``; the backbone stays frozen.

    The loss trace has ``steps + 1`` entries: the loss before each update and
    the loss of the final parameters.
    """
    if not pairs:
        raise ValueError("overfit_train needs at least one pair")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    extractor = extractor or ToyConvExtractor(seed=seed)
    params = params or init_model_params(extractor.channels, head_width, seed)
    data = _prepare(pairs, extractor)
    k = len(pairs)
    arrays = [t.data.copy() for t in params.tensors()]
    velocity = [np.zeros_like(a) for a in arrays]
    losses: list[float] = []
    for step in range(steps + 1):
        current = ModelParams.from_tensors([Tensor._wrap(a) for a in arrays])
        tape = Tape()
        nodes = [tape.param(t) for t in current.tensors()]
        loss = _forward(tape, current, data, weights, k)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {step}")
        losses.append(value)
        if log is not None:
            log(step, value)
        if step == steps:
            break
        grads = tape.backward(loss)
        for i, node in enumerate(nodes):
            g = grads[node].data
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient at step {step}")
            velocity[i] = momentum * velocity[i] - step_size * g
            arrays[i] = arrays[i] + velocity[i]
    final = params if steps == 0 else ModelParams.from_tensors([Tensor._wrap(a) for a in arrays])
    return TrainResult(final, losses)


def decode_pair(pair: TrainingPair, params: ModelParams, extractor, n: int = 1) -> CornerSet:
    """Top-``n`` boxes per level for one pair, in search-patch pixels."""
    feats = template_features(extractor, params, pair.templates)
    search = extractor.extract_search(pair.search)
    sets = []
    for a, level in enumerate(LEVELS):
        stride = extractor.strides[a]
        bundle: HeatmapBundle = level_bundle(level, stride, params.levels[a], feats[a], search[a])
        kt = feats[a]["t"].shape[2]
        sets.append(to_patch_coords(decode_level(bundle, n), stride, (kt - 1) / 2))
    rows = np.concatenate([s.rows for s in sets], axis=0)
    return CornerSet(rows, sets[0].space)


def best_box(corners: CornerSet) -> np.ndarray:
    return corners.rows[int(np.argmax(corners.scores))]
