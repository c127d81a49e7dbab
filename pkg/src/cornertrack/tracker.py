"""Per-frame tracking pipeline and its init/track entry points.

``init`` crops the four boundary templates from the first frame and caches
their adjusted features for every level. ``track`` then runs, per frame::

    search crop -> features -> correlation (x3 levels) -> corner heads
    -> decode -> fuse -> penalty / motion rank / window -> select + smooth
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from .config import Config
from .correlation import SIDES, depthwise_correlate_array
from .cropping import BBox, InputError, crop_boundary_templates, crop_search_region
from .decoding import CornerSet, HeatmapBundle, decode_level, to_patch_coords
from .extractors import LEVELS, FeatureExtractor, OracleExtractor, ToyConvExtractor, oracle_model_params
from .head import (BOTTOM_RIGHT, TOP_LEFT, LevelParams, ModelParams, corner_head, init_model_params,
                   load_params)
from .selection import (TrackerState, fuse_levels, motion_rank, penalty, select_and_smooth,
                        window_blend)
from .tensor import Tensor, conv2d_array, sigmoid_array

MIN_BOX_SIDE = 1.0


@dataclass(frozen=True)
class TrackerModel:
    extractor: Any
    params: ModelParams
    config: Config


def build_model(config: Config) -> TrackerModel:
    """Extractor and parameters named by ``config.extractor``."""
    if config.extractor == "oracle":
        ext: Any = OracleExtractor(tolerance=config.oracle_tolerance, stride=config.stride)
        params = oracle_model_params()
    else:
        ext = ToyConvExtractor(seed=config.seed)
        if config.extractor == "file":
            params = load_params(config.params_path)
        else:
            params = init_model_params(ext.channels, config.head_width, config.seed)
    return TrackerModel(ext, params, config)


def _adjust(x: np.ndarray, w: Tensor, b: Tensor) -> np.ndarray:
    return np.maximum(conv2d_array(x, w.data, b.data), 0.0)


def template_features(extractor: FeatureExtractor, params: ModelParams, templates) -> list[dict[str, np.ndarray]]:
    """Adjusted template features: one dict (side -> array) per level."""
    raw = {side: extractor.extract_template(z, side) for side, z in templates.by_side().items()}
    out = []
    for a, lp in enumerate(params.levels):
        out.append({side: _adjust(raw[side][a].data, lp.adjust_template_w, lp.adjust_template_b)
                    for side in SIDES})
    return out


def level_bundle(level: int, stride: int, lp: LevelParams, tmpl: dict[str, np.ndarray],
                 search_feat: Tensor) -> HeatmapBundle:
    x = _adjust(search_feat.data, lp.adjust_search_w, lp.adjust_search_b)
    maps = {side: Tensor._wrap(depthwise_correlate_array(tmpl[side], x)) for side in SIDES}
    tl_logit, tl_off = _head(maps["t"], maps["l"], lp, TOP_LEFT)
    br_logit, br_off = _head(maps["b"], maps["r"], lp, BOTTOM_RIGHT)
    return HeatmapBundle(level, stride,
                         Tensor._wrap(sigmoid_array(tl_logit.data)),
                         Tensor._wrap(sigmoid_array(br_logit.data)),
                         tl_off, br_off)


def _head(f_a: Tensor, f_b: Tensor, lp: LevelParams, which: str):
    params = lp.top_left if which == TOP_LEFT else lp.bottom_right
    return corner_head(f_a, f_b, params, which)


def init(frame: Tensor, box: BBox, config: Config | None = None,
         model: TrackerModel | None = None) -> TrackerState:
    """Cache template features of the (clipped) initial box."""
    config = config or (model.config if model else Config())
    model = model or build_model(config)
    fh, fw = frame.shape[2:]
    box = box.clip(fw, fh)
    if isinstance(model.extractor, OracleExtractor):
        model.extractor.fit_appearance(frame, box)
    templates = crop_boundary_templates(frame, box, config.t_wh, config.template_size)
    feats = template_features(model.extractor, model.params, templates)
    return TrackerState(box=box, hyper=config.hyper(), template_features=feats,
                        mapping=None, frame_size=(fw, fh), model=model)


def score_candidates(corners: CornerSet, state: TrackerState) -> CornerSet:
    """Penalised, window-blended scores; candidates without raw score stay at 0."""
    raw = corners.scores
    pen = np.array([penalty(r, state) * r[4] for r in corners.rows])
    final = window_blend(pen, motion_rank(corners, state), state.hyper.gamma)
    return corners.with_scores(np.where(raw > 0, final, 0.0))


def candidates(state: TrackerState, frame: Tensor) -> tuple[CornerSet, Any]:
    """Fused frame-space candidate set for ``frame`` and the crop mapping used."""
    model: TrackerModel = state.model
    cfg = model.config
    patch, mapping = crop_search_region(frame, state.box, cfg.search_size, cfg.template_size)
    search = model.extractor.extract_search(patch)
    sets = []
    for a, level in enumerate(LEVELS):
        stride = model.extractor.strides[a]
        tmpl = state.template_features[a]
        bundle = level_bundle(level, stride, model.params.levels[a], tmpl, search[a])
        kt = tmpl["t"].shape[2]
        corners = decode_level(bundle, cfg.top_n, cfg.nms_window)
        sets.append(to_patch_coords(corners, stride, origin=(kt - 1) / 2))
    return fuse_levels(sets, mapping), mapping


def _constrain(box: BBox, frame_size: tuple[int, int]) -> BBox:
    fw, fh = frame_size
    w = min(max(box.w, MIN_BOX_SIDE), fw)
    h = min(max(box.h, MIN_BOX_SIDE), fh)
    cx = min(max(box.cx, 0.0), float(fw))
    cy = min(max(box.cy, 0.0), float(fh))
    return BBox.from_center(cx, cy, w, h)


def track(state: TrackerState, frame: Tensor) -> tuple[BBox, TrackerState]:
    if state.model is None or state.template_features is None:
        raise InputError("track called on an uninitialised state")
    fused, mapping = candidates(state, frame)
    scored = score_candidates(fused, state)
    box, new_state = select_and_smooth(scored, replace(state, mapping=mapping))
    box = _constrain(box, (frame.shape[3], frame.shape[2]))
    return box, replace(new_state, box=box)


class CornerTracker:
    """Stateful wrapper used by the benchmark runner."""

    def __init__(self, config: Config | None = None, model: TrackerModel | None = None):
        self.config = config or (model.config if model else Config())
        self.model = model
        self.state: TrackerState | None = None

    def init(self, frame: Tensor, box: BBox) -> None:
        model = self.model or build_model(self.config)
        self.state = init(frame, box, self.config, model)

    def update(self, frame: Tensor) -> BBox:
        if self.state is None:
            raise InputError("init must be called before update")
        box, self.state = track(self.state, frame)
        return box
