import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cornertrack.cropping import BBox, CropMapping
from cornertrack.decoding import FRAME, HEATMAP, PATCH, CornerSet
from cornertrack.losses import ContractError
from cornertrack.selection import (TrackerHyper, TrackerState, fuse_levels, hanning_ramp, motion_rank, penalty,
                                   scale_term, select_and_smooth, window_blend)

PREV = BBox.from_xywh(100, 100, 20, 20)


def state(box=PREV, **hyper):
    return TrackerState(box, TrackerHyper(**hyper))


def row_of(box, score=1.0):
    return np.array([box.x_tl, box.y_tl, box.x_br, box.y_br, score])


class TestFuse:
    def test_identity_mapping_concatenates_in_level_order(self):
        sets = [CornerSet(np.array([[i, i, i + 1, i + 1, 0.1 * i]]), PATCH) for i in (3, 4, 5)]
        out = fuse_levels(sets, CropMapping(1.0, 0.0, 0.0))
        assert out.space == FRAME and out.rows[:, 0].tolist() == [3, 4, 5]

    def test_affine_example(self):
        out = fuse_levels([CornerSet(np.array([[4, 6, 8, 10, 0.5]]), PATCH)], CropMapping(0.5, 10, 20))
        assert out.rows[0].tolist() == [18, 32, 26, 40, 0.5]

    def test_mixed_spaces_rejected(self):
        with pytest.raises(ContractError):
            fuse_levels([CornerSet(np.zeros((1, 5)), PATCH), CornerSet(np.zeros((1, 5)), HEATMAP)],
                        CropMapping(1, 0, 0))


class TestPenalty:
    def test_scale_term(self):
        assert scale_term(0, 0) == 0
        assert scale_term(16, 16) == 32
        assert scale_term(10, 30) == scale_term(30, 10)

    def test_identical_box(self):
        assert penalty(row_of(PREV), state(eta=-0.1)) == math.exp(-0.1)

    def test_eta_zero(self):
        assert penalty(row_of(BBox.from_xywh(0, 0, 5, 90)), state(eta=0.0)) == 1.0

    def test_doubling_is_penalised(self):
        doubled = BBox.from_center(PREV.cx, PREV.cy, 40, 40)
        assert penalty(row_of(doubled), state(eta=-0.1)) < math.exp(-0.1)

    def test_zero_area(self):
        assert penalty(np.array([5, 5, 5, 9, 1.0]), state()) == 0.0

    @given(st.floats(0.3, 3.0), st.floats(0.3, 3.0))
    def test_bounded_by_peak(self, fw, fh):
        cand = BBox.from_center(PREV.cx, PREV.cy, PREV.w * fw, PREV.h * fh)
        c = penalty(row_of(cand), state(eta=-0.2))
        assert 0 < c <= math.exp(-0.2)

    def test_decreasing_in_scale_change(self):
        values = [penalty(row_of(BBox.from_center(0, 0, 20 * f, 20 * f)), state(eta=-0.1))
                  for f in (1.0, 1.2, 1.5, 2.0, 3.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_positive_eta_rejected(self):
        with pytest.raises(ValueError):
            TrackerHyper(eta=0.1)


class TestMotionRank:
    def test_hand_variations(self):
        boxes = [BBox.from_xywh(107.5, 100, 20, 20),  # variation 7.5
                 BBox.from_xywh(101, 101, 20, 20),  # 2.0
                 BBox.from_xywh(111, 100, 20, 20)]  # 11.0
        assert motion_rank(CornerSet(np.array([row_of(b) for b in boxes])), state()) == [2, 0, 1]

    def test_identical_ranked_last(self):
        moved = BBox.from_xywh(110, 100, 20, 20)
        assert motion_rank(CornerSet(np.array([row_of(PREV), row_of(moved)])), state()) == [1, 0]

    def test_ties_by_row_index(self):
        rows = np.array([row_of(PREV)] * 3)
        assert motion_rank(CornerSet(rows), state()) == [0, 1, 2]


class TestWindow:
    def test_ramp_values(self):
        ramp = hanning_ramp(45)
        assert ramp[-1] == 1.0
        assert ramp[0] == 0.5 * (1 - math.cos(math.pi / 45))
        assert ramp[0] == pytest.approx(0.001218, abs=5e-7)
        assert np.all(np.diff(ramp) > 0)

    def test_gamma_limits(self):
        pen = np.array([0.9, 0.2, 0.5])
        order = [1, 2, 0]
        assert np.array_equal(window_blend(pen, order, 0.0), pen)
        pure = window_blend(pen, order, 1.0)
        assert np.argmax(pure) == 0  # last in the motion order, so the least-moving row
        assert np.array_equal(pure[order], hanning_ramp(3))

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=45), st.floats(0, 1), st.randoms())
    def test_preserves_count_and_range(self, pen, gamma, rnd):
        order = list(range(len(pen)))
        rnd.shuffle(order)
        out = window_blend(pen, order, gamma)
        assert out.shape == (len(pen),) and np.all((out >= 0) & (out <= 1 + 1e-15))

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            window_blend([0.5, 0.5], [0, 0], 0.3)
        with pytest.raises(ValueError):
            window_blend([0.5], [0], 1.5)


class TestSelectAndSmooth:
    def test_interpolated_size(self):
        picked = BBox.from_center(130, 140, 40, 40)
        box, new_state = select_and_smooth(CornerSet(np.array([row_of(picked, 0.8)]), FRAME), state(lr=0.3))
        assert (box.w, box.h) == pytest.approx((26.0, 26.0)) and (box.cx, box.cy) == (130, 140)
        assert new_state.box == box

    def test_full_update(self):
        picked = BBox.from_xywh(50, 60, 33, 17)
        box, _ = select_and_smooth(CornerSet(np.array([row_of(picked)]), FRAME), state(lr=1.0))
        assert box.xywh() == pytest.approx(picked.xywh())

    def test_tiny_rate_keeps_size(self):
        picked = BBox.from_center(300, 300, 80, 10)
        box, _ = select_and_smooth(CornerSet(np.array([row_of(picked)]), FRAME), state(lr=1e-9))
        assert (box.w, box.h) == pytest.approx((20, 20)) and (box.cx, box.cy) == (300, 300)

    def test_argmax_row(self):
        a, b = BBox.from_xywh(0, 0, 10, 10), BBox.from_xywh(50, 50, 10, 10)
        box, _ = select_and_smooth(CornerSet(np.array([row_of(a, 0.2), row_of(b, 0.6)]), FRAME), state())
        assert (box.cx, box.cy) == (b.cx, b.cy)

    def test_all_zero_keeps_previous(self):
        rows = np.array([row_of(BBox.from_xywh(0, 0, 10, 10), 0.0)])
        box, st_ = select_and_smooth(CornerSet(rows, FRAME), state())
        assert box == PREV and st_.box == PREV

    def test_invalid_rows_never_picked(self):
        rows = np.array([[50, 50, 40, 60, 0.99], row_of(BBox.from_xywh(0, 0, 10, 10), 0.1)])
        box, _ = select_and_smooth(CornerSet(rows, FRAME), state())
        assert box.w > 0 and box.cx == 5
