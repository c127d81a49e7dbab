import numpy as np
import pytest

from cornertrack.cropping import BBox, InputError
from cornertrack.io import (SequenceError, format_box, load_frame, load_sequence, parse_box_line, read_boxes,
                            save_frame, write_boxes)
from cornertrack.synth import Lcg64, SequenceSpec, expected_width, generate, write_sequence
from cornertrack.tensor import Tensor


class TestLcg:
    def test_documented_recurrence(self):
        rng = Lcg64(1)
        assert rng.next_u64() == (6364136223846793005 + 1442695040888963407) % 2**64

    def test_block_matches_scalar_draws(self):
        a, b = Lcg64(42), Lcg64(42)
        block = a.uniform_block(1000)
        assert np.array_equal(block, [b.uniform() for _ in range(1000)])
        assert a.state == b.state
        assert np.all((block >= 0) & (block < 1))


class TestGenerate:
    def test_static_sequence_is_constant(self):
        seq = generate(SequenceSpec(length=5))
        assert all(np.array_equal(f.data, seq.frames[0].data) for f in seq.frames)
        assert len(set(seq.boxes)) == 1

    def test_velocity_step(self):
        seq = generate(SequenceSpec(length=10, velocity=(2.0, 0.0)))
        assert [b.x_tl for b in seq.boxes] == [140.0 + 2 * k for k in range(10)]

    def test_motion_clipped_at_frame_edge(self):
        seq = generate(SequenceSpec(length=120, velocity=(3.0, 0.0)))
        assert seq.boxes[-1].x_br == 320.0

    def test_geometric_scale(self):
        spec = SequenceSpec(length=51, scale_rate=1.01)
        seq = generate(spec)
        for k in (0, 10, 50):
            assert seq.boxes[k].w == pytest.approx(40.0 * 1.01 ** k, rel=1e-12)
            assert expected_width(spec, k) == pytest.approx(40.0 * 1.01 ** k, rel=1e-12)

    def test_same_seed_bit_identical(self):
        spec = SequenceSpec(length=3, noise=0.1, distractor=True, seed=7)
        a, b = generate(spec), generate(spec)
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a.frames, b.frames))
        c = generate(SequenceSpec(length=3, noise=0.1, distractor=True, seed=8))
        assert not np.array_equal(a.frames[1].data, c.frames[1].data)

    def test_noise_bounded(self):
        clean = generate(SequenceSpec(length=2))
        noisy = generate(SequenceSpec(length=2, noise=0.05, seed=1))
        assert np.max(np.abs(noisy.frames[1].data - clean.frames[1].data)) <= 0.05 + 1e-12

    def test_boxes_stay_inside_and_large_enough(self):
        seq = generate(SequenceSpec(length=80, velocity=(-4, 3), scale_rate=0.95, aspect_rate=1.02))
        for b in seq.boxes:
            assert b.w >= 8 and b.h >= 8
            assert b.x_tl >= 0 and b.y_tl >= 0 and b.x_br <= 320 and b.y_br <= 240

    def test_distractor_drawn(self):
        seq = generate(SequenceSpec(length=2, distractor=True))
        d, t = seq.distractor_boxes[0], seq.boxes[0]
        assert d.x_br <= t.x_tl or d.x_tl >= t.x_br  # side by side, not hidden behind the target
        px = seq.frames[0].data[0, :, int(d.cy), int(d.cx)]
        assert np.allclose(px, seq.spec.distractor_fill)

    @pytest.mark.parametrize("bad", [
        dict(init_box=(0.0, 0.0, 4.0, 40.0)),
        dict(init_box=(300.0, 0.0, 40.0, 40.0)),
        dict(length=0),
        dict(scale_rate=0.0),
        dict(noise=-1.0),
    ])
    def test_invalid_specs(self, bad):
        with pytest.raises(InputError):
            generate(SequenceSpec(**bad))

    def test_spec_from_dict(self):
        spec = SequenceSpec.from_dict({"length": 4, "velocity": [1, 2]})
        assert spec.velocity == (1, 2)
        with pytest.raises(InputError):
            SequenceSpec.from_dict({"speed": 3})


class TestIo:
    def test_box_lines(self):
        assert parse_box_line("1,2,3,4") == (1, 2, 3, 4)
        assert parse_box_line("1\t2\t3\t4") == (1, 2, 3, 4)
        with pytest.raises(SequenceError):
            parse_box_line("1,2,3")
        assert format_box(BBox.from_xywh(1.5, 2, 3, 4)) == "1.5000,2.0000,3.0000,4.0000"

    def test_box_file_round_trip(self, tmp_path):
        boxes = [BBox.from_xywh(1, 2, 3, 4), BBox.from_xywh(5.25, 6, 7, 8)]
        write_boxes(tmp_path / "b.txt", boxes)
        assert read_boxes(tmp_path / "b.txt") == [b.xywh() for b in boxes]

    def test_frame_round_trip_is_8bit(self, tmp_path):
        frame = Tensor(np.random.default_rng(0).uniform(size=(1, 3, 5, 6)))
        save_frame(tmp_path / "f.png", frame)
        back = load_frame(tmp_path / "f.png").data
        assert back.shape == (1, 3, 5, 6)
        assert np.max(np.abs(back - frame.data)) <= 0.5 / 255 + 1e-12

    def test_written_sequence_loads(self, tmp_path):
        seq = generate(SequenceSpec(length=4, velocity=(1.0, 0.0)))
        d = write_sequence(seq, tmp_path / "seq")
        loaded = load_sequence(d)
        assert len(loaded) == 4 and loaded.name == "seq"
        assert loaded.gt_box(3) == seq.boxes[3]
        assert np.max(np.abs(loaded.frame(0).data - seq.frames[0].data)) <= 0.5 / 255

    def test_frames_sorted_numerically(self, tmp_path):
        frame = Tensor.zeros((1, 3, 2, 2))
        for n in (10, 2, 1):
            save_frame(tmp_path / f"{n}.png", frame)
        (tmp_path / "groundtruth_rect.txt").write_text("0,0,1,1\n")
        assert [p.name for p in load_sequence(tmp_path).frame_paths] == ["1.png", "2.png", "10.png"]

    def test_missing_parts(self, tmp_path):
        with pytest.raises(SequenceError):
            load_sequence(tmp_path / "absent")
        with pytest.raises(SequenceError):
            load_sequence(tmp_path)
        (tmp_path / "groundtruth_rect.txt").write_text("0,0,1,1\n")
        with pytest.raises(SequenceError):
            load_sequence(tmp_path)
