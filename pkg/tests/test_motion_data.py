"""MTF I/O, windowing, forward kinematics and the synthetic generator."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reschunk.motion_data import (
    ConfigurationError, MotionDataError, MotionFormatError, MotionSequence, MotionShapeError,
    SkeletonSpec, WindowingConfig, axis_angle_to_matrix, crop_sample, limb_partition,
    load_sequence, planted_groups, save_sequence, slide_windows, split_by_index, synth_dataset,
    synthetic_skeleton, to_positions)


def positions_skeleton(J, D=3):
    return SkeletonSpec([f"j{i}" for i in range(J)], D)


def chain(offset=(100.0, 0.0, 0.0)):
    return SkeletonSpec(["root", "child"], 3, [-1, 0], [[0, 0, 0], list(offset)], "angle_axis")


def write_mtf(path, header, rows):
    path.write_text(json.dumps(header) + "\n" + "".join(r + "\n" for r in rows), encoding="utf-8")


def header_for(J, D=3, **extra):
    return {"name": "s", "fps": 50, "J": J, "D": D, "representation": "positions3d",
            "joint_names": [f"j{i}" for i in range(J)], **extra}


class TestLoadSequence:
    def test_zero_file(self, tmp_path):
        write_mtf(tmp_path / "z.mtf", header_for(2), ["0 0 0 0 0 0"] * 2)
        seq = load_sequence(tmp_path / "z.mtf", positions_skeleton(2))
        assert seq.frames.shape == (2, 6)
        assert not seq.frames.any()

    def test_cmu_joint_count(self, tmp_path):
        write_mtf(tmp_path / "c.mtf", header_for(24), [" ".join(["0.5"] * 72)] * 3)
        assert load_sequence(tmp_path / "c.mtf").frames.shape == (3, 72)

    def test_nan_names_row(self, tmp_path):
        rows = ["1 2 3 4 5 6"] * 4 + ["1 nan 3 4 5 6"]
        write_mtf(tmp_path / "n.mtf", header_for(2), rows)
        with pytest.raises(MotionDataError, match="row 5"):
            load_sequence(tmp_path / "n.mtf")

    def test_bad_row_length(self, tmp_path):
        write_mtf(tmp_path / "b.mtf", header_for(2), ["1 2 3 4 5 6", "1 2 3"])
        with pytest.raises(MotionShapeError, match="row 2"):
            load_sequence(tmp_path / "b.mtf")

    def test_malformed_header(self, tmp_path):
        (tmp_path / "h.mtf").write_text("{not json\n0 0 0\n")
        with pytest.raises(MotionFormatError):
            load_sequence(tmp_path / "h.mtf")

    def test_header_missing_key(self, tmp_path):
        h = header_for(1)
        del h["fps"]
        write_mtf(tmp_path / "m.mtf", h, ["0 0 0"])
        with pytest.raises(MotionFormatError, match="fps"):
            load_sequence(tmp_path / "m.mtf")

    def test_skeleton_mismatch(self, tmp_path):
        write_mtf(tmp_path / "s.mtf", header_for(2), ["0 0 0 0 0 0"])
        with pytest.raises(MotionShapeError):
            load_sequence(tmp_path / "s.mtf", positions_skeleton(3))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=6, max_size=6),
                    min_size=1, max_size=4))
    def test_round_trip_bit_exact(self, tmp_path_factory, rows):
        path = tmp_path_factory.mktemp("rt") / "r.mtf"
        frames = np.array(rows)
        seq = MotionSequence(chain(), 25.0, frames, name="rt", metadata={"action": "walk"})
        save_sequence(seq, path)
        back = load_sequence(path)
        assert back.frames.tobytes() == seq.frames.tobytes()
        assert back.metadata == {"action": "walk"}
        assert back.skeleton.parent_index == [-1, 0]
        np.testing.assert_array_equal(back.skeleton.bone_offsets, seq.skeleton.bone_offsets)


class TestSlideWindows:
    cfg = WindowingConfig(window_seconds=3.0, stride_frames=10)

    def seq(self, n):
        return MotionSequence(positions_skeleton(1), 50.0, np.zeros((n, 3)))

    def test_exact_length(self):
        assert slide_windows(self.seq(150), self.cfg) == [range(0, 150)]

    def test_three_windows(self):
        assert [w.start for w in slide_windows(self.seq(170), self.cfg)] == [0, 10, 20]

    def test_too_short(self):
        assert slide_windows(self.seq(100), self.cfg) == []

    @given(st.integers(1, 400), st.integers(1, 30))
    def test_closure_and_count(self, n, stride):
        cfg = WindowingConfig(window_seconds=1.0, stride_frames=stride)
        wins = slide_windows(self.seq(n), cfg)
        expected = (n - 50) // stride + 1 if n >= 50 else 0
        assert len(wins) == expected
        assert all(w.start >= 0 and w.stop <= n and len(w) == 50 for w in wins)


class TestCropSample:
    def seq(self):
        frames = np.arange(150 * 3, dtype=float).reshape(150, 3)
        return MotionSequence(positions_skeleton(1), 50.0, frames)

    def test_one_second_halves(self):
        s = crop_sample(self.seq(), range(0, 150), WindowingConfig(), np.random.default_rng(0))
        assert s.x0.shape == (50, 3) and s.y0.shape == (50, 3)
        np.testing.assert_array_equal(s.y0[0], s.x0[-1] + 3)

    def test_deterministic(self):
        a = crop_sample(self.seq(), range(0, 150), WindowingConfig(), np.random.default_rng(4))
        b = crop_sample(self.seq(), range(0, 150), WindowingConfig(), np.random.default_rng(4))
        assert a.start_frame == b.start_frame
        np.testing.assert_array_equal(a.x0, b.x0)
        np.testing.assert_array_equal(a.y0, b.y0)

    def test_full_crop_forces_start(self):
        cfg = WindowingConfig(window_seconds=3.0, crop_seconds=3.0)
        for seed in range(5):
            assert crop_sample(self.seq(), range(0, 150), cfg, np.random.default_rng(seed)).start_frame == 0

    def test_crop_longer_than_window(self):
        cfg = WindowingConfig(window_seconds=1.0, crop_seconds=2.0)
        with pytest.raises(ConfigurationError):
            crop_sample(self.seq(), range(0, 50), cfg, np.random.default_rng(0))

    @given(st.integers(0, 10_000), st.sampled_from([0.25, 0.5, 0.6]))
    def test_sizes_sum_to_crop(self, seed, fraction):
        cfg = WindowingConfig(input_fraction=fraction)
        s = crop_sample(self.seq(), range(0, 150), cfg, np.random.default_rng(seed))
        assert len(s.x0) + len(s.y0) == 100
        assert 0 <= s.start_frame <= 50


class TestForwardKinematics:
    def test_pass_through(self):
        frames = np.random.default_rng(0).normal(size=(4, 6))
        seq = MotionSequence(positions_skeleton(2), 25.0, frames)
        P = to_positions(seq)
        assert P.shape == (4, 2, 3)
        assert P.tobytes() == frames.tobytes()

    def test_identity_rotation(self):
        seq = MotionSequence(chain(), 25.0, np.zeros((1, 6)))
        np.testing.assert_array_equal(to_positions(seq)[0, 1], [100, 0, 0])

    def test_quarter_turn(self):
        seq = MotionSequence(chain(), 25.0, np.array([[0, 0, np.pi / 2, 0, 0, 0]]))
        np.testing.assert_allclose(to_positions(seq)[0, 1], [0, 100, 0], atol=1e-9)

    def test_rodrigues_against_hand_matrix(self):
        # rotation by theta about x, written out by hand
        theta = 0.7
        R = axis_angle_to_matrix(np.array([theta, 0, 0]))
        c, s = np.cos(theta), np.sin(theta)
        np.testing.assert_allclose(R, [[1, 0, 0], [0, c, -s], [0, s, c]], atol=1e-15)

    def test_rotation_matrices_orthonormal(self):
        aa = np.random.default_rng(1).normal(size=(50, 3)) * 2
        R = axis_angle_to_matrix(aa)
        np.testing.assert_allclose(R @ np.swapaxes(R, -1, -2), np.broadcast_to(np.eye(3), R.shape), atol=1e-12)
        np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-12)

    def test_bone_lengths_preserved(self):
        rng = np.random.default_rng(2)
        J = 6
        parents = [-1, 0, 1, 1, 0, 4]
        offsets = rng.normal(size=(J, 3)) * 80
        offsets[0] = 0
        sk = SkeletonSpec([f"j{i}" for i in range(J)], 3, parents, offsets, "angle_axis")
        P = to_positions(MotionSequence(sk, 25.0, rng.normal(size=(20, 3 * J))))
        for j, p in enumerate(parents):
            if p >= 0:
                np.testing.assert_allclose(np.linalg.norm(P[:, j] - P[:, p], axis=-1),
                                           np.linalg.norm(offsets[j]), atol=1e-9)
        assert not P[:, 0].any()

    def test_angle_axis_requires_tree(self):
        with pytest.raises(ConfigurationError):
            SkeletonSpec(["a", "b"], 3, None, None, "angle_axis")

    def test_cyclic_parents_rejected(self):
        with pytest.raises(ConfigurationError):
            SkeletonSpec(["a", "b", "c"], 3, [-1, 2, 1])


class TestSynthDataset:
    def test_planted_partition_recorded(self):
        seq = synth_dataset(1, 8, 25.0, 2.0, np.random.default_rng(0))[0]
        groups = seq.metadata["planted_groups"]
        assert len(groups) == 8 and len(set(groups)) == 2

    def test_zero_amplitude_constant(self):
        seq = synth_dataset(2, 8, 25.0, 2.0, np.random.default_rng(0), amplitude=0.0)[0]
        assert (seq.frames == seq.frames[0]).all()

    def test_deterministic(self):
        a = synth_dataset(3, 8, 25.0, 2.0, np.random.default_rng(5))
        b = synth_dataset(3, 8, 25.0, 2.0, np.random.default_rng(5))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.frames, y.frames)

    def test_group_members_share_phase(self):
        # with one harmonic every coordinate of a group is a scaled copy of one sinusoid
        seq = synth_dataset(1, 8, 25.0, 4.0, np.random.default_rng(3), n_harmonics=1)[0]
        X = seq.frames - seq.frames.mean(axis=0)
        groups = np.repeat(seq.metadata["planted_groups"], 3)
        for g in (0, 1):
            block = X[:, groups == g]
            assert np.linalg.matrix_rank(block, tol=1e-6 * np.abs(block).max()) == 1

    def test_skeleton_has_limbs(self):
        sk = synthetic_skeleton(11)
        assert limb_partition(sk) == [0, 0, 1, 2, 3, 4, 0, 1, 2, 3, 4]
        assert planted_groups(8, 2) == [0, 0, 0, 0, 1, 1, 1, 1]

    def test_split_by_index(self):
        seqs = synth_dataset(20, 3, 25.0, 1.0, np.random.default_rng(0))
        tr, va, te = split_by_index(seqs)
        assert (len(tr), len(va), len(te)) == (16, 2, 2)
        assert va[0].name.endswith("008") and te[1].name.endswith("019")
