import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glave.errors import DegenerateInputError, DimensionError, EmptyInputError, WorkspaceError
from glave.keyframes import (
    FrameRecord,
    ShotList,
    default_max_gap,
    detect_shots,
    frame_channel_stats,
    load_embedding_fixture,
    load_frame_manifest,
    select_keyframes,
    write_frame_manifest,
)

from oracles import keyframes_by_scan


def solid(rgb, h=8, w=8):
    img = np.zeros((h, w, 3), np.uint8)
    img[:, :] = rgb
    return img


def frames_from(images):
    return [
        FrameRecord(index=i, timestamp=i / 10, image=img)
        for i, img in enumerate(images)
    ]


class TestChannelStats:
    def test_black(self):
        assert frame_channel_stats(solid((0, 0, 0))) == (0.0, 0.0, 0.0)

    def test_white(self):
        assert frame_channel_stats(solid((255, 255, 255))) == (0.0, 0.0, 255.0)

    def test_pure_red(self):
        h, s, l = frame_channel_stats(solid((255, 0, 0)))
        assert (h, s, l) == (0.0, 255.0, 127.5)

    def test_pure_green_hue_is_third_of_circle(self):
        h, _, _ = frame_channel_stats(solid((0, 255, 0)))
        assert h == pytest.approx(255 / 3)

    def test_half_black_half_white_averages(self):
        img = np.zeros((1, 2, 3), np.uint8)
        img[0, 1] = 255
        assert frame_channel_stats(img) == (0.0, 0.0, 127.5)

    def test_zero_area_rejected(self):
        with pytest.raises(DegenerateInputError):
            frame_channel_stats(np.zeros((0, 4, 3), np.uint8))


class TestDetectShots:
    def test_planted_cut(self):
        images = [solid((0, 0, 0))] * 10 + [solid((255, 255, 255))] * 10
        cuts = detect_shots(frames_from(images), min_shot_len=5).cuts
        assert cuts == (0, 10)

    def test_gradual_ramp_below_threshold(self):
        images = [solid((v, v, v)) for v in range(0, 250, 10)]
        assert detect_shots(frames_from(images)).cuts == (0,)

    def test_min_shot_len_suppresses_early_cut(self):
        images = (
            [solid((0, 0, 0))] * 5
            + [solid((255, 255, 255))] * 15
            + [solid((0, 0, 0))] * 5
        )
        frames = frames_from(images)
        assert detect_shots(frames, min_shot_len=15).cuts == (0, 20)
        assert detect_shots(frames, min_shot_len=5).cuts == (0, 5, 20)

    def test_cut_measured_from_previous_cut(self):
        # second change lands min_shot_len after the first accepted cut
        images = [solid((0, 0, 0))] * 6 + [solid((255, 255, 255))] * 4 + [solid((0, 0, 0))] * 6
        cuts = detect_shots(frames_from(images), min_shot_len=4).cuts
        assert cuts == (0, 6, 10)

    def test_empty_input_rejected(self):
        with pytest.raises(EmptyInputError):
            detect_shots([])

    @pytest.mark.parametrize("kwargs", [{"threshold": 0.0}, {"min_shot_len": 0}])
    def test_bad_parameters_rejected(self, kwargs):
        with pytest.raises(ValueError):
            detect_shots(frames_from([solid((0, 0, 0))]), **kwargs)

    def test_result_always_starts_at_zero(self):
        rng = np.random.RandomState(3)
        images = [solid(tuple(rng.randint(0, 256, 3))) for _ in range(30)]
        cuts = detect_shots(frames_from(images)).cuts
        assert cuts[0] == 0
        assert list(cuts) == sorted(set(cuts))


class TestShotList:
    def test_must_start_at_zero(self):
        with pytest.raises(ValueError):
            ShotList(cuts=(3, 7))

    def test_must_be_sorted_unique(self):
        with pytest.raises(ValueError):
            ShotList(cuts=(0, 7, 7))

    def test_json_round_trip(self):
        shots = ShotList(cuts=(0, 4, 11))
        assert ShotList.from_json(shots.to_json()) == shots


def unit_vectors(rng, n, dim=6):
    raw = rng.standard_normal((n, dim))
    return [v / np.linalg.norm(v) for v in raw]


class TestSelectKeyframes:
    def test_first_position_always_selected(self):
        rng = np.random.default_rng(0)
        assert select_keyframes(unit_vectors(rng, 5))[0] == 0

    def test_gap_forces_selection_of_identical_embeddings(self):
        vectors = [np.array([1.0, 0.0])] * 10
        assert select_keyframes(vectors, max_gap=4) == [0, 4, 8]

    def test_drift_below_threshold_selects(self):
        vectors = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, 1.0])]
        assert select_keyframes(vectors, max_gap=10) == [0, 1]

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            select_keyframes([])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            select_keyframes([np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0])])

    def test_bad_gap_rejected(self):
        with pytest.raises(ValueError):
            select_keyframes([np.array([1.0])], max_gap=0)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 9))
    @settings(max_examples=150, deadline=None)
    def test_matches_linear_scan_oracle(self, seed, n, max_gap):
        vectors = unit_vectors(np.random.RandomState(seed), n)
        picked = select_keyframes(vectors, max_gap=max_gap)
        assert picked == keyframes_by_scan(vectors, 0.85, max_gap)
        assert picked[0] == 0
        assert all(b - a <= max_gap for a, b in zip(picked, picked[1:]))


class TestDefaultMaxGap:
    def test_two_seconds_of_frames(self):
        frames = [FrameRecord(index=i, timestamp=i * 0.5, image=None) for i in range(11)]
        assert default_max_gap(frames) == 4  # 2 fps

    def test_degenerate_timestamps_fall_back(self):
        frames = [FrameRecord(index=i, timestamp=0.0, image=None) for i in range(5)]
        assert default_max_gap(frames) == 8
        assert default_max_gap(frames[:1]) == 8


class TestManifest:
    def test_round_trip(self, tmp_path):
        records = [
            FrameRecord(index=i, timestamp=i / 4, image=None, width=64, height=48)
            for i in range(6)
        ]
        write_frame_manifest(tmp_path / "frames.json", records)
        loaded = load_frame_manifest(tmp_path)
        assert [(f.index, f.timestamp, f.width, f.height) for f in loaded] == [
            (f.index, f.timestamp, f.width, f.height) for f in records
        ]
        assert loaded[2].image == tmp_path / "frames" / "000002.png"

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(WorkspaceError):
            load_frame_manifest(tmp_path)

    @pytest.mark.parametrize(
        "doc",
        [
            [{"index": 1, "timestamp": 0.0, "width": 4, "height": 4},
             {"index": 1, "timestamp": 0.1, "width": 4, "height": 4}],
            [{"index": 0, "timestamp": 0.5, "width": 4, "height": 4},
             {"index": 1, "timestamp": 0.2, "width": 4, "height": 4}],
            [{"index": 0, "timestamp": 0.0, "width": 0, "height": 4}],
        ],
    )
    def test_invalid_manifest_rejected(self, tmp_path, doc):
        (tmp_path / "frames.json").write_text(json.dumps(doc))
        with pytest.raises(WorkspaceError):
            load_frame_manifest(tmp_path)


class TestEmbeddingFixture:
    def test_loads_vectors(self, tmp_path):
        path = tmp_path / "embeddings.json"
        path.write_text(json.dumps({"dim": 2, "vectors": [[1.0, 0.0], [0.0, 1.0]]}))
        vectors = load_embedding_fixture(path)
        assert len(vectors) == 2 and vectors[0].shape == (2,)

    def test_dimension_mismatch_rejected(self, tmp_path):
        path = tmp_path / "embeddings.json"
        path.write_text(json.dumps({"dim": 3, "vectors": [[1.0, 0.0]]}))
        with pytest.raises(WorkspaceError):
            load_embedding_fixture(path)
