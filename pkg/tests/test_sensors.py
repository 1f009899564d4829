import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmnerf.errors import ContractError
from mmnerf.sensors import (EventStream, OverlapWarning, accumulate_events, enhance_thermal, normalize_event_frame,
                            read_events, read_thermal_raw, synthesize_events, write_events, write_thermal_raw)

from .oracles import brute_force_accumulate, hand_enhance, scalar_crossings


def _stream(events, w=2, h=2):
    t, x, y, p = zip(*events) if events else ((), (), (), ())
    return EventStream(np.array(t, dtype=np.uint64), x, y, p, w, h)


class TestAccumulate:
    def test_empty_stream(self):
        frames = accumulate_events(EventStream.empty(3, 2), [0.0, 0.5], 0.5)
        assert all(not f.acc.any() for f in frames) and frames[0].acc.shape == (2, 3)

    def test_hand_example(self):
        s = _stream([(200_000, 1, 0, 1), (300_000, 1, 0, 1), (700_000, 0, 0, -1)])
        f0, f1 = accumulate_events(s, [0.0, 0.5], 0.5)
        expected0 = np.zeros((2, 2), int)
        expected0[0, 1] = 2
        expected1 = np.zeros((2, 2), int)
        expected1[0, 0] = -1
        np.testing.assert_array_equal(f0.acc, expected0)
        np.testing.assert_array_equal(f1.acc, expected1)
        np.testing.assert_array_equal(f0.acc, brute_force_accumulate(s, [0.0, 0.5], 0.5)[0])

    def test_boundary_event_goes_to_later_window(self):
        s = _stream([(500_000, 0, 1, 1)])
        f0, f1 = accumulate_events(s, [0.0, 0.5], 0.5)
        assert f0.acc.sum() == 0 and f1.acc[1, 0] == 1

    def test_events_outside_windows_dropped(self):
        s = _stream([(100, 0, 0, 1), (2_000_000, 1, 1, -1)])
        (f,) = accumulate_events(s, [0.5], 0.25)
        assert not f.acc.any()

    def test_overlap_warns(self):
        with pytest.warns(OverlapWarning):
            accumulate_events(EventStream.empty(2, 2), [0.0, 0.1], 0.5)

    def test_unsorted_stream_rejected(self):
        with pytest.raises(ContractError):
            _stream([(5, 0, 0, 1), (3, 0, 0, 1)])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 999_999))
    def test_split_linearity(self, seed, cut):
        rng = np.random.default_rng(seed)
        n = 300
        s = _stream(sorted(zip(rng.integers(0, 1_000_000, n).tolist(), rng.integers(0, 4, n).tolist(),
                               rng.integers(0, 3, n).tolist(), rng.choice([-1, 1], n).tolist())), 4, 3)
        whole = accumulate_events(s, [0.0], 1.0)[0].acc
        a = s.slice_time(0, cut)
        b = s.slice_time(cut, 1_000_000)
        parts = accumulate_events(a, [0.0], 1.0)[0].acc + accumulate_events(b, [0.0], 1.0)[0].acc
        np.testing.assert_array_equal(whole, parts)


class TestNormalize:
    @pytest.mark.parametrize("acc,expected", [(0, 0.5), (5, 1.0), (-5, 0.0), (2.5, 0.75), (40, 1.0)])
    def test_values(self, acc, expected):
        out = normalize_event_frame(np.array([[acc]]), clip=5)
        assert out.shape == (1, 1, 3)
        assert out[0, 0, 0] == expected


class TestThermal:
    def test_constant_image_is_midgray(self):
        np.testing.assert_array_equal(enhance_thermal(np.full((5, 7), 2345)), 128)

    def test_global_minmax_endpoints(self):
        raw = np.array([[100, 300], [300, 100]])
        assert set(np.unique(enhance_thermal(raw, grid=1, rounds=0))) == {0, 255}

    def test_global_minmax_equivalence(self):
        raw = np.random.default_rng(0).integers(2000, 3000, size=(9, 13))
        expected = np.clip(np.floor(255.0 * (raw - raw.min()) / (raw.max() - raw.min()) + 0.5), 0, 255)
        np.testing.assert_array_equal(enhance_thermal(raw, 1, 0), expected)

    def test_quadrant_fixture_matches_hand_pipeline(self):
        raw = np.array([[10, 20, 200, 210],
                        [30, 40, 220, 260],
                        [500, 520, 1000, 1000],
                        [540, 600, 1000, 1000]])
        np.testing.assert_array_equal(enhance_thermal(raw, 2, 0), hand_enhance(raw, 2, 0))

    @pytest.mark.parametrize("g,k", [(2, 1), (2, 3), (3, 2), (4, 1)])
    def test_general_grids_match_hand_pipeline(self, g, k):
        raw = np.random.default_rng(g * 10 + k).integers(1000, 1400, size=(4, 4))
        np.testing.assert_array_equal(enhance_thermal(raw, g, k), hand_enhance(raw, g, k))

    def test_idempotent_on_full_range_8bit(self):
        img = np.random.default_rng(1).integers(0, 256, size=(16, 16))
        img[0, 0], img[0, 1] = 0, 255
        out = enhance_thermal(img, 1, 0)
        assert np.abs(out.astype(int) - img).max() <= 1

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 65535), min_size=2, max_size=40))
    def test_monotone_and_in_range(self, values):
        raw = np.array(values).reshape(1, -1)
        out = enhance_thermal(raw, 1, 0).astype(int)
        order = np.argsort(raw[0], kind="stable")
        assert np.all(np.diff(out[0][order]) >= 0)
        assert out.min() >= 0 and out.max() <= 255

    def test_raw_png_round_trip(self, tmp_path):
        raw = np.random.default_rng(2).integers(0, 65536, size=(6, 5)).astype(np.uint16)
        write_thermal_raw(tmp_path / "t.png", raw)
        np.testing.assert_array_equal(read_thermal_raw(tmp_path / "t.png"), raw)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            enhance_thermal(np.zeros((0, 3)))


class TestSynthesize:
    def test_static_video_has_no_events(self):
        assert len(synthesize_events(np.full((4, 3, 3), 0.4), 0.2)) == 0

    def test_two_threshold_step(self):
        C = 0.25
        video = np.full((2, 1, 2), 0.3)
        video[1, 0, 1] = 0.3 * math.exp(2 * C)
        s = synthesize_events(video, C)
        assert len(s) == 2 and np.all(s.p == 1) and np.all(s.x == 1)

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(3)
        video = np.clip(rng.random((6, 5, 4)) ** 2, 0, 1)
        times = np.linspace(0.0, 0.5, 6)
        s = synthesize_events(video, 0.2, times)
        frames = accumulate_events(s, [0.0], 1.0)
        np.testing.assert_array_equal(frames[0].acc, scalar_crossings(video, 0.2))
        assert np.all(np.diff(s.t.astype(np.int64)) >= 0)
        assert s.t.min() >= 0 and s.t.max() <= 500_000

    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        s = synthesize_events(rng.random((5, 6, 7)), 0.3, np.arange(5) * 0.01)
        write_events(tmp_path / "e.bin", s)
        data = (tmp_path / "e.bin").read_bytes()
        assert data[:4] == b"EVT0" and len(data) == 16 + 16 * len(s)
        r = read_events(tmp_path / "e.bin")
        assert (r.width, r.height) == (7, 6)
        for f in "txyp":
            np.testing.assert_array_equal(getattr(r, f), getattr(s, f))
