import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogstates import data as dio
from cogstates.data import (DataError, ManifestRow, NetworkGrouping, Segment,
                            SessionRecording, SplitSpec)


def make_dataset(root, specs, fmt="bin"):
    """specs: list of (subject, session, task, T) tuples; returns written rows."""
    rows = []
    rng = np.random.default_rng(123)
    for subject, session, task, t_len in specs:
        name = f"{subject}_{session}_{task}.{fmt}"
        series = rng.normal(size=(t_len, dio.N_CHANNELS))
        if fmt == "bin":
            dio.write_series_bin(root / name, series)
        else:
            dio.write_series_csv(root / name, series)
        rows.append(ManifestRow(subject, session, task, name, None))
    dio.write_manifest(root / "manifest.csv", rows)
    return rows


class TestLoadRecordings:
    def test_two_recording_fixture(self, tmp_path):
        make_dataset(tmp_path, [("s01", 1, "PVT", 300), ("s01", 1, "REST", 310)])
        recs = dio.load_recordings(tmp_path)
        assert len(recs) == 2
        assert recs[0].series.shape == (300, 214)

    def test_wrong_channel_count_names_file(self, tmp_path):
        dio.write_series_bin(tmp_path / "bad.bin", np.zeros((50, 213)))
        dio.write_manifest(tmp_path / "manifest.csv",
                           [ManifestRow("s01", 1, "PVT", "bad.bin", None)])
        with pytest.raises(DataError, match="bad.bin.*213"):
            dio.load_recordings(tmp_path)

    def test_csv_and_binary_encode_identically(self, tmp_path):
        series = np.random.default_rng(5).normal(size=(40, 214))
        dio.write_series_bin(tmp_path / "a.bin", series)
        dio.write_series_csv(tmp_path / "a.csv", series)
        assert np.array_equal(dio.read_series(tmp_path / "a.bin"),
                              dio.read_series(tmp_path / "a.csv"))

    def test_missing_file_reported(self, tmp_path):
        dio.write_manifest(tmp_path / "manifest.csv",
                           [ManifestRow("s01", 1, "PVT", "ghost.bin", None)])
        with pytest.raises(DataError, match="ghost.bin"):
            dio.load_recordings(tmp_path)

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("wrong,header\n1,2\n")
        with pytest.raises(DataError, match="malformed"):
            dio.load_recordings(tmp_path)

    def test_nonfinite_rejected(self, tmp_path):
        series = np.zeros((30, 214))
        series[3, 7] = np.nan
        series[0, 0] = 1.0  # avoid all-constant channel masking the check
        dio.write_series_bin(tmp_path / "nan.bin", series)
        dio.write_manifest(tmp_path / "manifest.csv",
                           [ManifestRow("s01", 1, "VWM", "nan.bin", None)])
        with pytest.raises(DataError, match="non-finite"):
            dio.load_recordings(tmp_path)

    def test_duplicate_key_rejected(self, tmp_path):
        series = np.zeros((30, 214))
        dio.write_series_bin(tmp_path / "a.bin", series)
        dio.write_series_bin(tmp_path / "b.bin", series)
        dio.write_manifest(tmp_path / "manifest.csv", [
            ManifestRow("s01", 1, "PVT", "a.bin", None),
            ManifestRow("s01", 1, "PVT", "b.bin", None)])
        with pytest.raises(DataError, match="duplicate"):
            dio.load_recordings(tmp_path)

    def test_manifest_roundtrips_scores(self, tmp_path):
        rows = [ManifestRow("s01", 1, "PVT", "a.bin", 123.456),
                ManifestRow("s01", 1, "REST", "b.bin", None)]
        dio.write_manifest(tmp_path / "manifest.csv", rows)
        back = dio.read_manifest(tmp_path / "manifest.csv")
        assert back[0].performance_score == 123.456
        assert back[1].performance_score is None


def make_recording(series, task="PVT", subject="s01", session=1):
    return SessionRecording(subject, session, task, series)


class TestZscore:
    def test_channel_1_2_3(self):
        series = np.tile(np.array([[1.0], [2.0], [3.0]]), (1, 214))
        out = dio.zscore(make_recording(series)).series
        assert np.max(np.abs(out.mean(axis=0))) < 1e-9
        assert np.max(np.abs(out.std(axis=0) - 1.0)) < 1e-9

    def test_idempotent(self):
        rng = np.random.default_rng(9)
        rec = make_recording(rng.normal(2.0, 3.0, size=(100, 214)))
        once = dio.zscore(rec)
        twice = dio.zscore(once)
        assert np.max(np.abs(once.series - twice.series)) < 1e-9

    def test_constant_channel_zeroed_with_warning(self):
        series = np.random.default_rng(10).normal(size=(50, 214))
        series[:, 5] = 7.0
        with pytest.warns(UserWarning, match=r"\[5\]"):
            out = dio.zscore(make_recording(series)).series
        assert np.all(out[:, 5] == 0.0)
        assert not np.all(out[:, 6] == 0.0)


class TestSegmentation:
    def segment_t(self, t_len):
        rec = make_recording(np.random.default_rng(t_len).normal(size=(t_len, 214)))
        return dio.segment(rec)

    def test_t800_discards_short_residual(self):
        segs = self.segment_t(800)
        assert len(segs) == 2
        assert all(s.pad_count == 0 for s in segs)

    def test_t824_pads_residual(self):
        segs = self.segment_t(824)
        assert len(segs) == 3
        assert [s.pad_count for s in segs] == [0, 0, 7]

    def test_exact_fit(self):
        segs = self.segment_t(277)
        assert len(segs) == 1 and segs[0].pad_count == 0

    def test_padded_suffix_is_zero(self):
        segs = self.segment_t(824)
        tail = segs[-1]
        assert np.all(tail.data[-tail.pad_count:] == 0.0)
        assert not np.all(tail.data[-tail.pad_count - 1] == 0.0)

    def test_window_contents_match_source(self):
        rec = make_recording(np.random.default_rng(1).normal(size=(600, 214)))
        segs = dio.segment(rec)
        assert np.array_equal(segs[0].data, rec.series[:277])
        assert np.array_equal(segs[1].data, rec.series[277:554])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(min_value=1, max_value=1200))
    def test_count_matches_closed_form(self, t_len):
        rec = make_recording(np.zeros((t_len, 214)))
        assert len(dio.segment(rec)) == dio.expected_segment_count(t_len)


def dummy_segments(group_sizes):
    """group_sizes: dict[(subject, task)] -> n segments (tiny data arrays)."""
    segs = []
    for (subject, task), count in group_sizes.items():
        for w in range(count):
            segs.append(Segment(np.zeros((1, 1)), task, subject, 1, 0, w))
    return segs


class TestSplit:
    def test_groups_stay_whole(self):
        sizes = {(f"s{i:02d}", "PVT"): 10 for i in range(10)}
        result = dio.split(dummy_segments(sizes), SplitSpec(seed=1))
        for name, bucket in result.as_dict().items():
            for seg in bucket:
                assert result.assignment[(seg.subject_id, seg.label)] == name

    def test_same_seed_identical(self):
        sizes = {(f"s{i:02d}", t): 5 + i for i in range(6) for t in ("PVT", "VWM")}
        a = dio.split(dummy_segments(sizes), SplitSpec(seed=42))
        b = dio.split(dummy_segments(sizes), SplitSpec(seed=42))
        assert a.assignment == b.assignment

    def test_achieved_fractions_close_on_1000(self):
        rng = np.random.default_rng(3)
        sizes = {}
        total = 0
        i = 0
        while total < 1000:
            n = int(rng.integers(5, 25))
            sizes[(f"s{i:03d}", dio.TASKS[i % 6])] = n
            total += n
            i += 1
        result = dio.split(dummy_segments(sizes), SplitSpec(seed=7))
        assert abs(result.achieved["train"] - 0.70) < 0.05
        assert abs(result.achieved["validation"] - 0.10) < 0.05
        assert abs(result.achieved["test"] - 0.20) < 0.05

    def test_starved_class_errors(self):
        sizes = {("s01", "PVT"): 5, ("s02", "PVT"): 5}
        with pytest.raises(DataError, match="PVT"):
            dio.split(dummy_segments(sizes), SplitSpec(seed=0))

    def test_every_class_in_every_split(self):
        sizes = {(f"s{i:02d}", t): 8 for i in range(4) for t in dio.TASKS}
        result = dio.split(dummy_segments(sizes), SplitSpec(seed=5))
        for bucket in result.as_dict().values():
            assert {s.label for s in bucket} == set(dio.TASKS)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=3, max_value=12), st.integers(min_value=0, max_value=2 ** 31))
    def test_no_group_straddles_for_any_seed(self, n_subjects, seed):
        sizes = {(f"s{i:02d}", "DOT"): (i % 4) + 1 for i in range(n_subjects)}
        result = dio.split(dummy_segments(sizes), SplitSpec(seed=seed))
        placed = {}
        for name, bucket in result.as_dict().items():
            for seg in bucket:
                key = (seg.subject_id, seg.label)
                assert placed.setdefault(key, name) == name


class TestGrouping:
    def test_default_grouping_valid(self):
        grouping = dio.make_contiguous_grouping()
        assert len(grouping.network_ids()) == 17
        assert sum(grouping.sizes().values()) == 214
        assert grouping.channels("N17") == list(range(200, 214))

    def test_file_roundtrip(self, tmp_path):
        grouping = dio.make_contiguous_grouping()
        dio.write_grouping(tmp_path / "g.csv", grouping)
        back = dio.load_grouping(tmp_path / "g.csv")
        assert back.groups == grouping.groups

    def test_duplicate_channel_rejected(self, tmp_path):
        grouping = dio.make_contiguous_grouping()
        dio.write_grouping(tmp_path / "g.csv", grouping)
        with open(tmp_path / "g.csv", "a") as fh:
            fh.write("0,N2\n")
        with pytest.raises(DataError, match="duplicate"):
            dio.load_grouping(tmp_path / "g.csv")

    def test_gap_rejected(self):
        groups = dio.make_contiguous_grouping().groups
        broken = {nid: list(chans) for nid, chans in groups.items()}
        broken["N1"] = broken["N1"][:-1]  # drop channel 12
        with pytest.raises(DataError, match="partition|unassigned"):
            NetworkGrouping(broken)

    def test_overlap_rejected(self):
        groups = dio.make_contiguous_grouping().groups
        broken = {nid: list(chans) for nid, chans in groups.items()}
        broken["N2"] = [broken["N1"][0]] + broken["N2"][1:]
        with pytest.raises(DataError, match="both"):
            NetworkGrouping(broken)

    def test_unknown_network_rejected(self, tmp_path):
        (tmp_path / "g.csv").write_text("channel_index,network_id\n0,N99\n")
        with pytest.raises(DataError, match="N99"):
            dio.load_grouping(tmp_path / "g.csv")

    def test_cortical_channel_in_n17_rejected(self):
        groups = {f"N{i+1}": [] for i in range(17)}
        groups["N1"] = list(range(1, 200))
        groups["N17"] = [0] + list(range(200, 214))
        for i in range(1, 16):
            groups[f"N{i+1}"] = []
        with pytest.raises(DataError, match="N17"):
            NetworkGrouping(groups)


class TestArrays:
    def test_stacking(self):
        segs = [Segment(np.full((277, 214), i, dtype=float), dio.TASKS[i], "s", 1, 0, i)
                for i in range(3)]
        x, y = dio.segments_to_arrays(segs)
        assert x.shape == (3, 277, 214)
        assert y.tolist() == [0, 1, 2]

    def test_empty_errors(self):
        with pytest.raises(DataError):
            dio.segments_to_arrays([])

    def test_split_spec_validation(self):
        with pytest.raises(DataError, match="sum"):
            SplitSpec(train=0.5, validation=0.1, test=0.2)
