"""Trial parsing, framing, normalization, splits, and shuffling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitcast import data as dat
from gaitcast import schema as sch
from gaitcast.dsp import TimeSeriesChannel
from gaitcast.errors import DataError, TrialParseError


def prepared_trial(n=200, subject="S00", trial="T00", rate=100.0, fill=None):
    """Prepared trial whose channel j carries fill[j] or a simple ramp."""
    channels = {}
    for j, name in enumerate(sch.ALL_CHANNELS):
        if fill is not None:
            samples = np.full(n, float(fill))
        else:
            samples = np.arange(n, dtype=np.float64) + 1000.0 * j
        channels[name] = TimeSeriesChannel(samples, rate, name)
    return dat.Trial(subject, trial, channels)


def enumerate_frame_starts(n, cfg, stride):
    starts = []
    t = cfg.burn_in
    while t + cfg.window_len + cfg.horizon_len <= n:
        starts.append(t)
        t += stride
    return starts


class TestTrialCsv:
    def write_and_load(self, tmp_path, schema):
        rng = np.random.default_rng(0)
        channels = {}
        master = max(s.rate_hz for s in schema)
        for spec in schema:
            n = int(round(2.0 * spec.rate_hz))
            channels[spec.name] = TimeSeriesChannel(
                rng.standard_normal(n), spec.rate_hz, spec.name)
        trial = dat.Trial("S00", "T00", channels)
        path = tmp_path / "trial.csv"
        dat.save_trial(path, trial, schema)
        loaded = dat.load_trial(path, schema, subject_id="S00", trial_id="T00")
        return trial, loaded

    def test_roundtrip_prepared_schema(self, tmp_path):
        schema = sch.prepared_schema()
        trial, loaded = self.write_and_load(tmp_path, schema)
        for name in sch.ALL_CHANNELS:
            np.testing.assert_allclose(loaded.channels[name].samples,
                                       trial.channels[name].samples, rtol=1e-9)

    def test_roundtrip_mixed_rates(self, tmp_path):
        schema = sch.raw_schema(emg_rate=1000, imu_rate=200, target_rate=100)
        trial, loaded = self.write_and_load(tmp_path, schema)
        for name in sch.ALL_CHANNELS:
            np.testing.assert_allclose(loaded.channels[name].samples,
                                       trial.channels[name].samples, rtol=1e-9)
            assert loaded.channels[name].sample_rate_hz == \
                trial.channels[name].sample_rate_hz

    def test_toy_three_row_parse(self, tmp_path):
        schema = sch.prepared_schema()
        header = ",".join(sch.ALL_CHANNELS)
        row = ",".join(["1.5"] * len(sch.ALL_CHANNELS))
        path = tmp_path / "toy.csv"
        path.write_text(header + "\n" + "\n".join([row] * 3) + "\n")
        trial = dat.load_trial(path, schema)
        assert trial.n_samples() == 3

    def test_missing_column_named(self, tmp_path):
        schema = sch.prepared_schema()
        names = [n for n in sch.ALL_CHANNELS if n != "emg_soleus"]
        path = tmp_path / "bad.csv"
        path.write_text(",".join(names) + "\n" + ",".join(["0"] * len(names)) + "\n")
        with pytest.raises(TrialParseError, match="emg_soleus"):
            dat.load_trial(path, schema)

    def test_nan_cell_cites_row(self, tmp_path):
        schema = sch.prepared_schema()
        header = ",".join(sch.ALL_CHANNELS)
        good = ",".join(["1.0"] * len(sch.ALL_CHANNELS))
        bad = ",".join(["NaN"] + ["1.0"] * (len(sch.ALL_CHANNELS) - 1))
        rows = [good] * 6 + [bad] + [good] * 2
        path = tmp_path / "nan.csv"
        path.write_text(header + "\n" + "\n".join(rows) + "\n")
        with pytest.raises(TrialParseError, match="row 7"):
            dat.load_trial(path, schema)

    def test_ragged_row_rejected(self, tmp_path):
        schema = sch.prepared_schema()
        header = ",".join(sch.ALL_CHANNELS)
        good = ",".join(["1.0"] * len(sch.ALL_CHANNELS))
        path = tmp_path / "ragged.csv"
        path.write_text(header + "\n" + good + "\n1.0,2.0\n")
        with pytest.raises(TrialParseError, match="row 2"):
            dat.load_trial(path, schema)

    def test_rate_mismatch_detected(self, tmp_path):
        # file written at 100 Hz for all channels, schema expects 200 Hz IMU
        schema_file = sch.prepared_schema()
        trial = prepared_trial(n=10)
        path = tmp_path / "rate.csv"
        dat.save_trial(path, trial, schema_file)
        schema_expect = sch.raw_schema(emg_rate=100, imu_rate=200, target_rate=100)
        with pytest.raises(DataError):
            dat.load_trial(path, schema_expect)

    def test_column_map_translates_names(self, tmp_path):
        schema = sch.prepared_schema()
        names = list(sch.ALL_CHANNELS)
        names[names.index("emg_soleus")] = "SOL_ENV"
        path = tmp_path / "mapped.csv"
        path.write_text(",".join(names) + "\n" + ",".join(["2.0"] * len(names)) + "\n")
        trial = dat.load_trial(path, schema, column_map={"emg_soleus": "SOL_ENV"})
        assert trial.channels["emg_soleus"].samples[0] == 2.0


class TestFraming:
    def test_minimal_length_single_frame(self):
        cfg = dat.FramingConfig()
        frames = dat.make_frames(prepared_trial(150), cfg)
        assert len(frames) == 1
        assert frames[0].start_index == 0

    def test_n200_gives_13_frames(self):
        cfg = dat.FramingConfig()
        assert dat.frame_count(200, cfg) == 13
        assert len(dat.make_frames(prepared_trial(200), cfg)) == 13

    def test_n1000_gives_213_frames(self):
        cfg = dat.FramingConfig()
        assert dat.frame_count(1000, cfg) == 213
        assert len(dat.make_frames(prepared_trial(1000), cfg)) == 213

    def test_too_short_returns_empty_with_warning(self, caplog):
        cfg = dat.FramingConfig()
        with caplog.at_level("WARNING"):
            frames = dat.make_frames(prepared_trial(100), cfg)
        assert frames == []
        assert "too short" in caplog.text

    def test_frame_blocks_are_adjacent(self):
        cfg = dat.FramingConfig(window_len=10, horizon_len=4, stride=3)
        trial = prepared_trial(40)
        for frame in dat.make_frames(trial, cfg):
            t = frame.start_index
            # channel 0 of the trial is a ramp equal to the sample index
            assert frame.input_block[0, 0] == pytest.approx(t)
            assert frame.input_block[-1, 0] == pytest.approx(t + 9)
            assert frame.target_block[0, 0] - 1000.0 * sch.N_INPUTS == \
                pytest.approx(t + 10)

    @settings(max_examples=200, deadline=None)
    @given(n=st.integers(0, 3000),
           window=st.integers(1, 200), horizon=st.integers(1, 60),
           stride=st.integers(1, 17), burn_in=st.integers(0, 50))
    def test_count_matches_enumeration(self, n, window, horizon, stride, burn_in):
        cfg = dat.FramingConfig(window_len=window, horizon_len=horizon,
                                stride=stride, burn_in=burn_in)
        assert dat.frame_count(n, cfg) == len(enumerate_frame_starts(n, cfg, stride))

    def test_eval_stride_override(self):
        cfg = dat.FramingConfig()
        frames = dat.make_frames(prepared_trial(200), cfg, stride=1)
        assert len(frames) == 51  # (200 - 150) + 1


class TestNormalizer:
    def test_extrema_simple(self):
        tr = prepared_trial(3)
        for name in sch.ALL_CHANNELS:
            tr.channels[name].samples = np.array([2.0, 4.0, 6.0])
        norm = dat.fit_normalizer([tr])
        assert np.all(norm.input_min == 2.0) and np.all(norm.input_max == 6.0)
        np.testing.assert_allclose(norm.apply_inputs(np.array([[2.0] * 35])), 0.0)
        np.testing.assert_allclose(norm.apply_inputs(np.array([[4.0] * 35])), 0.5)
        np.testing.assert_allclose(norm.apply_inputs(np.array([[6.0] * 35])), 1.0)

    def test_degenerate_channel_maps_to_half(self):
        tr = prepared_trial(3, fill=5.0)
        norm = dat.fit_normalizer([tr])
        assert norm.input_degenerate.all()
        np.testing.assert_allclose(norm.apply_inputs(np.array([[5.0] * 35])), 0.5)
        np.testing.assert_allclose(norm.invert_inputs(np.array([[0.5] * 35])), 5.0)

    def test_pooled_extrema_across_trials(self):
        t1, t2 = prepared_trial(4), prepared_trial(4)
        for name in sch.ALL_CHANNELS:
            t1.channels[name].samples = np.array([0.0, 1.0, 0.5, 0.2])
            t2.channels[name].samples = np.array([-1.0, 2.0, 0.0, 0.5])
        norm = dat.fit_normalizer([t1, t2])
        assert np.all(norm.input_min == -1.0) and np.all(norm.input_max == 2.0)

    def test_out_of_range_values_preserved(self):
        tr = prepared_trial(3)
        for name in sch.ALL_CHANNELS:
            tr.channels[name].samples = np.array([2.0, 4.0, 6.0])
        norm = dat.fit_normalizer([tr])
        out = norm.apply_inputs(np.full((1, 35), 8.0))
        np.testing.assert_allclose(out, 1.5)  # no clipping

    def test_roundtrip_identity(self):
        rng = np.random.default_rng(0)
        trials = [prepared_trial(50) for _ in range(2)]
        for tr in trials:
            for name in sch.ALL_CHANNELS:
                tr.channels[name].samples = rng.standard_normal(50) * 7 + 3
        norm = dat.fit_normalizer(trials)
        block = rng.standard_normal((8, 12))
        back = norm.invert_targets(norm.apply_targets(block))
        np.testing.assert_allclose(back, block, atol=1e-9)

    def test_training_data_lands_in_unit_interval(self):
        rng = np.random.default_rng(1)
        tr = prepared_trial(100)
        for name in sch.ALL_CHANNELS:
            tr.channels[name].samples = rng.standard_normal(100)
        norm = dat.fit_normalizer([tr])
        nx = norm.apply_inputs(tr.input_matrix())
        assert nx.min() >= 0.0 and nx.max() <= 1.0
        assert nx.min() == 0.0 and nx.max() == 1.0

    def test_refit_with_test_subject_changes_extrema(self):
        # sentinel: the pipeline must never consult held-out data
        train = prepared_trial(10)
        test = prepared_trial(10)
        for name in sch.ALL_CHANNELS:
            train.channels[name].samples = np.linspace(0, 1, 10)
            test.channels[name].samples = np.linspace(0, 2, 10)  # wider range
        n_train = dat.fit_normalizer([train])
        n_all = dat.fit_normalizer([train, test])
        assert np.any(n_all.input_max != n_train.input_max)

    def test_empty_training_set_rejected(self):
        with pytest.raises(DataError):
            dat.fit_normalizer([])


class TestSplit:
    def test_paper_sized_split(self):
        ids = [f"S{i:02d}" for i in range(22)]
        split = dat.split_loso(ids, test_id="S21", val_id="S20")
        assert len(split.train_subjects) == 20
        assert split.test_subject == "S21" and split.val_subject == "S20"

    def test_minimal_split(self):
        split = dat.split_loso(["A", "B", "C"], test_id="A", val_id="B")
        assert split.train_subjects == ("C",)

    def test_test_equals_val_rejected(self):
        with pytest.raises(DataError):
            dat.split_loso(["A", "B"], test_id="A", val_id="A")

    def test_unknown_id_rejected(self):
        with pytest.raises(DataError, match="ZZ"):
            dat.split_loso(["A", "B"], test_id="ZZ", val_id="B")

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataError):
            dat.split_loso(["A", "A", "B"], test_id="A", val_id="B")

    def test_partition_is_disjoint_and_complete(self):
        ids = [f"S{i}" for i in range(8)]
        split = dat.split_loso(ids, "S3", "S5")
        groups = set(split.train_subjects) | {split.val_subject, split.test_subject}
        assert groups == set(ids)
        assert split.val_subject not in split.train_subjects
        assert split.test_subject not in split.train_subjects


class TestShuffle:
    def frames(self, n=30):
        cfg = dat.FramingConfig(window_len=5, horizon_len=2, stride=1)
        out = []
        for s in range(3):
            out.extend(dat.make_frames(prepared_trial(n, subject=f"S{s}"), cfg))
        return out

    def test_deterministic(self):
        frames = self.frames()
        a = dat.shuffle_frames(frames, seed=5)
        b = dat.shuffle_frames(frames, seed=5)
        assert [(f.subject_id, f.start_index) for f in a] == \
            [(f.subject_id, f.start_index) for f in b]

    def test_permutation_preserves_multiset(self):
        frames = self.frames()
        shuffled = dat.shuffle_frames(frames, seed=9)
        key = lambda f: (f.subject_id, f.trial_id, f.start_index)
        assert sorted(map(key, shuffled)) == sorted(map(key, frames))

    def test_actually_permutes(self):
        frames = self.frames()
        shuffled = dat.shuffle_frames(frames, seed=1)
        assert [f.start_index for f in shuffled] != [f.start_index for f in frames]

    def test_empty_list(self):
        assert dat.shuffle_frames([], seed=0) == []
