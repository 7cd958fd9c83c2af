"""Trial ingestion, frame extraction, min-max normalization, and LOSO splits."""

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import schema as sch
from .dsp import TimeSeriesChannel
from .errors import DataError, TrialParseError

log = logging.getLogger("gaitcast.data")

DEGENERATE_EPS = 1e-12


@dataclass
class Trial:
    """One recording: named channels (possibly at mixed rates) plus provenance."""

    subject_id: str
    trial_id: str
    channels: dict
    speed_schedule: list | None = None

    def channel_matrix(self, names):
        """Stack the named channels column-wise; requires equal lengths/rates."""
        lengths = {len(self.channels[n]) for n in names}
        if len(lengths) != 1:
            raise DataError(f"channels have mixed lengths {sorted(lengths)}")
        return np.stack([self.channels[n].samples for n in names], axis=1)

    def input_matrix(self):
        return self.channel_matrix(sch.INPUT_CHANNELS)

    def target_matrix(self):
        return self.channel_matrix(sch.TARGET_CHANNELS)

    def n_samples(self):
        return len(next(iter(self.channels.values())))


def check_prepared(trial, rate=100.0):
    """Validate the prepared-trial contract: full schema, one rate, one length."""
    missing = [n for n in sch.ALL_CHANNELS if n not in trial.channels]
    if missing:
        raise DataError(f"prepared trial missing channels: {missing}")
    for name in sch.ALL_CHANNELS:
        ch = trial.channels[name]
        if abs(ch.sample_rate_hz - rate) > 1e-9:
            raise DataError(f"channel {name} at {ch.sample_rate_hz} Hz, expected {rate}")
        if not np.all(np.isfinite(ch.samples)):
            raise DataError(f"channel {name} contains non-finite samples")
    lengths = {len(trial.channels[n]) for n in sch.ALL_CHANNELS}
    if len(lengths) != 1:
        raise DataError(f"prepared trial has mixed channel lengths {sorted(lengths)}")
    return trial


def _column_strides(channel_schema, master_rate):
    strides = {}
    for spec in channel_schema:
        ratio = master_rate / spec.rate_hz
        m = int(round(ratio))
        if m < 1 or abs(ratio - m) > 1e-9:
            raise DataError(
                f"channel {spec.name}: rate {spec.rate_hz} does not divide the "
                f"master rate {master_rate}")
        strides[spec.name] = m
    return strides


def save_trial(path, trial, channel_schema):
    """Write a trial as a master-clock CSV.

    Rows tick at the fastest channel rate; slower channels leave blank cells
    except at their own sample instants, so one file holds mixed rates.
    """
    master_rate = max(spec.rate_hz for spec in channel_schema)
    strides = _column_strides(channel_schema, master_rate)
    names = [spec.name for spec in channel_schema]
    n_rows = max(
        len(trial.channels[n]) * strides[n] - (strides[n] - 1) for n in names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for r in range(n_rows):
            row = []
            for n in names:
                m = strides[n]
                if r % m == 0 and r // m < len(trial.channels[n]):
                    row.append(format(trial.channels[n].samples[r // m], ".10g"))
                else:
                    row.append("")
            writer.writerow(row)


def load_trial(path, channel_schema, subject_id="", trial_id="", column_map=None):
    """Parse a trial CSV against a channel schema.

    `column_map` optionally maps canonical channel names to the names used in
    the file (for ingesting external corpora without code changes). Errors
    carry 1-based data-row and column coordinates.
    """
    master_rate = max(spec.rate_hz for spec in channel_schema)
    strides = _column_strides(channel_schema, master_rate)
    column_map = column_map or {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TrialParseError(f"{path}: empty file") from None
        positions = {}
        for spec in channel_schema:
            file_name = column_map.get(spec.name, spec.name)
            if file_name not in header:
                raise TrialParseError(f"{path}: missing column", column=spec.name)
            positions[spec.name] = header.index(file_name)
        rows = list(reader)
    width = len(header)
    for r, row in enumerate(rows, start=1):
        if len(row) != width:
            raise TrialParseError(
                f"{path}: ragged row ({len(row)} cells, expected {width})", row=r)
    channels = {}
    for spec in channel_schema:
        m = strides[spec.name]
        col = positions[spec.name]
        values = []
        for r, row in enumerate(rows, start=1):
            cell = row[col].strip()
            sampled = (r - 1) % m == 0
            if not sampled:
                if cell:
                    raise TrialParseError(
                        f"{path}: unexpected sample (rate mismatch with "
                        f"{spec.rate_hz} Hz)", row=r, column=spec.name)
                continue
            if not cell:
                raise TrialParseError(
                    f"{path}: missing sample (rate mismatch with "
                    f"{spec.rate_hz} Hz)", row=r, column=spec.name)
            try:
                v = float(cell)
            except ValueError:
                raise TrialParseError(
                    f"{path}: non-numeric cell {cell!r}", row=r, column=spec.name
                ) from None
            if not math.isfinite(v):
                raise TrialParseError(
                    f"{path}: non-finite cell {cell!r}", row=r, column=spec.name)
            values.append(v)
        channels[spec.name] = TimeSeriesChannel(
            np.array(values, dtype=np.float64), spec.rate_hz, spec.name)
    return Trial(subject_id=subject_id, trial_id=trial_id, channels=channels)


@dataclass
class FramingConfig:
    """Sliding-window framing parameters (sample counts at the common rate)."""

    window_len: int = 125
    horizon_len: int = 25
    stride: int = 4
    burn_in: int = 0
    eval_stride: int = 1

    def __post_init__(self):
        if self.window_len <= 0 or self.horizon_len <= 0:
            raise DataError("window_len and horizon_len must be positive")
        if self.stride <= 0 or self.eval_stride <= 0:
            raise DataError("stride must be positive")
        if self.burn_in < 0:
            raise DataError("burn_in must be nonnegative")


def frame_count(n_samples, cfg, stride=None):
    """Closed-form number of frames a trial of n_samples yields."""
    stride = cfg.stride if stride is None else stride
    usable = n_samples - cfg.burn_in - cfg.window_len - cfg.horizon_len
    if usable < 0:
        return 0
    return usable // stride + 1


@dataclass
class Frame:
    """One training example: input window plus the following target horizon.

    target_block holds all 12 target channels (6 angles then 6 moments); a
    network family consumes its 6-column slice.
    """

    input_block: np.ndarray
    target_block: np.ndarray
    subject_id: str
    trial_id: str
    start_index: int


ANGLE_SLICE = slice(0, 6)
MOMENT_SLICE = slice(6, 12)


def make_frames(trial, cfg, stride=None):
    """Slide a window over a prepared trial; returns [] with a warning if short."""
    stride = cfg.stride if stride is None else stride
    n = trial.n_samples()
    count = frame_count(n, cfg, stride)
    if count == 0:
        log.warning("trial %s/%s too short for framing (%d samples)",
                    trial.subject_id, trial.trial_id, n)
        return []
    x = trial.input_matrix().astype(np.float32)
    y = trial.target_matrix().astype(np.float32)
    frames = []
    w, h = cfg.window_len, cfg.horizon_len
    for k in range(count):
        t = cfg.burn_in + k * stride
        frames.append(Frame(
            input_block=x[t:t + w].copy(),
            target_block=y[t + w:t + w + h].copy(),
            subject_id=trial.subject_id,
            trial_id=trial.trial_id,
            start_index=t,
        ))
    return frames


@dataclass
class Normalizer:
    """Per-channel min-max affine maps fitted on training data only."""

    input_min: np.ndarray
    input_max: np.ndarray
    target_min: np.ndarray
    target_max: np.ndarray

    def __post_init__(self):
        for lo, hi in ((self.input_min, self.input_max),
                       (self.target_min, self.target_max)):
            if np.any(hi < lo):
                raise DataError("normalizer has max < min")

    @property
    def input_degenerate(self):
        return (self.input_max - self.input_min) < DEGENERATE_EPS

    @property
    def target_degenerate(self):
        return (self.target_max - self.target_min) < DEGENERATE_EPS

    def _apply(self, block, lo, hi, degenerate):
        block = np.asarray(block)
        span = np.where(degenerate, 1.0, hi - lo)
        out = (block - lo) / span
        if degenerate.any():
            out = np.where(degenerate, 0.5, out)
        return out.astype(block.dtype, copy=False)

    def _invert(self, block, lo, hi, degenerate):
        block = np.asarray(block)
        span = np.where(degenerate, 0.0, hi - lo)
        out = block * span + lo
        return out.astype(block.dtype, copy=False)

    def apply_inputs(self, block):
        return self._apply(block, self.input_min, self.input_max, self.input_degenerate)

    def apply_targets(self, block):
        return self._apply(block, self.target_min, self.target_max, self.target_degenerate)

    def invert_inputs(self, block):
        return self._invert(block, self.input_min, self.input_max, self.input_degenerate)

    def invert_targets(self, block):
        return self._invert(block, self.target_min, self.target_max, self.target_degenerate)

    def apply_trial(self, trial):
        """Return a normalized copy of a prepared trial."""
        x = self.apply_inputs(trial.input_matrix())
        y = self.apply_targets(trial.target_matrix())
        channels = {}
        rate = next(iter(trial.channels.values())).sample_rate_hz
        for j, name in enumerate(sch.INPUT_CHANNELS):
            channels[name] = TimeSeriesChannel(x[:, j], rate, name)
        for j, name in enumerate(sch.TARGET_CHANNELS):
            channels[name] = TimeSeriesChannel(y[:, j], rate, name)
        return Trial(trial.subject_id, trial.trial_id, channels, trial.speed_schedule)


def fit_normalizer(trials):
    """Pool per-channel extrema over the given (training) trials."""
    if not trials:
        raise DataError("cannot fit a normalizer on an empty training set")
    imin = np.full(sch.N_INPUTS, np.inf)
    imax = np.full(sch.N_INPUTS, -np.inf)
    tmin = np.full(sch.N_TARGETS, np.inf)
    tmax = np.full(sch.N_TARGETS, -np.inf)
    for trial in trials:
        x = trial.input_matrix()
        y = trial.target_matrix()
        imin = np.minimum(imin, x.min(axis=0))
        imax = np.maximum(imax, x.max(axis=0))
        tmin = np.minimum(tmin, y.min(axis=0))
        tmax = np.maximum(tmax, y.max(axis=0))
    return Normalizer(imin, imax, tmin, tmax)


@dataclass(frozen=True)
class Split:
    """Leave-one-subject-out partition."""

    train_subjects: tuple
    val_subject: str
    test_subject: str


def split_loso(subject_ids, test_id, val_id):
    """Partition subjects into train / one validation / one test."""
    ids = list(subject_ids)
    if len(set(ids)) != len(ids):
        dupes = sorted({s for s in ids if ids.count(s) > 1})
        raise DataError(f"duplicate subject ids: {dupes}")
    if test_id == val_id:
        raise DataError("test and validation subjects must differ")
    for sid, role in ((test_id, "test"), (val_id, "validation")):
        if sid not in ids:
            raise DataError(f"unknown {role} subject id: {sid!r}")
    train = tuple(s for s in ids if s not in (test_id, val_id))
    return Split(train_subjects=train, val_subject=val_id, test_subject=test_id)


def shuffle_frames(frames, seed):
    """Deterministic permutation of a frame list."""
    perm = np.random.default_rng(seed).permutation(len(frames))
    return [frames[i] for i in perm]


def frames_to_arrays(frames):
    """Stack frames into dense arrays plus provenance index arrays."""
    if not frames:
        raise DataError("no frames to stack")
    inputs = np.stack([f.input_block for f in frames]).astype(np.float32)
    targets = np.stack([f.target_block for f in frames]).astype(np.float32)
    subjects = sorted({f.subject_id for f in frames})
    trials = sorted({(f.subject_id, f.trial_id) for f in frames})
    trial_index = {key: i for i, key in enumerate(trials)}
    subject_index = {s: i for i, s in enumerate(subjects)}
    subj = np.array([subject_index[f.subject_id] for f in frames], dtype=np.int32)
    tri = np.array([trial_index[(f.subject_id, f.trial_id)] for f in frames],
                   dtype=np.int32)
    start = np.array([f.start_index for f in frames], dtype=np.int32)
    return {
        "inputs": inputs, "targets": targets,
        "subject_idx": subj, "trial_idx": tri, "start_idx": start,
        "subjects": subjects, "trials": [list(t) for t in trials],
    }
