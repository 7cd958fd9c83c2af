"""End-to-end pipeline stages behind the CLI: synthesize, prepare, train,
evaluate, predict."""

import csv
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as dat
from . import dsp
from . import nn
from . import optim
from . import schema as sch
from . import synth
from .container import file_sha256, load_container, save_container
from .errors import ArtifactError, ConfigError, DataError
from .evaluation import build_report, extract_horizons, horizon_offsets
from .report import render_figures, write_report_files, write_traces

log = logging.getLogger("gaitcast.pipeline")

MANIFEST_FORMAT = "gaitcast-corpus-v1"
CACHE_VERSION = 1
FAMILY_SLICES = {"angles": dat.ANGLE_SLICE, "moments": dat.MOMENT_SLICE}


# ---------------------------------------------------------------------------
# corpus


def synth_profile_from_config(corpus_cfg):
    cfg = dict(corpus_cfg.get("synth", {}))
    cfg.pop("subjects", None)
    n_trials = cfg.pop("trials_per_subject", None)
    if n_trials is not None:
        cfg["n_trials"] = int(n_trials)
    if "speed_profile" in cfg and cfg["speed_profile"] is not None:
        cfg["speed_profile"] = tuple(tuple(p) for p in cfg["speed_profile"])
    if "amplitude_scales" in cfg and cfg["amplitude_scales"] is not None:
        scales = cfg["amplitude_scales"]
        cfg["amplitude_scales"] = tuple(scales) if not np.isscalar(scales) else scales
    try:
        return synth.SynthProfile(**cfg)
    except TypeError as exc:
        raise ConfigError(f"invalid synth profile: {exc}") from exc


def write_synth_corpus(run_cfg, corpus_dir):
    """Generate and persist a synthetic corpus; returns the manifest path."""
    profile = synth_profile_from_config(run_cfg.corpus)
    n_subjects = int(run_cfg.corpus.get("synth", {}).get("subjects", 0))
    if n_subjects <= 0:
        raise DataError("empty corpus: 'subjects' must be a positive count")
    corpus_dir = Path(corpus_dir)
    corpus_dir.mkdir(parents=True, exist_ok=True)
    schema = sch.raw_schema(profile.emg_rate, profile.imu_rate, profile.target_rate)
    subjects = []
    for sid, sub_profile, trials in synth.make_corpus(profile, n_subjects,
                                                      run_cfg.seed):
        entry = {"id": sid, "gait_period_s": sub_profile.gait_period_s, "trials": []}
        for trial in trials:
            fname = f"{sid}_{trial.trial_id}.csv"
            dat.save_trial(corpus_dir / fname, trial, schema)
            entry["trials"].append({"id": trial.trial_id, "path": fname,
                                    "speed_schedule": trial.speed_schedule})
        subjects.append(entry)
    manifest = {
        "format": MANIFEST_FORMAT,
        "seed": run_cfg.seed,
        "config_hash": run_cfg.config_hash(),
        "rates": {"emg": profile.emg_rate, "imu": profile.imu_rate,
                  "target": profile.target_rate},
        "profile": _profile_to_json(profile),
        "subjects": subjects,
    }
    manifest_path = corpus_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n",
                             encoding="utf-8")
    n_files = sum(len(s["trials"]) for s in subjects)
    log.info("wrote %d trial files + manifest to %s", n_files, corpus_dir)
    return manifest_path


def _profile_to_json(profile):
    d = asdict(profile)
    if d["speed_profile"] is not None:
        d["speed_profile"] = [list(p) for p in d["speed_profile"]]
    d["amplitude_scales"] = list(d["amplitude_scales"])
    return d


def load_manifest(path):
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: unknown corpus format {manifest.get('format')!r}")
    return manifest


def manifest_path_for(run_cfg):
    if "manifest" in run_cfg.corpus:
        return Path(run_cfg.corpus["manifest"])
    return Path(run_cfg.out_dir) / "corpus" / "manifest.json"


def iter_corpus_trials(manifest, manifest_path):
    """Yield (subject_id, raw Trial) for every trial in the manifest."""
    rates = manifest["rates"]
    schema = sch.raw_schema(rates["emg"], rates["imu"], rates["target"])
    base = Path(manifest_path).parent
    column_map = manifest.get("column_map")
    for subject in manifest["subjects"]:
        for entry in subject["trials"]:
            trial = dat.load_trial(base / entry["path"], schema,
                                   subject_id=subject["id"], trial_id=entry["id"],
                                   column_map=column_map)
            trial.speed_schedule = entry.get("speed_schedule")
            yield subject["id"], trial


# ---------------------------------------------------------------------------
# preparation


def prepare_trial(trial, target_rate=100.0):
    """Raw multi-rate trial -> prepared trial: envelopes, decimation, alignment."""
    channels = {}
    for name, ch in trial.channels.items():
        if name.startswith("emg_"):
            env = dsp.emg_envelope(ch)
            channels[name] = dsp.decimate(env, target_rate)
        elif name.startswith("imu_"):
            channels[name] = (dsp.decimate(ch, target_rate)
                              if ch.sample_rate_hz > target_rate else ch)
        else:
            if abs(ch.sample_rate_hz - target_rate) > 1e-9:
                raise DataError(
                    f"target channel {name} at {ch.sample_rate_hz} Hz; expected "
                    f"{target_rate} Hz")
            channels[name] = ch
    n = min(len(c) for c in channels.values())
    for name, ch in channels.items():
        channels[name] = dsp.TimeSeriesChannel(ch.samples[:n], target_rate, name)
    prepared = dat.Trial(trial.subject_id, trial.trial_id, channels,
                         trial.speed_schedule)
    return dat.check_prepared(prepared, target_rate)


def cache_path_for(run_cfg):
    return Path(run_cfg.out_dir) / "prepared" / f"cache_{run_cfg.config_hash()}.bin"


def prepare_corpus(run_cfg):
    """Run preprocessing + framing + LOSO split + normalization; write the cache.

    Returns a summary dict with per-split frame counts and the cache path.
    """
    manifest_path = manifest_path_for(run_cfg)
    if not manifest_path.exists():
        raise DataError(f"corpus manifest not found at {manifest_path}; "
                        "run `synth` first or point corpus.manifest at one")
    manifest = load_manifest(manifest_path)
    subject_ids = [s["id"] for s in manifest["subjects"]]
    split = dat.split_loso(subject_ids, run_cfg.test_id, run_cfg.val_id)

    target_rate = manifest["rates"]["target"]
    by_subject = {}
    for sid, raw_trial in iter_corpus_trials(manifest, manifest_path):
        by_subject.setdefault(sid, []).append(prepare_trial(raw_trial, target_rate))

    train_trials = [t for s in split.train_subjects for t in by_subject[s]]
    normalizer = dat.fit_normalizer(train_trials)

    framing = run_cfg.framing
    frames = {"train": [], "val": [], "test": []}
    for sid in subject_ids:
        if sid == split.test_subject:
            role, stride = "test", framing.eval_stride
        elif sid == split.val_subject:
            role, stride = "val", framing.stride
        else:
            role, stride = "train", framing.stride
        for trial in by_subject[sid]:
            normalized = normalizer.apply_trial(trial)
            frames[role].extend(dat.make_frames(normalized, framing, stride))

    for role in ("train", "val", "test"):
        if not frames[role]:
            raise DataError(f"no {role} frames were produced; trials too short?")
    held_out = {split.val_subject, split.test_subject}
    leaked = sorted({f.subject_id for f in frames["train"]} & held_out)
    if leaked:
        raise DataError(f"leak check failed: held-out subjects {leaked} in the "
                        "training stream")

    tensors, meta_counts = {}, {}
    subjects_tables, trials_tables = {}, {}
    for role in ("train", "val", "test"):
        arrays = dat.frames_to_arrays(frames[role])
        tensors[f"{role}/inputs"] = arrays["inputs"]
        tensors[f"{role}/targets"] = arrays["targets"]
        tensors[f"{role}/subject_idx"] = arrays["subject_idx"]
        tensors[f"{role}/trial_idx"] = arrays["trial_idx"]
        tensors[f"{role}/start_idx"] = arrays["start_idx"]
        subjects_tables[role] = arrays["subjects"]
        trials_tables[role] = arrays["trials"]
        meta_counts[role] = len(frames[role])
    tensors["norm/input_min"] = normalizer.input_min
    tensors["norm/input_max"] = normalizer.input_max
    tensors["norm/target_min"] = normalizer.target_min
    tensors["norm/target_max"] = normalizer.target_max

    meta = {
        "kind": "frame_cache",
        "version": CACHE_VERSION,
        "config_hash": run_cfg.config_hash(),
        "seed": run_cfg.seed,
        "framing": asdict(framing),
        "split": {"train": list(split.train_subjects), "val": split.val_subject,
                  "test": split.test_subject},
        "counts": meta_counts,
        "subjects": subjects_tables,
        "trials": trials_tables,
        "target_rate": target_rate,
    }
    cache_path = cache_path_for(run_cfg)
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    save_container(cache_path, meta, tensors)
    summary = {"cache_path": str(cache_path), "cache_sha256": file_sha256(cache_path),
               "counts": meta_counts,
               "split": meta["split"]}
    log.info("prepared frames: %s", meta_counts)
    return summary


def load_cache(run_cfg):
    cache_path = cache_path_for(run_cfg)
    if not cache_path.exists():
        raise DataError(f"prepared cache not found at {cache_path}; run `prepare`")
    meta, tensors = load_container(cache_path)
    if meta.get("kind") != "frame_cache" or meta.get("version") != CACHE_VERSION:
        raise ArtifactError(f"{cache_path}: not a compatible frame cache")
    if meta["config_hash"] != run_cfg.config_hash():
        raise ConfigError(
            f"cache {cache_path} was built for config {meta['config_hash']}, "
            f"current config is {run_cfg.config_hash()}")
    normalizer = dat.Normalizer(tensors["norm/input_min"], tensors["norm/input_max"],
                                tensors["norm/target_min"], tensors["norm/target_max"])
    return meta, tensors, normalizer


# ---------------------------------------------------------------------------
# training


def checkpoint_path_for(run_cfg, family):
    return Path(run_cfg.out_dir) / "checkpoints" / f"{family}.ckpt"


def train_family(run_cfg, family, resume=False):
    """Train one network family from the prepared cache; returns checkpoint path."""
    if family not in FAMILY_SLICES:
        raise ConfigError(f"unknown family {family!r}")
    meta, tensors, normalizer = load_cache(run_cfg)
    sl = FAMILY_SLICES[family]
    mcfg = run_cfg.model_angles if family == "angles" else run_cfg.model_moments
    tcfg = optim.TrainConfig(**{**run_cfg.train.to_dict(), "seed": run_cfg.seed})

    ckpt_path = checkpoint_path_for(run_cfg, family)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    if resume and ckpt_path.exists():
        previous = optim.load_checkpoint(ckpt_path)
        if previous.model_config.to_dict() != mcfg.to_dict():
            raise ConfigError(
                f"cannot resume: checkpoint {ckpt_path} was trained with a "
                "different model configuration")
        if previous.config_hash != run_cfg.config_hash():
            raise ConfigError(
                f"cannot resume: checkpoint lineage {previous.config_hash} does not "
                f"match current config {run_cfg.config_hash()}")

    log_dir = Path(run_cfg.out_dir) / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    checkpoint, _ = optim.train_network(
        mcfg, tcfg,
        tensors["train/inputs"], tensors["train/targets"][:, :, sl],
        tensors["val/inputs"], tensors["val/targets"][:, :, sl],
        normalizer=normalizer, family=family, config_hash=run_cfg.config_hash(),
        checkpoint_path=str(ckpt_path),
        log_path=str(log_dir / f"train_{family}.jsonl"))
    return ckpt_path, checkpoint


# ---------------------------------------------------------------------------
# evaluation


def _contiguous_test_slice(meta, tensors, n_wanted, seed, stride):
    """Pick a random-but-contiguous run of test frames from one trial."""
    trial_idx = tensors["test/trial_idx"]
    start_idx = tensors["test/start_idx"]
    best_tid, best_len, best_lo = None, 0, 0
    for tid in np.unique(trial_idx):
        sel = np.flatnonzero(trial_idx == tid)
        # frames are stored per trial in temporal order; verify contiguity
        starts = start_idx[sel]
        if len(sel) and np.all(np.diff(starts) == stride):
            if len(sel) > best_len:
                best_tid, best_len, best_lo = tid, len(sel), sel[0]
    if best_tid is None:
        raise DataError("no contiguous run of test frames available")
    n = min(n_wanted, best_len)
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, best_len - n + 1))
    return slice(best_lo + offset, best_lo + offset + n)


def _denormalize(series_map, normalizer, sl):
    lo = normalizer.target_min[sl]
    span = np.where(normalizer.target_degenerate[sl], 0.0,
                    (normalizer.target_max - normalizer.target_min)[sl])
    for hs in series_map.values():
        hs.truth = hs.truth * span + lo
        hs.pred = hs.pred * span + lo
    return series_map


def evaluate_run(run_cfg, angles_ckpt=None, moments_ckpt=None):
    """Evaluate both checkpoints on the held-out test subject; write reports."""
    meta, tensors, normalizer = load_cache(run_cfg)
    stride = meta["framing"]["eval_stride"]
    sel = _contiguous_test_slice(meta, tensors, run_cfg.eval_frames, run_cfg.seed,
                                 stride)
    inputs = tensors["test/inputs"][sel]
    all_series = {}
    epochs = {}
    for family, ckpt_path in (("angles", angles_ckpt), ("moments", moments_ckpt)):
        path = Path(ckpt_path) if ckpt_path else checkpoint_path_for(run_cfg, family)
        checkpoint = optim.load_checkpoint(path)
        if checkpoint.config_hash != run_cfg.config_hash():
            raise ConfigError(
                f"checkpoint {path} lineage {checkpoint.config_hash} does not match "
                f"current config {run_cfg.config_hash()}")
        sl = FAMILY_SLICES[family]
        truth_blocks = tensors["test/targets"][sel][:, :, sl]
        pred_blocks = optim.predict_blocks(checkpoint.params, checkpoint.model_config,
                                           inputs)
        series = extract_horizons(truth_blocks.astype(np.float64),
                                  pred_blocks.astype(np.float64),
                                  horizon_offsets(checkpoint.model_config.horizon_len))
        if run_cfg.metric_scale == "physical":
            series = _denormalize(series, normalizer, sl)
        all_series[family] = series
        epochs[family] = checkpoint.epoch

    report = build_report(all_series["angles"], all_series["moments"],
                          scale=run_cfg.metric_scale,
                          meta={"config_hash": run_cfg.config_hash(),
                                "seed": run_cfg.seed,
                                "test_subject": meta["split"]["test"],
                                "eval_frames": int(inputs.shape[0]),
                                "checkpoint_epochs": epochs})
    report_dir = Path(run_cfg.out_dir) / "report"
    json_path, txt_path = write_report_files(report, report_dir)
    rate = meta["target_rate"] / stride
    write_traces(all_series["angles"], all_series["moments"], rate,
                 report_dir / "traces")
    render_figures(all_series["angles"], all_series["moments"], rate,
                   report_dir / "figures")
    return report, json_path, txt_path


# ---------------------------------------------------------------------------
# single-window prediction


def _read_window_csv(path, window_len):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty window file")
        missing = [n for n in sch.INPUT_CHANNELS if n not in header]
        if missing:
            raise DataError(f"{path}: missing input columns {missing}")
        cols = [header.index(n) for n in sch.INPUT_CHANNELS]
        rows = list(reader)
    if len(rows) != window_len:
        raise DataError(f"{path}: expected {window_len} rows, found {len(rows)}")
    try:
        window = np.array([[float(r[c]) for c in cols] for r in rows],
                          dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed window data: {exc}") from exc
    return window


def predict_window(checkpoint_path, window_csv, scale="physical"):
    """One-window inference: returns (target channel names, horizon x 6 block)."""
    checkpoint = optim.load_checkpoint(checkpoint_path)
    mcfg = checkpoint.model_config
    window = _read_window_csv(window_csv, mcfg.window_len)
    if checkpoint.normalizer is None:
        raise ArtifactError(f"{checkpoint_path}: checkpoint has no normalizer")
    x = checkpoint.normalizer.apply_inputs(window).astype(np.float32)
    block, _ = nn.model_forward(checkpoint.params, mcfg, x, mode="eval")
    sl = FAMILY_SLICES[checkpoint.family]
    names = sch.TARGET_CHANNELS[sl]
    if scale == "physical":
        norm = checkpoint.normalizer
        span = np.where(norm.target_degenerate[sl], 0.0,
                        (norm.target_max - norm.target_min)[sl])
        block = block * span + norm.target_min[sl]
    return names, np.asarray(block, dtype=np.float64)
