"""End-to-end CLI tests at desk scale: every subcommand, error paths, lineage."""

import json
from pathlib import Path

import numpy as np
import pytest

from gaitcast import cli
from gaitcast import schema as sch
from gaitcast.container import file_sha256


def desk_config(tmp_path, **overrides):
    cfg = {
        "seed": 11,
        "out_dir": str(tmp_path / "run"),
        "corpus": {"synth": {"subjects": 3, "trials_per_subject": 1,
                             "duration_s": 4.0, "gait_period_s": 1.0,
                             "noise_std": 0.02}},
        "framing": {"window_len": 20, "horizon_len": 5, "stride": 4,
                    "eval_stride": 1},
        "model": {"bilstm_units": 8, "embed_dim": 16, "num_heads": 2,
                  "ffn_dim": 32, "dropout_rate": 0.1},
        "train": {"epochs": 2, "batch_size": 64},
        "split": {"test_id": "S02", "val_id": "S01"},
        "eval_frames": 120,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    """One complete synth -> prepare -> train -> evaluate pipeline."""
    tmp_path = tmp_path_factory.mktemp("cli")
    config, raw = desk_config(tmp_path)
    assert cli.main(["synth", "--config", str(config)]) == 0
    assert cli.main(["prepare", "--config", str(config)]) == 0
    assert cli.main(["train", "--config", str(config), "--which", "both"]) == 0
    assert cli.main(["evaluate", "--config", str(config)]) == 0
    return tmp_path, config, raw


class TestSynth:
    def test_writes_one_file_per_trial_plus_manifest(self, tmp_path):
        config, _ = desk_config(tmp_path, corpus={"synth": {
            "subjects": 4, "trials_per_subject": 2, "duration_s": 2.0}})
        assert cli.main(["synth", "--config", str(config)]) == 0
        corpus = tmp_path / "run" / "corpus"
        csvs = sorted(p.name for p in corpus.glob("*.csv"))
        assert len(csvs) == 8
        assert (corpus / "manifest.json").exists()

    def test_rerun_is_bitwise_identical(self, tmp_path):
        config, _ = desk_config(tmp_path, corpus={"synth": {
            "subjects": 2, "trials_per_subject": 1, "duration_s": 2.0}})
        assert cli.main(["synth", "--config", str(config)]) == 0
        corpus = tmp_path / "run" / "corpus"
        before = {p.name: file_sha256(p) for p in corpus.iterdir()}
        assert cli.main(["synth", "--config", str(config)]) == 0
        after = {p.name: file_sha256(p) for p in corpus.iterdir()}
        assert before == after

    def test_zero_subjects_is_an_error(self, tmp_path):
        config, _ = desk_config(tmp_path, corpus={"synth": {"subjects": 0}})
        assert cli.main(["synth", "--config", str(config)]) == cli.EXIT_DATA


class TestPrepare:
    def test_counts_match_closed_form(self, full_run, capsys):
        tmp_path, config, raw = full_run
        # 4 s at 100 Hz -> 400 samples; (400-25)//4+1 per train/val trial
        cache = json.loads((tmp_path / "run" / "corpus" / "manifest.json")
                           .read_text())
        assert cli.main(["prepare", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        per_trial = (400 - 25) // 4 + 1
        assert f"train frames: {per_trial}" in out
        assert f"val frames: {per_trial}" in out
        assert f"test frames: {(400 - 25) // 1 + 1}" in out

    def test_missing_test_subject_named(self, tmp_path):
        config, _ = desk_config(tmp_path, split={"test_id": "S99",
                                                 "val_id": "S01"})
        assert cli.main(["synth", "--config", str(config)]) == 0
        assert cli.main(["prepare", "--config", str(config)]) == cli.EXIT_DATA

    def test_rerun_same_seed_identical_cache(self, tmp_path, capsys):
        config, _ = desk_config(tmp_path)
        assert cli.main(["synth", "--config", str(config)]) == 0
        assert cli.main(["prepare", "--config", str(config)]) == 0
        first = capsys.readouterr().out
        assert cli.main(["prepare", "--config", str(config)]) == 0
        second = capsys.readouterr().out
        sha = [l for l in first.splitlines() if "sha256" in l]
        assert sha and sha == [l for l in second.splitlines() if "sha256" in l]

    def test_prepare_without_corpus_fails(self, tmp_path):
        config, _ = desk_config(tmp_path)
        assert cli.main(["prepare", "--config", str(config)]) == cli.EXIT_DATA


class TestTrain:
    def test_both_families_write_checkpoints(self, full_run):
        tmp_path, _, _ = full_run
        ckpts = tmp_path / "run" / "checkpoints"
        assert (ckpts / "angles.ckpt").exists()
        assert (ckpts / "moments.ckpt").exists()
        logs = tmp_path / "run" / "logs"
        assert (logs / "train_angles.jsonl").exists()
        assert (logs / "train_moments.jsonl").exists()

    def test_missing_cache_fails(self, tmp_path):
        config, _ = desk_config(tmp_path)
        assert cli.main(["synth", "--config", str(config)]) == 0
        assert cli.main(["train", "--config", str(config)]) == cli.EXIT_DATA

    def test_altered_config_invalidates_cache_lineage(self, full_run):
        tmp_path, config, raw = full_run
        altered = dict(raw)
        altered["model"] = dict(raw["model"], embed_dim=32, num_heads=4)
        alt_path = Path(str(config)).parent / "altered.json"
        alt_path.write_text(json.dumps(altered))
        code = cli.main(["train", "--config", str(alt_path), "--which", "angles",
                         "--resume"])
        # the prepared cache is keyed by the lineage hash, so it is not found
        assert code == cli.EXIT_DATA

    def test_resume_with_altered_model_refused(self, full_run):
        from gaitcast import nn, optim

        tmp_path, config, _ = full_run
        ckpt_path = tmp_path / "run" / "checkpoints" / "angles.ckpt"
        original = ckpt_path.read_bytes()
        try:
            # plant a checkpoint trained with a different architecture
            other_cfg = nn.ModelConfig(window_len=20, input_channels=35,
                                       bilstm_units=4, embed_dim=8, num_heads=2,
                                       ffn_dim=16, horizon_len=5,
                                       output_channels=6)
            params = nn.init_params(other_cfg, seed=0)
            cp = optim.Checkpoint(
                params=params, opt_state=optim.init_optimizer(params),
                normalizer=None, model_config=other_cfg,
                train_config=optim.TrainConfig(), config_hash="whatever",
                seed=0, family="angles", epoch=0, best_val_mse=1.0)
            optim.save_checkpoint(cp, ckpt_path)
            code = cli.main(["train", "--config", str(config),
                             "--which", "angles", "--resume"])
            assert code == cli.EXIT_CONFIG
        finally:
            ckpt_path.write_bytes(original)

    def test_resume_from_compatible_checkpoint(self, full_run):
        tmp_path, config, _ = full_run
        assert cli.main(["train", "--config", str(config), "--which", "angles",
                         "--resume"]) == 0


class TestEvaluate:
    def test_report_files_written(self, full_run):
        tmp_path, _, _ = full_run
        report_dir = tmp_path / "run" / "report"
        assert (report_dir / "report.json").exists()
        assert (report_dir / "report.txt").exists()
        traces = list((report_dir / "traces").glob("*.csv"))
        assert len(traces) == 12
        figures = sorted(p.name for p in (report_dir / "figures").glob("*.png"))
        assert figures == ["angles.png", "moments.png"]

    def test_report_has_all_24_cells(self, full_run):
        tmp_path, _, _ = full_run
        report = json.loads((tmp_path / "run" / "report" / "report.json")
                            .read_text())
        assert len(report["rows"]) == 24
        keys = {(r["quantity"], r["joint"], r["horizon"]) for r in report["rows"]}
        assert len(keys) == 24
        for row in report["rows"]:
            assert row["rmse"] >= row["mae"]

    def test_truncated_checkpoint_nonzero_exit_no_report(self, full_run, tmp_path_factory):
        tmp_path, config, raw = full_run
        scratch = tmp_path_factory.mktemp("trunc")
        bad = scratch / "angles.ckpt"
        blob = (tmp_path / "run" / "checkpoints" / "angles.ckpt").read_bytes()
        bad.write_bytes(blob[:len(blob) // 3])
        code = cli.main(["evaluate", "--config", str(config),
                         "--angles-ckpt", str(bad)])
        assert code == cli.EXIT_ARTIFACT

    def test_physical_scale_flag(self, full_run):
        tmp_path, config, _ = full_run
        assert cli.main(["evaluate", "--config", str(config), "--scale",
                         "physical"]) == 0
        report = json.loads((tmp_path / "run" / "report" / "report.json")
                            .read_text())
        assert report["scale"] == "physical"

    def test_lineage_mismatch_refused(self, full_run, tmp_path_factory):
        from gaitcast import optim

        tmp_path, config, raw = full_run
        scratch = tmp_path_factory.mktemp("lineage")
        # same architecture, but stamped with a foreign lineage hash
        good = optim.load_checkpoint(tmp_path / "run" / "checkpoints" /
                                     "angles.ckpt")
        good.config_hash = "deadbeefdeadbeef"
        foreign = scratch / "foreign.ckpt"
        optim.save_checkpoint(good, foreign)
        code = cli.main(["evaluate", "--config", str(config),
                         "--angles-ckpt", str(foreign)])
        assert code == cli.EXIT_CONFIG


class TestPredict:
    def test_prints_horizon_block(self, full_run, tmp_path_factory, capsys):
        tmp_path, config, raw = full_run
        # build a prepared window by hand: constant plausible values
        scratch = tmp_path_factory.mktemp("predict")
        window = scratch / "window.csv"
        header = ",".join(sch.INPUT_CHANNELS)
        row = ",".join(["0.3"] * sch.N_INPUTS)
        window.write_text(header + "\n" + "\n".join([row] * 20) + "\n")
        ckpt = tmp_path / "run" / "checkpoints" / "angles.ckpt"
        assert cli.main(["predict", "--checkpoint", str(ckpt),
                         "--window", str(window)]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out[0].split(",") == sch.ANGLE_CHANNELS
        assert len(out) == 1 + 5  # header + horizon rows
        assert all(len(line.split(",")) == 6 for line in out[1:])

    def test_wrong_row_count_rejected(self, full_run, tmp_path_factory):
        tmp_path, _, _ = full_run
        scratch = tmp_path_factory.mktemp("predict2")
        window = scratch / "short.csv"
        header = ",".join(sch.INPUT_CHANNELS)
        row = ",".join(["0.0"] * sch.N_INPUTS)
        window.write_text(header + "\n" + row + "\n")
        ckpt = tmp_path / "run" / "checkpoints" / "angles.ckpt"
        assert cli.main(["predict", "--checkpoint", str(ckpt),
                         "--window", str(window)]) == cli.EXIT_DATA


class TestConfigValidation:
    def test_bad_json_is_config_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert cli.main(["prepare", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_missing_corpus_is_config_error(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("{}")
        assert cli.main(["prepare", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_bad_scale_rejected(self, tmp_path):
        config, _ = desk_config(tmp_path, metric_scale="percent")
        assert cli.main(["prepare", "--config", str(config)]) == cli.EXIT_CONFIG

    def test_seed_override_changes_lineage(self, tmp_path):
        from gaitcast.config import load_run_config
        config, _ = desk_config(tmp_path)
        a = load_run_config(config)
        b = load_run_config(config, {"seed": 123})
        assert a.config_hash() != b.config_hash()
        c = load_run_config(config, {"out_dir": "elsewhere"})
        assert a.config_hash() == c.config_hash()  # presentation only
