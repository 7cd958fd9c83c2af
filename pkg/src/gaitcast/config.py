"""Run configuration: one JSON file drives the whole pipeline.

CLI flags override config keys one-to-one. The lineage hash covers every
field that changes the produced data or model (corpus, framing, models,
training, split, seed); presentation-only fields (output directory, metric
scale) stay outside it so reports can be re-rendered without invalidating
artifacts.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .data import FramingConfig
from .errors import ConfigError
from .nn import ModelConfig
from .optim import TrainConfig


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    corpus: dict = field(default_factory=dict)
    framing: FramingConfig = field(default_factory=FramingConfig)
    model_angles: ModelConfig = field(default_factory=ModelConfig)
    model_moments: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    test_id: str = ""
    val_id: str = ""
    metric_scale: str = "normalized"
    eval_frames: int = 1000
    deterministic: bool = False

    def lineage_dict(self):
        return {
            "corpus": self.corpus,
            "framing": asdict(self.framing),
            "model_angles": self.model_angles.to_dict(),
            "model_moments": self.model_moments.to_dict(),
            "train": self.train.to_dict(),
            "split": {"test_id": self.test_id, "val_id": self.val_id},
            "seed": self.seed,
        }

    def config_hash(self):
        blob = json.dumps(self.lineage_dict(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def _model_config(framing, model_dict):
    d = dict(model_dict)
    d.setdefault("window_len", framing.window_len)
    d.setdefault("horizon_len", framing.horizon_len)
    cfg = ModelConfig(**d)
    if cfg.window_len != framing.window_len or cfg.horizon_len != framing.horizon_len:
        raise ConfigError(
            "model window/horizon must match the framing configuration")
    return cfg


def build_run_config(raw, overrides=None):
    """Construct a RunConfig from a parsed JSON dict plus CLI overrides."""
    overrides = overrides or {}
    raw = dict(raw)
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    try:
        framing = FramingConfig(**raw.get("framing", {}))
        base_model = raw.get("model", {})
        model_angles = _model_config(framing, raw.get("model_angles", base_model))
        model_moments = _model_config(framing, raw.get("model_moments", base_model))
        train = TrainConfig(**raw.get("train", {}))
        split = raw.get("split", {})
        cfg = RunConfig(
            seed=int(raw.get("seed", 0)),
            out_dir=str(raw.get("out_dir", "runs/default")),
            corpus=raw.get("corpus", {}),
            framing=framing,
            model_angles=model_angles,
            model_moments=model_moments,
            train=train,
            test_id=str(split.get("test_id", "")),
            val_id=str(split.get("val_id", "")),
            metric_scale=str(raw.get("metric_scale", "normalized")),
            eval_frames=int(raw.get("eval_frames", 1000)),
            deterministic=bool(raw.get("deterministic", False)),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if cfg.metric_scale not in ("normalized", "physical"):
        raise ConfigError(f"metric_scale must be 'normalized' or 'physical', "
                          f"got {cfg.metric_scale!r}")
    if not cfg.corpus:
        raise ConfigError("config must declare a 'corpus' (synth profile or manifest)")
    if "synth" not in cfg.corpus and "manifest" not in cfg.corpus:
        raise ConfigError("corpus must contain either 'synth' or 'manifest'")
    return cfg


def load_run_config(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return build_run_config(raw, overrides)
