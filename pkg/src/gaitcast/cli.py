"""Command-line interface: synth, prepare, train, evaluate, predict.

Exit codes: 0 success, 2 configuration/lineage error, 3 data error,
4 training divergence, 5 artifact/I-O error.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import load_run_config
from .errors import (ArtifactError, ConfigError, DataError, DivergenceError,
                     GaitcastError)
from .evaluation import render_table

log = logging.getLogger("gaitcast")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_ARTIFACT = 5


def _setup_logging():
    level = os.environ.get("GAIT_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _add_common(parser):
    parser.add_argument("--config", required=True, help="run configuration JSON")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="override output directory")
    parser.add_argument("--deterministic", action="store_true",
                        help="force serial execution for bitwise reproducibility")


def _run_config(args, scale=None):
    overrides = {"seed": args.seed, "out_dir": args.out}
    if getattr(args, "deterministic", False):
        overrides["deterministic"] = True
    if scale is not None:
        overrides["metric_scale"] = scale
    return load_run_config(args.config, overrides)


def cmd_synth(args):
    from .pipeline import write_synth_corpus

    cfg = _run_config(args)
    if "synth" not in cfg.corpus:
        raise ConfigError("synth command requires a corpus.synth profile")
    corpus_dir = Path(cfg.out_dir) / "corpus"
    manifest = write_synth_corpus(cfg, corpus_dir)
    print(f"corpus manifest: {manifest}")
    return EXIT_OK


def cmd_prepare(args):
    from .pipeline import prepare_corpus

    cfg = _run_config(args)
    summary = prepare_corpus(cfg)
    print(f"cache: {summary['cache_path']}")
    print(f"cache sha256: {summary['cache_sha256']}")
    for role in ("train", "val", "test"):
        print(f"{role} frames: {summary['counts'][role]}")
    return EXIT_OK


def cmd_train(args):
    from .pipeline import train_family

    cfg = _run_config(args)
    families = ["angles", "moments"] if args.which == "both" else [args.which]
    for family in families:
        path, checkpoint = train_family(cfg, family, resume=args.resume)
        print(f"{family}: checkpoint {path} (epoch {checkpoint.epoch}, "
              f"best val MSE {checkpoint.best_val_mse:.6g})")
    return EXIT_OK


def cmd_evaluate(args):
    from .pipeline import evaluate_run

    cfg = _run_config(args, scale=args.scale)
    report, json_path, txt_path = evaluate_run(cfg, angles_ckpt=args.angles_ckpt,
                                               moments_ckpt=args.moments_ckpt)
    print(render_table(report), end="")
    print(f"report: {json_path}")
    return EXIT_OK


def cmd_predict(args):
    from .pipeline import predict_window

    names, block = predict_window(args.checkpoint, args.window,
                                  scale=args.scale or "physical")
    print(",".join(names))
    for row in block:
        print(",".join(format(v, ".6g") for v in row))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gaitcast",
        description="Long-horizon prediction of lower-limb joint angles and "
                    "moments from fused sEMG+IMU windows.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus on disk")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="preprocess, frame, split, and cache")
    _add_common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the prediction networks")
    _add_common(p)
    p.add_argument("--which", choices=["angles", "moments", "both"], default="both")
    p.add_argument("--resume", action="store_true",
                   help="continue from an existing compatible checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate checkpoints on the test subject")
    _add_common(p)
    p.add_argument("--scale", choices=["normalized", "physical"], default=None)
    p.add_argument("--angles-ckpt", dest="angles_ckpt", default=None)
    p.add_argument("--moments-ckpt", dest="moments_ckpt", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="single-window inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--window", required=True,
                   help="CSV with the 35 input channels, one window of rows")
    p.add_argument("--scale", choices=["normalized", "physical"], default="physical")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except DivergenceError as exc:
        log.error("training diverged: %s", exc)
        if exc.last_checkpoint:
            log.error("last good checkpoint: %s", exc.last_checkpoint)
        return EXIT_DIVERGENCE
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (ArtifactError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ARTIFACT
    except GaitcastError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
