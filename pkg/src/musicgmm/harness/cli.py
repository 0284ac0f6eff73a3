"""Command-line entry point: ``musicgmm {train,run,sweep,validate}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from ..gmm_cme import ModelFormatError, TrainingError
from ..numerics import NumericalError
from .config import PRESETS, ExperimentConfig, config_from_mapping, load_config, parse_override, \
    preset
from .pipeline import artifacts_dir, run_sweep, train_pipeline, training_points
from .results import emit_csv

log = logging.getLogger("musicgmm")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--trials", type=int, help="Monte-Carlo trials per sweep point")
    p.add_argument("--threads", type=int, help="worker threads for trials")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (TOML value syntax), repeatable")
    p.add_argument("--no-timing", action="store_true",
                   help="write wall_s as 0 so repeated runs give identical CSV bytes")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="musicgmm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit and persist models for every training point of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="models directory")
    _common(p)

    p = sub.add_parser("run", help="evaluate a config with previously trained models")
    p.add_argument("--config", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    _common(p)

    p = sub.add_parser("sweep", help="run a built-in preset (trains as needed)")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--out", help="CSV path (default <preset>.csv)")
    p.add_argument("--models", help="cache directory for trained models")
    p.add_argument("--paper-scale", action="store_true",
                   help="full-size trials, training set and mixture order")
    _common(p)

    p = sub.add_parser("validate", help="run the small-size property and oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    mapping = dict(parse_override(o) for o in args.overrides)
    for key in ("seed", "trials", "threads"):
        if getattr(args, key) is not None:
            mapping[key] = getattr(args, key)
    return config_from_mapping(mapping, cfg) if mapping else cfg


def _write(table, path, args) -> None:
    emit_csv(table, path, timings=not args.no_timing)
    print(f"wrote {len(table.rows)} rows to {path}")


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    for point in training_points(cfg):
        t0 = time.perf_counter()
        d = artifacts_dir(args.out, point)
        train_pipeline(point, d)
        print(f"trained {point.training_label()} -> {d} ({time.perf_counter() - t0:.1f} s)")
    return 0


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    table = run_sweep(cfg, cache_root=args.models, allow_training=False)
    _write(table, args.out, args)
    return 0


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(preset(args.preset, paper_scale=args.paper_scale), args)
    table = run_sweep(cfg, cache_root=args.models)
    _write(table, args.out or cfg.output, args)
    return 0


def cmd_validate(args) -> int:
    from .validate import run_all

    return 0 if run_all(seed=args.seed) else 1


COMMANDS = {"train": cmd_train, "run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ModelFormatError, TrainingError, NumericalError, ValueError, OSError) as err:
        print(f"musicgmm {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
