#!/usr/bin/env python3
"""
train_counting_model.py – Zählmodell auf einem Szenen-Datensatz trainieren.
Schreibt train_log.csv, train_summary.csv, config.yaml und den
besten Checkpoint (model.bin + model.manifest) in den Ausgabeordner.
"""

import argparse
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from bootstrap import add_config_arguments, init as bootstrap_init, overrides_from_args, project_path  # noqa: E402
from core.training import train  # noqa: E402


def build_parser():
    parser = argparse.ArgumentParser(description="Zählmodell trainieren")
    parser.add_argument("--data", type=str, default=None, help="Datensatz (Standard: paths.data_dir)")
    parser.add_argument("--out", type=str, default=None, help="Ausgabeordner (Standard: paths.train_dir)")
    parser.add_argument("--quiet", action="store_true")
    return add_config_arguments(parser)


def main(argv=None):
    args = build_parser().parse_args(argv)
    verbose = not args.quiet
    cfg = bootstrap_init(verbose=verbose, config_path=args.config, overrides=overrides_from_args(args))

    data_dir = Path(args.data) if args.data else project_path(cfg, "data_dir")
    out_dir = Path(args.out) if args.out else project_path(cfg, "train_dir")
    train(cfg, data_dir, out_dir, verbose=verbose)
    return 0


if __name__ == "__main__":
    from cli import guarded
    sys.exit(guarded(main))
