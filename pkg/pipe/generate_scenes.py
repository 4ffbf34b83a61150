#!/usr/bin/env python3
"""
generate_scenes.py – synthetischen Datensatz erzeugen
(images/NNNN.pgm, points/NNNN.csv, split.txt).
"""

import argparse
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from bootstrap import add_config_arguments, init as bootstrap_init, overrides_from_args, project_path  # noqa: E402
from core.datagen_io import generate_dataset  # noqa: E402


def build_parser():
    parser = argparse.ArgumentParser(description="Synthetische Zählszenen erzeugen")
    parser.add_argument("--out", type=str, default=None, help="Zielordner (Standard: paths.data_dir)")
    parser.add_argument("--n", type=int, default=None, help="Anzahl Bilder (Standard: dataset.n_images)")
    parser.add_argument("--val-fraction", type=float, default=None)
    parser.add_argument("--quiet", action="store_true")
    return add_config_arguments(parser)


def main(argv=None):
    args = build_parser().parse_args(argv)
    verbose = not args.quiet
    cfg = bootstrap_init(verbose=verbose, config_path=args.config, overrides=overrides_from_args(args))

    out_dir = Path(args.out) if args.out else project_path(cfg, "data_dir")
    n = args.n if args.n is not None else cfg.dataset.n_images
    val_fraction = args.val_fraction if args.val_fraction is not None else cfg.dataset.val_fraction

    generate_dataset(out_dir, n, cfg.scene, val_fraction=val_fraction, seed=cfg.seed, verbose=verbose)
    return 0


if __name__ == "__main__":
    from cli import guarded
    sys.exit(guarded(main))
