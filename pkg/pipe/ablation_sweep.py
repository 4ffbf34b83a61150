#!/usr/bin/env python3
"""
ablation_sweep.py – eine Achse über mehrere Werte und Seeds variieren.

Achsen: mask_ratio, mask_strategy, mpm_layers, clm_variant, dilation,
alpha, beta, setup (baseline = α=β=0, full = Konfiguration).

Beispiel:
    python cli.py ablate --axis mask_ratio --values 0,0.15,0.75 --seeds 0,1,2
"""

import argparse
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from bootstrap import add_config_arguments, init as bootstrap_init, overrides_from_args, project_path  # noqa: E402
from core.training import AXES, ablate, parse_axis_value  # noqa: E402
from utils.errors import UnknownAxis  # noqa: E402


def _split(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser():
    parser = argparse.ArgumentParser(description="Ablations-Sweep")
    parser.add_argument("--axis", type=str, required=True, help=f"eine von {list(AXES)}")
    parser.add_argument("--values", type=str, required=True, help="kommagetrennt")
    parser.add_argument("--seeds", type=str, default="0,1,2,3,4")
    parser.add_argument("--data", type=str, default=None)
    parser.add_argument("--out", type=str, default=None, help="Standard: paths.sweep_dir/<axis>")
    parser.add_argument("--quiet", action="store_true")
    return add_config_arguments(parser)


def main(argv=None):
    args = build_parser().parse_args(argv)
    verbose = not args.quiet
    if args.axis not in AXES:
        raise UnknownAxis(f"❌ Unbekannte Sweep-Achse '{args.axis}', erlaubt: {list(AXES)}")
    values = _split(args.values)
    for v in values:
        parse_axis_value(args.axis, v)
    seeds = [int(s) for s in _split(args.seeds)]

    cfg = bootstrap_init(verbose=verbose, config_path=args.config, overrides=overrides_from_args(args))
    data_dir = Path(args.data) if args.data else project_path(cfg, "data_dir")
    out_dir = Path(args.out) if args.out else project_path(cfg, "sweep_dir") / args.axis

    ablate(cfg, data_dir, out_dir, args.axis, values, seeds, verbose=verbose)
    return 0


if __name__ == "__main__":
    from cli import guarded
    sys.exit(guarded(main))
