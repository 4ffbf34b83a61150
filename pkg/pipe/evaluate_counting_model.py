#!/usr/bin/env python3
"""
evaluate_counting_model.py – Checkpoint auswerten (MAE/RMSE + Lokalisierung).

--oracle     nutzt das Punktgitter als Dichtekarte (Protokoll-Kontrolle)
--dump-maps  schreibt Dichte- und Merkmalskarten als CSV
"""

import argparse
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from bootstrap import add_config_arguments, init as bootstrap_init, overrides_from_args, project_path  # noqa: E402
from core.run_config import load_run_config  # noqa: E402
from core.training import evaluate  # noqa: E402


def build_parser():
    parser = argparse.ArgumentParser(description="Zählmodell auswerten")
    parser.add_argument("--ckpt", type=str, default=None, help="Checkpoint-Ordner (Standard: paths.train_dir)")
    parser.add_argument("--data", type=str, default=None)
    parser.add_argument("--out", type=str, default=None, help="Metrik-CSV (Standard: paths.eval_csv)")
    parser.add_argument("--split", choices=["train", "val", "all"], default="val")
    parser.add_argument("--oracle", action="store_true")
    parser.add_argument("--dump-maps", type=str, default=None, metavar="DIR")
    parser.add_argument("--quiet", action="store_true")
    return add_config_arguments(parser)


def main(argv=None):
    args = build_parser().parse_args(argv)
    verbose = not args.quiet
    overrides = overrides_from_args(args)
    cfg = bootstrap_init(verbose=verbose, config_path=args.config, overrides=overrides)

    ckpt_dir = Path(args.ckpt) if args.ckpt else project_path(cfg, "train_dir")
    # Modellform aus dem Trainingslauf übernehmen, falls vorhanden
    saved = ckpt_dir / "config.yaml"
    if not args.oracle and saved.exists():
        cfg.model = load_run_config(saved).model
        if verbose:
            print(f"📄 Modellkonfiguration aus {saved}")

    data_dir = Path(args.data) if args.data else project_path(cfg, "data_dir")
    out_csv = Path(args.out) if args.out else project_path(cfg, "eval_csv")

    evaluate(cfg, data_dir, ckpt_dir=ckpt_dir, out_csv=out_csv, split=args.split,
             oracle=args.oracle, dump_dir=args.dump_maps, verbose=verbose)
    if verbose:
        print(f"💾 Metriken: {out_csv}")
    return 0


if __name__ == "__main__":
    from cli import guarded
    sys.exit(guarded(main))
