#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Ablations-Zusammenfassung über Seeds.

Liest eine oder mehrere sweep.csv (Spalten axis,value,seed,mae,rmse,...)
und schreibt je (axis, value) den Median über alle Seeds:

  axis,value,n_seeds,median_mae,median_rmse

Konsolen-Aufruf:

  python analyse/ablation_summary.py \
      --sweeps workdir/runs/sweep/setup/sweep.csv \
      --out workdir/runs/sweep/ablation_summary.csv
"""

import argparse
import sys
from pathlib import Path

import pandas as pd

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from core.training import SWEEP_COLUMNS  # noqa: E402
from utils.errors import EmptyInput, FormatError  # noqa: E402

SUMMARY_COLUMNS = ["axis", "value", "n_seeds", "median_mae", "median_rmse"]


def summarize(sweep):
    missing = [c for c in SWEEP_COLUMNS if c not in sweep.columns]
    if missing:
        raise FormatError(f"Sweep-CSV ohne Spalten {missing}")
    if sweep.empty:
        raise EmptyInput("❌ Sweep-CSV enthält keine Zeilen")

    # Reihenfolge der Werte wie im Sweep
    grouped = sweep.groupby(["axis", "value"], sort=False)
    out = grouped.agg(
        n_seeds=("seed", "nunique"),
        median_mae=("mae", "median"),
        median_rmse=("rmse", "median"),
    ).reset_index()
    return out[SUMMARY_COLUMNS]


def main(argv=None):
    parser = argparse.ArgumentParser(description="Median-Vergleich über Seeds")
    parser.add_argument("--sweeps", nargs="+", required=True)
    parser.add_argument("--out", type=str, required=True)
    args = parser.parse_args(argv)

    frames = []
    for path in args.sweeps:
        print(f"📄 Lade {path}")
        frames.append(pd.read_csv(path, dtype={"value": str}))
    summary = summarize(pd.concat(frames, ignore_index=True))

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    summary.to_csv(args.out, index=False, float_format="%.10g")
    print(summary.to_string(index=False))
    print(f"💾 {args.out}")
    return 0


if __name__ == "__main__":
    from cli import guarded
    sys.exit(guarded(main))
