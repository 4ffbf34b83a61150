# crowd_counting_desk/core/training.py

"""
Trainings-, Auswertungs- und Ablationsschleifen.

train     → train_log.csv, train_summary.csv, config.yaml, model.bin/.manifest
evaluate  → Metrik-CSV (Bildzeilen + Summary-Zeile)
ablate    → Sweep-CSV, eine Zeile je (Einstellung, Seed)
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from tqdm import tqdm

from core import diffcore as dc
from core.backbone import feature_response
from core.clm import contrastive_batch_loss, label_grid
from core.datagen_io import load_checkpoint, load_dataset, save_checkpoint
from core.evalmetrics import evaluate_density_maps, mae_rmse
from core.losses import density_loss, make_ground_truth
from core.model import CountingModel
from core.mpm import consistent_loss, make_mask
from core.optim import Adam
from utils.errors import EmptyInput, NonFiniteValue, UnknownAxis

LOG_COLUMNS = ["epoch", "l_d", "l_mp", "l_cl", "total", "val_mae", "val_rmse"]
SUMMARY_COLUMNS = ["initial_val_mae", "best_val_mae", "best_epoch"]
SWEEP_COLUMNS = ["axis", "value", "seed", "mae", "rmse", "precision", "recall", "f1"]

AXES = {
    "mask_ratio": "mask.ratio",
    "mask_strategy": "mask.strategy",
    "mpm_layers": "model.mpm_layers",
    "clm_variant": "clm.variant",
    "dilation": "clm.dilation",
    "alpha": "loss.alpha",
    "beta": "loss.beta",
    "setup": None,
}
SETUPS = ("baseline", "full")

FLOAT_FORMAT = "%.10g"


@dataclass
class TrainResult:
    log: pd.DataFrame
    initial_val_mae: float
    best_val_mae: float
    best_epoch: int
    out_dir: Path


def mask_seed(seed, epoch, index):
    """Masken-Seed je (Lauf, Epoche, Bild); unabhängig von der Batch-Reihenfolge."""
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


def _csv(df, path):
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


# ----------------------------------------------------------------------
# Batch-Loss
# ----------------------------------------------------------------------
def batch_loss(model, batch, cfg, epoch, verbose=False):
    """
    batch: Liste von (index, Sample).
    Gibt (total, parts) zurück; parts enthält Python-Floats und Skip-Zähler.
    """
    w = cfg.loss
    use_mpm = model.encoder is not None and w.alpha > 0
    use_clm = w.beta > 0

    l_d_sum, l_mp_sum = dc.DenseArray(0.0), dc.DenseArray(0.0)
    projs, grids, seeds = [], [], []
    ot_skips = 0
    for index, sample in batch:
        h, w_px = sample.image.shape
        mask = None
        if use_mpm:
            seed = mask_seed(cfg.seed, epoch, index)
            seeds.append(seed)
            n5 = (h // 32) * (w_px // 32)
            mask = make_mask(n5, cfg.mask.ratio, cfg.mask.strategy, (h // 32, w_px // 32), seed)

        out = model.forward(sample.image, mask=mask, with_clm=use_clm)
        gt = make_ground_truth(sample.points, h, w_px)
        l_d, ot = density_loss(out.density, gt, w, cfg.sinkhorn, verbose=verbose)
        ot_skips += int(ot is not None and ot.skipped)
        l_d_sum = l_d_sum + l_d

        if use_mpm and out.fd_masked is not None:
            l_mp_sum = l_mp_sum + consistent_loss(
                out.fd_masked, out.fd, mask, cfg.mask.loss_variant,
                p5_flat=out.p5, readout=model.encoder.readout, target_grad=cfg.mask.target_grad,
            )
        if use_clm:
            projs.append(out.proj)
            grids.append(label_grid(sample.points, h, w_px, dilation=cfg.clm.dilation,
                                    head_min=cfg.clm.head_min, head_max=cfg.clm.head_max))

    n = float(len(batch))
    l_d, l_mp = l_d_sum / n, l_mp_sum / n
    l_cl, clm_skips = (contrastive_batch_loss(projs, grids, cfg.clm.variant, verbose=verbose)
                       if use_clm else (dc.DenseArray(0.0), 0))

    total = l_d
    if use_mpm:
        total = total + w.alpha * l_mp
    if use_clm:
        total = total + w.beta * l_cl

    parts = {
        "l_d": l_d.item(), "l_mp": l_mp.item(), "l_cl": l_cl.item(), "total": total.item(),
        "clm_skips": clm_skips, "ot_skips": ot_skips, "mask_seeds": seeds,
    }
    return total, parts


# ----------------------------------------------------------------------
# Validierung
# ----------------------------------------------------------------------
def predict_counts(model, samples):
    return [float(model.predict(s.image).sum()) for _, s in samples]


def validate_counts(model, samples):
    if not samples:
        return np.nan, np.nan
    return mae_rmse(predict_counts(model, samples), [s.count for _, s in samples])


def _dump_nan(out_dir, epoch, batch_idx, batch, parts):
    dump = {
        "epoch": int(epoch),
        "batch": int(batch_idx),
        "images": [int(i) for i, _ in batch],
        "mask_seeds": [int(s) for s in parts["mask_seeds"]],
        "l_d": float(parts["l_d"]),
        "l_mp": float(parts["l_mp"]),
        "l_cl": float(parts["l_cl"]),
    }
    path = Path(out_dir) / "nan_dump.yaml"
    with open(path, "w") as f:
        yaml.safe_dump(dump, f, sort_keys=False)
    return path


# ----------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------
def train(cfg, data_dir, out_dir, verbose=True):
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_set = [(int(name), s) for name, s in load_dataset(data_dir, "train", verbose=verbose)]
    val_set = [(int(name), s) for name, s in load_dataset(data_dir, "val", verbose=verbose)]
    if not train_set:
        raise EmptyInput(f"❌ Keine Trainingsbilder in {data_dir}")

    model = CountingModel(cfg.model)
    params = model.named_parameters()
    opt = Adam(params, lr=cfg.optim.lr, betas=tuple(cfg.optim.betas), eps=cfg.optim.eps)
    cfg.save(out_dir / "config.yaml")

    initial_mae, _ = validate_counts(model, val_set)
    best_mae, best_epoch = np.inf, 0
    if verbose:
        print(f"🚀 Training: {len(train_set)} train / {len(val_set)} val, "
              f"{cfg.optim.epochs} Epochen, Batch {cfg.optim.batch_size}")
        print(f"📊 Epoche 0: val MAE {initial_mae:.4f}")

    rows = []
    bs = cfg.optim.batch_size
    for epoch in range(1, cfg.optim.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
        batches = [[train_set[i] for i in order[k:k + bs]] for k in range(0, len(order), bs)]
        sums = {"l_d": 0.0, "l_mp": 0.0, "l_cl": 0.0, "total": 0.0}
        clm_skips = ot_skips = 0

        for b_idx, batch in enumerate(tqdm(batches, desc=f"Epoche {epoch}", disable=not verbose, leave=False)):
            total, parts = batch_loss(model, batch, cfg, epoch)
            if not np.isfinite(parts["total"]):
                path = _dump_nan(out_dir, epoch, b_idx, batch, parts)
                raise NonFiniteValue(f"❌ Loss nicht endlich in Epoche {epoch}, Batch {b_idx} (Dump: {path})")
            opt.zero_grad()
            total.backward()
            opt.step()
            for k in sums:
                sums[k] += parts[k]
            clm_skips += parts["clm_skips"]
            ot_skips += parts["ot_skips"]

        val_mae, val_rmse = validate_counts(model, val_set)
        row = {"epoch": epoch, **{k: v / len(batches) for k, v in sums.items()},
               "val_mae": val_mae, "val_rmse": val_rmse}
        rows.append(row)

        if val_set and val_mae < best_mae:
            best_mae, best_epoch = val_mae, epoch
            save_checkpoint(params, out_dir)
        if verbose:
            print(f"📊 Epoche {epoch}: total {row['total']:.4f} (L_d {row['l_d']:.4f}, "
                  f"L_mp {row['l_mp']:.4f}, L_cl {row['l_cl']:.4f}) · val MAE {val_mae:.4f} "
                  f"· Skips CLM {clm_skips} / OT {ot_skips}")

    if not val_set:
        save_checkpoint(params, out_dir)
        best_mae, best_epoch = np.nan, cfg.optim.epochs
        if verbose:
            print("⚠️ Kein Validierungssplit – letzter Stand gespeichert")

    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    _csv(log, out_dir / "train_log.csv")
    _csv(pd.DataFrame([[initial_mae, best_mae, best_epoch]], columns=SUMMARY_COLUMNS),
         out_dir / "train_summary.csv")

    if verbose:
        print(f"💾 Checkpoint + Logs: {out_dir}")
        print(f"✔ Beste val MAE {best_mae:.4f} (Epoche {best_epoch}, Start {initial_mae:.4f})")
    return TrainResult(log=log, initial_val_mae=initial_mae, best_val_mae=best_mae,
                       best_epoch=best_epoch, out_dir=out_dir)


# ----------------------------------------------------------------------
# Auswertung
# ----------------------------------------------------------------------
def _write_grid(path, grid):
    pd.DataFrame(np.asarray(grid)).to_csv(path, index=False, header=False, float_format=FLOAT_FORMAT)


def evaluate(cfg, data_dir, ckpt_dir=None, out_csv=None, split="val", oracle=False,
             dump_dir=None, verbose=True):
    """
    Dichtekarten für alle Bilder des Splits (oder Punktgitter bei `oracle`)
    → Lokalisierung + Zählfehler. Der CLM-Kopf wird nicht ausgewertet.
    """
    cfg.validate()
    samples = load_dataset(data_dir, None if split == "all" else split, verbose=verbose)
    if not samples:
        raise EmptyInput(f"❌ Keine Bilder ({split}) in {data_dir}")

    model = None
    if not oracle:
        model = CountingModel(cfg.model)
        load_checkpoint(model.named_parameters(), ckpt_dir)
        if verbose:
            print(f"📄 Checkpoint geladen: {ckpt_dir}")

    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)

    maps = []
    for name, sample in tqdm(samples, desc="Auswertung", disable=not verbose, leave=False):
        h, w = sample.image.shape
        if oracle:
            dmap = make_ground_truth(sample.points, h, w).dot_grid
        else:
            with dc.no_grad():
                out = model.forward(sample.image)
            dmap = out.density.d.data
            if dump_dir is not None:
                _write_grid(Path(dump_dir) / f"{name}_features.csv", feature_response(out.fused))
        if dump_dir is not None:
            _write_grid(Path(dump_dir) / f"{name}_density.csv", dmap[0])
        maps.append(dmap)

    report = evaluate_density_maps(maps, [s.points for _, s in samples], cfg.eval,
                                   names=[name for name, _ in samples])
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        report.to_csv(out_csv)
    if verbose:
        print(f"📊 MAE {report.mae:.4f} · RMSE {report.rmse:.4f} · "
              f"P {report.precision:.3f} R {report.recall:.3f} F1 {report.f1:.3f} (σ={cfg.eval.sigma})")
    return report


# ----------------------------------------------------------------------
# Ablation
# ----------------------------------------------------------------------
def parse_axis_value(axis, raw):
    """CLI-/YAML-Wert in den Typ des Zielfelds umwandeln."""
    if axis not in AXES:
        raise UnknownAxis(f"❌ Unbekannte Sweep-Achse '{axis}', erlaubt: {list(AXES)}")
    raw = str(raw)
    if axis in ("mask_ratio", "alpha", "beta"):
        return float(raw)
    if axis == "mpm_layers":
        return int(raw)
    if axis == "dilation":
        return int(raw) if raw.isdigit() else raw
    if axis == "setup" and raw not in SETUPS:
        raise UnknownAxis(f"❌ setup='{raw}', erlaubt: {SETUPS}")
    return raw


def configure(cfg, axis, value):
    run = cfg.copy()
    if axis == "setup":
        if value == "baseline":
            run.loss.alpha = 0.0
            run.loss.beta = 0.0
        return run
    return run.set(AXES[axis], value)


def ablate(cfg, data_dir, out_dir, axis, values, seeds, verbose=True):
    """Trainiert und bewertet jede (Einstellung, Seed)-Kombination."""
    if axis not in AXES:
        raise UnknownAxis(f"❌ Unbekannte Sweep-Achse '{axis}', erlaubt: {list(AXES)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for value in [parse_axis_value(axis, v) for v in values]:
        for seed in seeds:
            run = configure(cfg, axis, value)
            run.seed = int(seed)
            run.model.init_seed = int(seed)
            run.validate()
            run_dir = out_dir / f"{axis}={value}" / f"seed={seed}"
            if verbose:
                print(f"🚀 Sweep {axis}={value}, Seed {seed}")
            train(run, data_dir, run_dir, verbose=False)
            rep = evaluate(run, data_dir, ckpt_dir=run_dir, out_csv=run_dir / "eval.csv",
                           split="val", verbose=False)
            rows.append([axis, value, int(seed), rep.mae, rep.rmse, rep.precision, rep.recall, rep.f1])
            if verbose:
                print(f"   📊 MAE {rep.mae:.4f}, F1 {rep.f1:.3f}")

    df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    _csv(df, out_dir / "sweep.csv")
    if verbose:
        print(f"💾 Sweep-Ergebnis: {out_dir / 'sweep.csv'}")
    return df
