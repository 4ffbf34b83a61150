import numpy as np
import pandas as pd
import pytest
import yaml

import cli
from analyse.ablation_summary import SUMMARY_COLUMNS as ABLATION_COLUMNS, summarize
from conftest import tiny_run_config
from core import diffcore as dc, training
from core.datagen_io import Sample, SceneConfig, generate_dataset, write_sample
from core.evalmetrics import CSV_COLUMNS
from core.model import CountingModel
from core.training import (
    LOG_COLUMNS, SUMMARY_COLUMNS, SWEEP_COLUMNS, ablate, configure, evaluate, mask_seed, parse_axis_value, train,
)
from pipe import selftest
from utils.errors import EmptyInput, NonFiniteValue, UnknownAxis


@pytest.fixture
def dataset(tmp_path, tiny_cfg):
    data_dir = tmp_path / "scenes"
    generate_dataset(data_dir, 8, tiny_cfg.scene, val_fraction=0.25, seed=0, verbose=False)
    return data_dir


def _header(path):
    return path.read_text().splitlines()[0].split(",")


# ------------------------------------------------------------
# Training
# ------------------------------------------------------------
def test_one_epoch_writes_log_and_checkpoint(dataset, tmp_path, tiny_cfg):
    # setup
    out = tmp_path / "run"
    result = train(tiny_cfg, dataset, out, verbose=False)

    # check
    assert len(result.log) == 1
    assert (out / "model.bin").exists() and (out / "model.manifest").exists()
    assert (out / "config.yaml").exists()
    assert _header(out / "train_log.csv") == LOG_COLUMNS
    assert _header(out / "train_summary.csv") == SUMMARY_COLUMNS
    assert np.isfinite(result.log["total"]).all()
    assert result.best_epoch == 1


def test_training_is_deterministic(dataset, tmp_path):
    # setup
    cfg = tiny_run_config(optim__epochs=2)

    # check
    train(cfg, dataset, tmp_path / "a", verbose=False)
    train(cfg, dataset, tmp_path / "b", verbose=False)
    assert (tmp_path / "a" / "train_log.csv").read_bytes() == (tmp_path / "b" / "train_log.csv").read_bytes()
    assert (tmp_path / "a" / "model.bin").read_bytes() == (tmp_path / "b" / "model.bin").read_bytes()


def test_baseline_has_zero_auxiliary_columns(dataset, tmp_path):
    cfg = tiny_run_config(loss__alpha=0.0, loss__beta=0.0)
    log = train(cfg, dataset, tmp_path / "run", verbose=False).log
    assert (log["l_mp"] == 0.0).all()
    assert (log["l_cl"] == 0.0).all()
    assert (log["total"] == log["l_d"]).all()


def test_zero_mask_ratio_gives_zero_consistency_loss(dataset, tmp_path):
    cfg = tiny_run_config(mask__ratio=0.0)
    log = train(cfg, dataset, tmp_path / "run", verbose=False).log
    assert (log["l_mp"] == 0.0).all()


def test_training_without_val_split_keeps_last_state(tmp_path, tiny_cfg):
    # setup
    data_dir = tmp_path / "scenes"
    generate_dataset(data_dir, 4, tiny_cfg.scene, val_fraction=0.0, verbose=False)

    # check
    result = train(tiny_cfg, data_dir, tmp_path / "run", verbose=False)
    assert (tmp_path / "run" / "model.bin").exists()
    assert np.isnan(result.best_val_mae)


def test_non_finite_loss_writes_dump_and_aborts(dataset, tmp_path, tiny_cfg, monkeypatch):
    # setup: Dichte-Loss liefert NaN
    monkeypatch.setattr(training, "density_loss", lambda *args, **kw: (dc.DenseArray(np.nan), None))
    out = tmp_path / "run"

    # check
    with pytest.raises(NonFiniteValue):
        train(tiny_cfg, dataset, out, verbose=False)
    dump = yaml.safe_load((out / "nan_dump.yaml").read_text())
    assert (dump["epoch"], dump["batch"]) == (1, 0)
    assert len(dump["images"]) == len(dump["mask_seeds"]) == 4
    assert np.isnan(dump["l_d"])
    assert not (out / "model.bin").exists()


def test_val_mae_halves_on_reduced_set(tmp_path):
    # setup: feste Kopfzahl, damit die Start-MAE deutlich über 0 liegt
    data_dir = tmp_path / "scenes"
    generate_dataset(data_dir, 8, SceneConfig(count_range=[40, 40]), val_fraction=0.25, seed=0, verbose=False)
    cfg = tiny_run_config(optim__epochs=20, optim__lr=0.01, optim__batch_size=2)
    # Start mit lebender Dichte-Ausgabe, sonst fließt kein Gradient durch die letzte ReLU
    flat_image = np.full((64, 64), 0.5)
    for seed in range(10):
        cfg.model.init_seed = seed
        if CountingModel(cfg.model).predict(flat_image).sum() > 0:
            break

    # check
    result = train(cfg, data_dir, tmp_path / "run", verbose=False)
    assert result.initial_val_mae > 0
    assert result.best_val_mae <= 0.5 * result.initial_val_mae


def test_mask_seed_depends_on_image_not_batch():
    assert mask_seed(0, 1, 5) == mask_seed(0, 1, 5)
    assert len({mask_seed(0, 1, i) for i in range(20)}) == 20
    assert mask_seed(0, 1, 5) != mask_seed(0, 2, 5)


# ------------------------------------------------------------
# Auswertung
# ------------------------------------------------------------
def _separated_dataset(data_dir):
    heads = [np.array([[12.0, 12.0], [44.0, 20.0], [28.0, 52.0]]), np.array([[60.0, 4.0]])]
    lines = []
    for i, pts in enumerate(heads):
        write_sample(data_dir, f"{i:04d}", Sample(image=np.zeros((64, 64)), points=pts))
        lines.append(f"{i:04d} val\n")
    (data_dir / "split.txt").write_text("".join(lines))
    return data_dir


def test_oracle_evaluation_is_perfect(tmp_path, tiny_cfg):
    # setup
    data_dir = _separated_dataset(tmp_path / "scenes")

    # check
    report = evaluate(tiny_cfg, data_dir, oracle=True, out_csv=tmp_path / "eval.csv", verbose=False)
    assert report.mae == 0.0
    assert report.f1 == 1.0
    assert _header(tmp_path / "eval.csv") == CSV_COLUMNS


def test_evaluate_checkpoint_and_dump_maps(dataset, tmp_path, tiny_cfg):
    # setup
    train(tiny_cfg, dataset, tmp_path / "run", verbose=False)

    # check
    report = evaluate(tiny_cfg, dataset, ckpt_dir=tmp_path / "run", out_csv=tmp_path / "eval.csv",
                      dump_dir=tmp_path / "maps", verbose=False)
    assert len(report.rows) == 2
    frame = pd.read_csv(tmp_path / "eval.csv", dtype={"image": str})
    assert frame["image"].iloc[-1] == "summary"
    name = report.rows["image"].iloc[0]
    assert pd.read_csv(tmp_path / "maps" / f"{name}_density.csv", header=None).shape == (8, 8)
    assert pd.read_csv(tmp_path / "maps" / f"{name}_features.csv", header=None).shape == (64, 64)


def test_evaluate_empty_split(tmp_path, tiny_cfg):
    data_dir = tmp_path / "scenes"
    generate_dataset(data_dir, 3, tiny_cfg.scene, val_fraction=0.0, verbose=False)
    with pytest.raises(EmptyInput):
        evaluate(tiny_cfg, data_dir, oracle=True, split="val", verbose=False)


def test_recall_non_decreasing_in_sigma(dataset, tiny_cfg):
    recalls = []
    for sigma in (4.0, 8.0, 16.0):
        tiny_cfg.eval.sigma = sigma
        recalls.append(evaluate(tiny_cfg, dataset, oracle=True, split="all", verbose=False).recall)
    assert recalls == sorted(recalls)


# ------------------------------------------------------------
# Ablation
# ------------------------------------------------------------
def test_parse_axis_values():
    assert parse_axis_value("mask_ratio", "0.15") == 0.15
    assert parse_axis_value("dilation", "3") == 3
    assert parse_axis_value("dilation", "adaptive") == "adaptive"
    assert parse_axis_value("mpm_layers", "2") == 2
    with pytest.raises(UnknownAxis):
        parse_axis_value("learning_rate", "0.1")
    with pytest.raises(UnknownAxis):
        parse_axis_value("setup", "half")


def test_configure_baseline_setup(tiny_cfg):
    run = configure(tiny_cfg, "setup", "baseline")
    assert run.loss.alpha == 0.0 and run.loss.beta == 0.0
    assert tiny_cfg.loss.alpha == 0.1


def test_ablate_writes_one_row_per_run(dataset, tmp_path, tiny_cfg):
    # setup
    sweep = ablate(tiny_cfg, dataset, tmp_path / "sweep", "mask_ratio", ["0", "0.5"], [0, 1], verbose=False)

    # check
    assert len(sweep) == 4
    assert list(sweep.columns) == SWEEP_COLUMNS
    assert _header(tmp_path / "sweep" / "sweep.csv") == SWEEP_COLUMNS
    assert (tmp_path / "sweep" / "mask_ratio=0.5" / "seed=1" / "eval.csv").exists()

    summary = summarize(pd.read_csv(tmp_path / "sweep" / "sweep.csv", dtype={"value": str}))
    assert list(summary.columns) == ABLATION_COLUMNS
    assert list(summary["n_seeds"]) == [2, 2]


# ------------------------------------------------------------
# CLI / Selbsttest
# ------------------------------------------------------------
def test_cli_unknown_command():
    assert cli.main(["zaehlen"]) == 2


def test_cli_exit_codes(tmp_path):
    assert cli.main(["ablate", "--axis", "lernrate", "--values", "1", "--quiet"]) == 2
    assert cli.main(["eval", "--oracle", "--quiet", "--data", str(tmp_path / "fehlt"),
                     "--out", str(tmp_path / "eval.csv")]) == 3


def test_cli_generate(tmp_path):
    code = cli.main(["gen", "--out", str(tmp_path / "scenes"), "--n", "3", "--quiet"])
    assert code == 0
    assert (tmp_path / "scenes" / "split.txt").exists()


def test_selftest_checks_pass():
    for check in (selftest.check_identities, selftest.check_matching, selftest.check_loss_grads,
                  selftest.check_ot_gradient):
        ok, value = check()
        assert ok, value
    assert selftest.check_ot_oracle(n_instances=5)[0]
