import numpy as np
import pandas as pd
import pytest

from core.evalmetrics import (
    CSV_COLUMNS, EvalConfig, MatchResult, evaluate_density_maps, find_local_maxima, mae_rmse,
    match_points, match_points_exhaustive, prf,
)
from core.losses import make_ground_truth
from utils.errors import ConfigError, EmptyInput, LengthMismatch


def _blob(h, w, row, col, sigma=1.0, amp=1.0):
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return amp * np.exp(-((rr - row) ** 2 + (cc - col) ** 2) / (2 * sigma ** 2))


# ------------------------------------------------------------
# MAE / RMSE
# ------------------------------------------------------------
def test_mae_rmse_examples():
    assert mae_rmse([3, 5], [4, 4]) == pytest.approx((1.0, 1.0))
    assert mae_rmse([7, 2], [7, 2]) == (0.0, 0.0)
    mae, rmse = mae_rmse([100, 200], [110, 180])
    assert mae == pytest.approx(15.0)
    assert rmse == pytest.approx(np.sqrt(250.0))


def test_rmse_not_below_mae():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pred, gt = rng.uniform(0, 50, size=6), rng.integers(0, 50, size=6)
        mae, rmse = mae_rmse(pred, gt)
        assert 0 <= mae <= rmse + 1e-12


def test_mae_rmse_errors():
    with pytest.raises(LengthMismatch):
        mae_rmse([1, 2], [1])
    with pytest.raises(EmptyInput):
        mae_rmse([], [])


# ------------------------------------------------------------
# Lokale Maxima
# ------------------------------------------------------------
def test_single_blob_gives_peak_cell_center():
    pts = find_local_maxima(_blob(8, 8, 3, 5))
    np.testing.assert_array_equal(pts, [[44.0, 28.0]])


def test_constant_map_has_no_maxima():
    assert find_local_maxima(np.full((8, 8), 0.3)).shape == (0, 2)
    assert find_local_maxima(np.zeros((1, 8, 8))).shape == (0, 2)


def test_two_blobs_give_two_points():
    dmap = _blob(8, 12, 2, 2) + _blob(8, 12, 5, 9, amp=0.8)
    pts = find_local_maxima(dmap)
    assert sorted(map(tuple, pts)) == [(20.0, 20.0), (76.0, 44.0)]


def test_small_peaks_below_threshold_are_dropped():
    dmap = _blob(8, 12, 2, 2) + _blob(8, 12, 5, 9, amp=0.1)
    assert len(find_local_maxima(dmap)) == 1
    assert len(find_local_maxima(dmap, min_value=0.05)) == 2


def test_maxima_move_with_translation():
    # setup
    a = find_local_maxima(_blob(10, 10, 4, 3))
    b = find_local_maxima(_blob(10, 10, 5, 5))

    # check: ein Zellschritt = 8 Pixel
    np.testing.assert_array_equal(b - a, [[16.0, 8.0]])


def test_neighborhood_must_be_odd():
    with pytest.raises(ConfigError):
        find_local_maxima(np.ones((4, 4)), neighborhood=4)


# ------------------------------------------------------------
# Zuordnung
# ------------------------------------------------------------
def test_match_single_pair():
    match = match_points([[0.0, 0.0]], [[2.0, 0.0]], sigma=4.0)
    assert (match.tp, match.fp, match.fn) == (1, 0, 0)
    assert prf(match) == (1.0, 1.0, 1.0)


def test_match_with_extra_prediction():
    # setup
    match = match_points([[0.0, 0.0], [10.0, 10.0]], [[1.0, 0.0]], sigma=4.0)

    # check
    assert (match.tp, match.fp, match.fn) == (1, 1, 0)
    p, r, f1 = prf(match)
    assert (p, r) == (0.5, 1.0)
    assert f1 == pytest.approx(2.0 / 3.0)
    assert match.pairs == [(0, 0, 1.0)]


def test_match_empty_predictions():
    match = match_points(np.zeros((0, 2)), [[1.0, 1.0], [5.0, 5.0], [9.0, 9.0]], sigma=4.0)
    assert (match.tp, match.fp, match.fn) == (0, 0, 3)
    assert prf(match) == (0.0, 0.0, 0.0)


def test_prf_examples():
    p, r, f1 = prf(MatchResult(tp=1, fp=1, fn=0))
    assert (p, r) == (0.5, 1.0)
    assert f1 == pytest.approx(0.6667, abs=1e-4)
    assert prf(MatchResult(tp=0, fp=0, fn=0)) == (0.0, 0.0, 0.0)
    assert prf(MatchResult(tp=5, fp=0, fn=0)) == (1.0, 1.0, 1.0)


@pytest.mark.parametrize("sigma", [4.0, 8.0, 16.0])
def test_matching_agrees_with_exhaustive_search(sigma):
    rng = np.random.default_rng(int(sigma))
    for _ in range(200):
        # setup
        preds = rng.uniform(0, 40, size=(rng.integers(0, 6), 2))
        gts = rng.uniform(0, 40, size=(rng.integers(0, 6), 2))

        # check
        match = match_points(preds, gts, sigma)
        tp, total = match_points_exhaustive(preds, gts, sigma)
        assert match.tp == tp
        assert sum(d for _, _, d in match.pairs) == pytest.approx(total, abs=1e-9)
        assert len({i for i, _, _ in match.pairs}) == match.tp
        assert len({j for _, j, _ in match.pairs}) == match.tp
        assert all(d <= sigma for _, _, d in match.pairs)


def test_matching_is_symmetric():
    rng = np.random.default_rng(3)
    for _ in range(50):
        preds = rng.uniform(0, 30, size=(4, 2))
        gts = rng.uniform(0, 30, size=(3, 2))
        assert match_points(preds, gts, 8.0).tp == match_points(gts, preds, 8.0).tp


def test_recall_grows_with_sigma():
    rng = np.random.default_rng(4)
    preds = rng.uniform(0, 64, size=(10, 2))
    gts = rng.uniform(0, 64, size=(12, 2))
    recalls = [prf(match_points(preds, gts, s))[1] for s in (4.0, 8.0, 16.0)]
    assert recalls == sorted(recalls)


def test_greedy_can_miss_pairs():
    # setup: der kürzeste Abstand blockiert die zweite Zuordnung
    preds = [[0.0, 0.0], [4.5, 0.0]]
    gts = [[1.0, 0.0], [-3.5, 0.0]]

    # check
    assert match_points(preds, gts, 4.0).tp == 2
    assert match_points(preds, gts, 4.0, greedy=True).tp == 1


def test_match_rejects_bad_sigma():
    with pytest.raises(ConfigError):
        match_points([[0.0, 0.0]], [[0.0, 0.0]], sigma=0.0)


# ------------------------------------------------------------
# Gesamtauswertung
# ------------------------------------------------------------
def test_oracle_maps_score_perfectly():
    # setup: Punktgitter als "Dichtekarte", Köpfe weit auseinander
    pts = [np.array([[12.0, 12.0], [50.0, 20.0], [30.0, 52.0]]), np.array([[4.0, 60.0]])]
    maps = [make_ground_truth(p, 64, 64).dot_grid for p in pts]

    # check
    report = evaluate_density_maps(maps, pts, EvalConfig(sigma=8.0))
    assert report.mae == 0.0 and report.rmse == 0.0
    assert report.f1 == 1.0
    assert list(report.rows["tp"]) == [3, 1]


def test_report_frame_and_csv_header(tmp_path):
    # setup
    pts = [np.array([[12.0, 12.0]]), np.zeros((0, 2))]
    maps = [make_ground_truth(pts[0], 64, 64).dot_grid, np.zeros((1, 8, 8))]
    report = evaluate_density_maps(maps, pts, names=["a", "b"])

    # check
    frame = report.to_frame()
    assert list(frame.columns) == CSV_COLUMNS
    assert list(frame["image"]) == ["a", "b", "summary"]
    path = tmp_path / "eval.csv"
    report.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert pd.read_csv(path)["mae"].iloc[-1] == pytest.approx(0.0)


def test_evaluate_errors():
    with pytest.raises(EmptyInput):
        evaluate_density_maps([], [])
    with pytest.raises(LengthMismatch):
        evaluate_density_maps([np.zeros((8, 8))], [])


def test_eval_config_validation():
    with pytest.raises(ConfigError):
        EvalConfig(sigma=-1.0).validate()
    with pytest.raises(ConfigError):
        EvalConfig(neighborhood=2).validate()
