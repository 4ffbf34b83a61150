# crowd_counting_desk/core/evalmetrics.py

"""
Zählmetriken (MAE / RMSE) und Lokalisierungsprotokoll:
lokale Maxima der Dichtekarte → Eins-zu-eins-Zuordnung zu den
Annotationen innerhalb Radius σ → Precision / Recall / F1.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.ndimage import maximum_filter
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from core.diffcore import DenseArray
from utils.errors import ConfigError, EmptyInput, LengthMismatch

STRIDE = 8

CSV_COLUMNS = [
    "image", "gt_count", "pred_count", "abs_error",
    "tp", "fp", "fn", "precision", "recall", "f1", "mae", "rmse",
]


@dataclass
class EvalConfig:
    sigma: float = 8.0
    min_value_rel: float = 0.25
    neighborhood: int = 3
    greedy: bool = False

    def validate(self):
        if self.sigma <= 0:
            raise ConfigError(f"❌ eval.sigma={self.sigma} muss > 0 sein")
        if self.neighborhood < 3 or self.neighborhood % 2 == 0:
            raise ConfigError(f"❌ eval.neighborhood={self.neighborhood} muss ungerade und >= 3 sein")
        if not 0 <= self.min_value_rel <= 1:
            raise ConfigError(f"❌ eval.min_value_rel={self.min_value_rel} außerhalb [0, 1]")
        return self


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list = field(default_factory=list)


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    precision: float
    recall: float
    f1: float
    rows: pd.DataFrame = None

    def to_frame(self):
        """Bildzeilen plus Summary-Zeile im festen CSV-Schema."""
        tp, fp, fn = (int(self.rows[c].sum()) for c in ("tp", "fp", "fn"))
        summary = {
            "image": "summary",
            "gt_count": float(self.rows["gt_count"].sum()),
            "pred_count": float(self.rows["pred_count"].sum()),
            "abs_error": float(self.rows["abs_error"].mean()),
            "tp": tp, "fp": fp, "fn": fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "mae": self.mae, "rmse": self.rmse,
        }
        return pd.concat([self.rows, pd.DataFrame([summary])], ignore_index=True)[CSV_COLUMNS]

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.10g")


# ----------------------------------------------------------------------
# Zählfehler
# ----------------------------------------------------------------------
def mae_rmse(pred_counts, gt_counts):
    pred = np.asarray(pred_counts, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt_counts, dtype=np.float64).reshape(-1)
    if pred.size != gt.size:
        raise LengthMismatch(f"❌ mae_rmse: {pred.size} Vorhersagen, {gt.size} Referenzwerte")
    if pred.size == 0:
        raise EmptyInput("❌ mae_rmse: keine Bilder")
    err = pred - gt
    return float(np.abs(err).mean()), float(np.sqrt((err ** 2).mean()))


# ----------------------------------------------------------------------
# Lokale Maxima
# ----------------------------------------------------------------------
def as_map(density):
    """DensityMapPred, DenseArray oder ndarray → ndarray."""
    density = getattr(density, "d", density)
    if isinstance(density, DenseArray):
        density = density.data
    return np.asarray(density, dtype=np.float64)


def find_local_maxima(density, min_value=None, neighborhood=3, stride=STRIDE, min_value_rel=0.25):
    """
    Strikte lokale Maxima: Zelle > alle Nachbarn im k×k-Fenster und >= min_value.
    Plateaus liefern keinen Treffer. Rückgabe (n, 2) als (x, y) in Bildpixeln.
    """
    d = as_map(density)
    d = d.reshape(d.shape[-2:])
    if neighborhood < 3 or neighborhood % 2 == 0:
        raise ConfigError(f"❌ neighborhood={neighborhood} muss ungerade und >= 3 sein")
    if d.size == 0:
        return np.zeros((0, 2))

    if min_value is None:
        min_value = min_value_rel * float(d.max())

    footprint = np.ones((neighborhood, neighborhood), dtype=bool)
    footprint[neighborhood // 2, neighborhood // 2] = False
    neighbors = maximum_filter(d, footprint=footprint, mode="constant", cval=-np.inf)

    rows, cols = np.nonzero((d > neighbors) & (d >= min_value))
    return np.stack([(cols + 0.5) * stride, (rows + 0.5) * stride], axis=1).astype(np.float64)


# ----------------------------------------------------------------------
# Zuordnung
# ----------------------------------------------------------------------
def _greedy_pairs(dist, sigma):
    cand = np.argwhere(dist <= sigma)
    order = np.argsort(dist[cand[:, 0], cand[:, 1]], kind="stable")
    used_p, used_g, pairs = set(), set(), []
    for i, j in cand[order]:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((int(i), int(j), float(dist[i, j])))
    return pairs


def match_points(preds, gts, sigma=8.0, greedy=False):
    """
    Maximale Anzahl Paare mit Abstand <= σ, darunter minimale Gesamtdistanz.
    Verbotene Paare bekommen Kosten LARGE > min(n, m)·σ, damit jede
    zusätzliche erlaubte Kante die Lösung verbessert.
    """
    if sigma <= 0:
        raise ConfigError(f"❌ sigma={sigma} muss > 0 sein")
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    n, m = len(preds), len(gts)
    if n == 0 or m == 0:
        return MatchResult(tp=0, fp=n, fn=m, pairs=[])

    dist = cdist(preds, gts)
    if greedy:
        pairs = _greedy_pairs(dist, sigma)
    else:
        large = (min(n, m) + 1) * sigma + 1.0
        cost = np.where(dist <= sigma, dist, large)
        row_ind, col_ind = linear_sum_assignment(cost)
        pairs = [(int(i), int(j), float(dist[i, j]))
                 for i, j in zip(row_ind, col_ind) if dist[i, j] <= sigma]

    tp = len(pairs)
    return MatchResult(tp=tp, fp=n - tp, fn=m - tp, pairs=pairs)


def match_points_exhaustive(preds, gts, sigma):
    """
    Referenz durch vollständige Aufzählung (nur für kleine Instanzen).
    Gibt (tp, Gesamtdistanz) der besten Zuordnung zurück.
    """
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    dist = cdist(preds, gts) if len(preds) and len(gts) else np.zeros((len(preds), len(gts)))

    def best(i, used):
        if i == len(preds):
            return 0, 0.0
        tp, tot = best(i + 1, used)
        for j in range(len(gts)):
            if j in used or dist[i, j] > sigma:
                continue
            t, d = best(i + 1, used | {j})
            t, d = t + 1, d + dist[i, j]
            if t > tp or (t == tp and d < tot):
                tp, tot = t, d
        return tp, tot

    return best(0, frozenset())


def prf(match):
    p = match.tp / (match.tp + match.fp) if match.tp + match.fp else 0.0
    r = match.tp / (match.tp + match.fn) if match.tp + match.fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


# ----------------------------------------------------------------------
# Gesamtauswertung
# ----------------------------------------------------------------------
def evaluate_density_maps(maps, points, cfg=None, names=None):
    """
    maps:   Liste von Dichtekarten (1×h×w oder h×w)
    points: Liste der Annotationen (n_i × 2, Bildpixel)
    """
    cfg = cfg or EvalConfig()
    if len(maps) != len(points):
        raise LengthMismatch(f"❌ {len(maps)} Dichtekarten, {len(points)} Annotationen")
    if not maps:
        raise EmptyInput("❌ Keine Bilder zur Auswertung")
    names = names or [f"{i:04d}" for i in range(len(maps))]

    rows = []
    for name, dmap, pts in zip(names, maps, points):
        dmap = as_map(dmap)
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        found = find_local_maxima(dmap, neighborhood=cfg.neighborhood, min_value_rel=cfg.min_value_rel)
        match = match_points(found, pts, cfg.sigma, greedy=cfg.greedy)
        p, r, f1 = prf(match)
        pred_count = float(dmap.sum())
        rows.append({
            "image": name, "gt_count": float(len(pts)), "pred_count": pred_count,
            "abs_error": abs(pred_count - len(pts)),
            "tp": match.tp, "fp": match.fp, "fn": match.fn,
            "precision": p, "recall": r, "f1": f1,
            "mae": np.nan, "rmse": np.nan,
        })

    df = pd.DataFrame(rows, columns=CSV_COLUMNS)
    mae, rmse = mae_rmse(df["pred_count"], df["gt_count"])
    total = MatchResult(tp=int(df["tp"].sum()), fp=int(df["fp"].sum()), fn=int(df["fn"].sum()))
    p, r, f1 = prf(total)
    return MetricsReport(mae=mae, rmse=rmse, precision=p, recall=r, f1=f1, rows=df)
