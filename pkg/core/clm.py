# crowd_counting_desk/core/clm.py

"""
Überwachtes Kontrastlernen auf Pixelebene (CLM).

Jede Zelle der 1/8-Dichtemerkmale wird per Projektionskopf auf einen
D-dimensionalen Vektor abgebildet. Zellen mit Kopf-Label 1 sind Ziele
(Ω_p), der Rest ist Hintergrund (Ω_n). Der Loss zieht Ziele zum gepoolten
Zielvektor und drückt sie vom gepoolten Hintergrund weg.

Nur im Training aktiv; bei der Inferenz wird der Kopf nicht ausgewertet.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from core import diffcore as dc
from core.diffcore import DenseArray
from core.layers import Conv2d, Module
from utils.errors import ConfigError, NoNegatives, NoPositives, PointOutOfBounds, ShapeMismatch

VARIANTS = (
    "single_global",
    "single_local",
    "cross_global",
    "cross_local",
    "cross_global_collection",
)
DILATIONS = (1, 3, 5, "adaptive")
STRIDE = 8


@dataclass
class ClmConfig:
    variant: str = "single_global"
    dilation: object = 1
    head_min: float = 8.0
    head_max: float = 40.0

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"❌ clm.variant='{self.variant}', erlaubt: {VARIANTS}")
        if self.dilation not in DILATIONS:
            raise ConfigError(f"❌ clm.dilation='{self.dilation}', erlaubt: {DILATIONS}")
        if not 0 < self.head_min <= self.head_max:
            raise ConfigError(f"❌ clm.head_min/head_max ungültig: {self.head_min}/{self.head_max}")
        return self


@dataclass
class LabelGrid:
    labels: np.ndarray
    target_count: int
    background_count: int

    @property
    def positives(self):
        return np.flatnonzero(self.labels.reshape(-1) == 1)

    @property
    def negatives(self):
        return np.flatnonzero(self.labels.reshape(-1) == 0)


@dataclass
class PooledReps:
    x_pos_global: DenseArray
    x_neg_global: DenseArray


# ----------------------------------------------------------------------
# Projektionskopf: 3×3-Conv, ReLU, 1×1-Conv
# ----------------------------------------------------------------------
class ProjectionHead(Module):
    def __init__(self, in_ch, hidden, out_dim, rng):
        self.conv1 = Conv2d(in_ch, hidden, 3, rng)
        self.conv2 = Conv2d(hidden, out_dim, 1, rng)

    def __call__(self, f_f):
        return self.conv2(dc.relu(self.conv1(f_f)))


def project(f_f, head):
    f_f = dc.as_array(f_f)
    if f_f.ndim != 3 or min(f_f.shape[1:]) < 1:
        raise ShapeMismatch(f"❌ project: erwartet C×h×w, bekam {f_f.shape}")
    return head(f_f)


# ----------------------------------------------------------------------
# Label-Gitter
# ----------------------------------------------------------------------
def as_points(points):
    pts = np.asarray(points, dtype=np.float64)
    return pts.reshape(-1, 2)


def head_sizes(points, head_min=8.0, head_max=40.0):
    """Halber Abstand zum nächsten annotierten Nachbarn, begrenzt auf [head_min, head_max]."""
    pts = as_points(points)
    if len(pts) == 0:
        return np.zeros(0)
    if len(pts) == 1:
        return np.full(1, float(head_min))
    dist, _ = cKDTree(pts).query(pts, k=2)
    return np.clip(0.5 * dist[:, 1], head_min, head_max)


def label_grid(points, image_h, image_w, stride=STRIDE, dilation=1, head_min=8.0, head_max=40.0):
    pts = as_points(points)
    for p in pts:
        if not (0.0 <= p[0] < image_w and 0.0 <= p[1] < image_h):
            raise PointOutOfBounds(p, image_h, image_w)
    if dilation not in DILATIONS:
        raise ConfigError(f"❌ Unbekannte Dilatation '{dilation}', erlaubt: {DILATIONS}")

    h, w = image_h // stride, image_w // stride
    labels = np.zeros((h, w), dtype=np.int8)

    if dilation == "adaptive":
        sides = [max(1, int(np.floor(s / stride + 0.5))) for s in head_sizes(pts, head_min, head_max)]
    else:
        sides = [int(dilation)] * len(pts)

    for (x, y), k in zip(pts, sides):
        r = min(int(y // stride), h - 1)
        c = min(int(x // stride), w - 1)
        # gerade Seitenlängen wachsen nach unten/rechts
        r0, c0 = r - (k - 1) // 2, c - (k - 1) // 2
        labels[max(r0, 0):min(r0 + k, h), max(c0, 0):min(c0 + k, w)] = 1

    n_pos = int(labels.sum())
    return LabelGrid(labels=labels, target_count=n_pos, background_count=h * w - n_pos)


# ----------------------------------------------------------------------
# Pooling
# ----------------------------------------------------------------------
def _cells(proj):
    """D×h×w → (h·w, D)"""
    proj = dc.as_array(proj)
    d = proj.shape[0]
    return dc.transpose(dc.reshape(proj, (d, -1)))


def _check_grid(proj, labels):
    proj = dc.as_array(proj)
    if proj.ndim != 3 or proj.shape[1:] != labels.labels.shape:
        raise ShapeMismatch(f"❌ CLM: proj {proj.shape} passt nicht zu Labels {labels.labels.shape}")


def pooled_reps(proj, labels):
    _check_grid(proj, labels)
    if labels.target_count < 1:
        raise NoPositives("❌ Keine Zielzellen im Label-Gitter")
    if labels.background_count < 1:
        raise NoNegatives("❌ Keine Hintergrundzellen im Label-Gitter")
    x = _cells(proj)
    return PooledReps(
        x_pos_global=dc.mean(dc.gather(x, labels.positives, axis=0), axis=0),
        x_neg_global=dc.mean(dc.gather(x, labels.negatives, axis=0), axis=0),
    )


@dataclass
class BatchPools:
    """Je Bild gepoolte Mittel plus Batch-weite Zellmengen (eine Reduktion pro Batch)."""
    pos_means: list
    neg_means: list
    pos_all: DenseArray = None
    neg_all: DenseArray = None


def gather_batch_pools(projs, labels):
    pos_means, neg_means, pos_cells, neg_cells = [], [], [], []
    for proj, lab in zip(projs, labels):
        _check_grid(proj, lab)
        x = _cells(proj)
        pos = dc.gather(x, lab.positives, axis=0) if lab.target_count else None
        neg = dc.gather(x, lab.negatives, axis=0) if lab.background_count else None
        pos_means.append(dc.mean(pos, axis=0, keepdims=True) if pos is not None else None)
        neg_means.append(dc.mean(neg, axis=0, keepdims=True) if neg is not None else None)
        if pos is not None:
            pos_cells.append(pos)
        if neg is not None:
            neg_cells.append(neg)
    return BatchPools(
        pos_means=pos_means,
        neg_means=neg_means,
        pos_all=dc.concat(pos_cells, axis=0) if pos_cells else None,
        neg_all=dc.concat(neg_cells, axis=0) if neg_cells else None,
    )


# ----------------------------------------------------------------------
# Loss
# ----------------------------------------------------------------------
def softplus(x):
    """log(1 + eˣ) elementweise, stabil über logsumexp([0, x])."""
    x = dc.as_array(x)
    col = dc.reshape(x, x.shape + (1,))
    return dc.logsumexp(dc.concat([DenseArray(np.zeros(col.shape)), col], axis=-1), axis=-1)


def sample_losses(anchors, x_pos, x_neg):
    """
    −log[e^{cos(xᵢ,x_p)} / (e^{cos(xᵢ,x_p)} + e^{cos(xᵢ,x_n)})] je Anker
    (anchors: n×D, x_pos / x_neg: 1×D).
    """
    sp = dc.cosine_similarity(anchors, x_pos)
    sn = dc.cosine_similarity(anchors, x_neg)
    return dc.reshape(softplus(sn - sp), (-1,))


def _single_local(pos, neg):
    p, m = pos.shape[0], neg.shape[0]
    spp = dc.reshape(dc.cosine_similarity(pos, pos), (p, p, 1))
    spn = dc.reshape(dc.cosine_similarity(pos, neg), (p, 1, m))
    return dc.mean(softplus(spn - spp))


def _image_loss(proj, labels, variant, batch_context, index):
    _check_grid(proj, labels)
    if labels.target_count < 1:
        raise NoPositives("❌ Keine Zielzellen")
    x = _cells(proj)
    pos = dc.gather(x, labels.positives, axis=0)

    if variant == "single_global":
        pooled = pooled_reps(proj, labels)
        return dc.mean(sample_losses(pos,
                                     dc.reshape(pooled.x_pos_global, (1, -1)),
                                     dc.reshape(pooled.x_neg_global, (1, -1))))

    if variant == "single_local":
        if labels.background_count < 1:
            raise NoNegatives("❌ Keine Hintergrundzellen")
        return _single_local(pos, dc.gather(x, labels.negatives, axis=0))

    if batch_context is None:
        raise ConfigError(f"❌ CLM-Variante '{variant}' braucht Batch-Kontext")

    if variant == "cross_global":
        if batch_context.neg_all is None:
            raise NoNegatives("❌ Keine Hintergrundzellen im Batch")
        x_pos = dc.mean(batch_context.pos_all, axis=0, keepdims=True)
        x_neg = dc.mean(batch_context.neg_all, axis=0, keepdims=True)
        return dc.mean(sample_losses(pos, x_pos, x_neg))

    if variant == "cross_local":
        pairs = [(p, n) for p, n in zip(batch_context.pos_means, batch_context.neg_means)
                 if p is not None and n is not None]
        if not pairs:
            raise NoNegatives("❌ Kein Bild im Batch mit Ziel- und Hintergrundzellen")
        per_image = [sample_losses(pos, p, n) for p, n in pairs]
        return dc.mean(dc.concat(per_image, axis=0))

    # cross_global_collection
    neg_mean = batch_context.neg_means[index] if index is not None else None
    if neg_mean is None:
        if labels.background_count < 1:
            raise NoNegatives("❌ Keine Hintergrundzellen")
        neg_mean = dc.mean(dc.gather(x, labels.negatives, axis=0), axis=0, keepdims=True)
    collection = [p for p in batch_context.pos_means if p is not None]
    x_pos = dc.mean(dc.concat(collection, axis=0), axis=0, keepdims=True)
    return dc.mean(sample_losses(pos, x_pos, neg_mean))


def contrastive_loss(proj, labels, variant="single_global", batch_context=None, index=None, verbose=True):
    """
    Kontrastloss eines Bildes. Bilder ohne Ziel- oder Hintergrundzellen
    liefern 0 und werden als übersprungen gemeldet.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"❌ Unbekannte CLM-Variante '{variant}'")
    try:
        return _image_loss(proj, labels, variant, batch_context, index)
    except (NoPositives, NoNegatives) as exc:
        if verbose:
            print(f"⚠️ CLM übersprungen: {str(exc).lstrip('❌ ')}")
        return DenseArray(0.0)


def contrastive_batch_loss(projs, labels, variant="single_global", verbose=False):
    """
    Mittel der Bild-Losses; übersprungene Bilder zählen als 0.
    Gibt (loss, anzahl_übersprungen) zurück.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"❌ Unbekannte CLM-Variante '{variant}'")
    if len(projs) != len(labels) or not projs:
        raise ShapeMismatch(f"❌ contrastive_batch_loss: {len(projs)} Projektionen, {len(labels)} Label-Gitter")

    context = gather_batch_pools(projs, labels) if variant.startswith("cross") else None
    total, skipped = DenseArray(0.0), 0
    for i, (proj, lab) in enumerate(zip(projs, labels)):
        try:
            total = total + _image_loss(proj, lab, variant, context, i)
        except (NoPositives, NoNegatives) as exc:
            skipped += 1
            if verbose:
                print(f"⚠️ CLM übersprungen (Bild {i}): {str(exc).lstrip('❌ ')}")
    return total / float(len(projs)), skipped
