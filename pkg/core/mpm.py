# crowd_counting_desk/core/mpm.py

"""
Masked Feature Prediction (MPM).

p5 wird zu C×N geflacht, ausgewählte Spalten werden durch das Masken-Token 0
ersetzt, beide Sequenzen (maskiert / unmaskiert) laufen durch denselben
Transformer-Encoder, und der Konsistenz-Loss vergleicht die Kodierungen an
den maskierten Positionen.
"""

from dataclasses import dataclass, field

import numpy as np

from core import diffcore as dc
from core.diffcore import DenseArray
from core.layers import LayerNorm, Linear, Module
from utils.errors import BadRatio, ConfigError, GridTooSmall, MissingP5, ShapeMismatch

STRATEGIES = ("random", "block", "grid")
LOSS_VARIANTS = ("masked_vectors", "all_vectors", "reconstruct_p5")
MAX_RATIO = 0.95


@dataclass
class MaskConfig:
    ratio: float = 0.15
    strategy: str = "random"
    loss_variant: str = "masked_vectors"
    target_grad: bool = False

    def validate(self):
        if not 0.0 <= self.ratio <= MAX_RATIO:
            raise BadRatio(f"❌ mask.ratio={self.ratio} außerhalb [0, {MAX_RATIO}]")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"❌ mask.strategy='{self.strategy}', erlaubt: {STRATEGIES}")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigError(f"❌ mask.loss_variant='{self.loss_variant}', erlaubt: {LOSS_VARIANTS}")
        return self


@dataclass
class MaskSpec:
    n: int
    masked: tuple
    ratio: float
    strategy: str
    seed: int
    grid_dims: tuple = field(default=(0, 0))

    @property
    def empty(self):
        return len(self.masked) == 0


@dataclass
class EncoderOutput:
    fd: DenseArray
    fd_masked: DenseArray = None


# ----------------------------------------------------------------------
# Masken
# ----------------------------------------------------------------------
def target_count(ratio, n):
    """Rundung half-up von ratio·n."""
    return int(np.floor(ratio * n + 0.5))


def _block_mask(h, w, t, rng):
    best = None
    for rows in range(1, h + 1):
        for cols in range(1, w + 1):
            key = (abs(rows * cols - t), abs(rows - cols), -cols)
            if best is None or key < best[0]:
                best = (key, rows, cols)
    _, rows, cols = best
    if rows * cols != t:
        raise GridTooSmall(
            f"❌ Block-Maske: {t} Zellen auf {h}×{w} nicht als Rechteck darstellbar "
            f"(nächstes: {rows}×{cols})"
        )
    r0 = int(rng.integers(0, h - rows + 1))
    c0 = int(rng.integers(0, w - cols + 1))
    return [r * w + c for r in range(r0, r0 + rows) for c in range(c0, c0 + cols)]


def _grid_mask(h, w, t, rng):
    best = None
    for k in range(1, max(h, w) + 1):
        exact = []
        diff = None
        for oy in range(k):
            for ox in range(k):
                cnt = len(range(oy, h, k)) * len(range(ox, w, k))
                d = abs(cnt - t)
                diff = d if diff is None else min(diff, d)
                if cnt == t:
                    exact.append((oy, ox))
        if best is None or diff < best[0]:
            best = (diff, k, exact)
    diff, k, exact = best
    if diff != 0:
        raise GridTooSmall(f"❌ Gitter-Maske: {t} Zellen auf {h}×{w} mit keinem Raster erreichbar")
    oy, ox = exact[int(rng.integers(0, len(exact)))]
    return [r * w + c for r in range(oy, h, k) for c in range(ox, w, k)]


def make_mask(n, ratio, strategy, grid_dims, seed):
    h, w = grid_dims
    if n != h * w:
        raise ShapeMismatch(f"❌ make_mask: n={n} passt nicht zu Gitter {h}×{w}")
    if n < 2:
        raise GridTooSmall(f"❌ make_mask: mindestens 2 Vektoren nötig, n={n}")
    if not 0.0 <= ratio <= MAX_RATIO:
        raise BadRatio(f"❌ Maskierungsrate {ratio} außerhalb [0, {MAX_RATIO}]")
    if strategy not in STRATEGIES:
        raise ConfigError(f"❌ Unbekannte Maskierungsstrategie '{strategy}'")

    t = target_count(ratio, n)
    rng = np.random.default_rng(seed)

    if t == 0:
        masked = []
    elif strategy == "random":
        masked = rng.permutation(n)[:t].tolist()
    elif strategy == "block":
        masked = _block_mask(h, w, t, rng)
    else:
        masked = _grid_mask(h, w, t, rng)

    return MaskSpec(n=n, masked=tuple(sorted(int(i) for i in masked)), ratio=ratio,
                    strategy=strategy, seed=int(seed), grid_dims=(h, w))


def apply_mask(p5_flat, mask):
    """Spalten an maskierten Indizes durch das Token 0 ersetzen."""
    p5_flat = dc.as_array(p5_flat)
    if p5_flat.ndim != 2 or p5_flat.shape[1] != mask.n:
        raise ShapeMismatch(f"❌ apply_mask: Eingabe {p5_flat.shape}, Maske für N={mask.n}")
    if mask.empty:
        return p5_flat
    idx = np.array(mask.masked, dtype=np.int64)
    token = np.zeros((p5_flat.shape[0], idx.size))
    return dc.scatter(p5_flat, idx, token, axis=1)


# ----------------------------------------------------------------------
# Positionen (fest, 2-D sin/cos)
# ----------------------------------------------------------------------
def _sincos_1d(dim, pos):
    omega = np.arange(dim // 2, dtype=np.float64) / (dim / 2.0)
    omega = 1.0 / 10000 ** omega
    out = np.outer(pos.reshape(-1), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_2d(h, w, dim):
    """Positionskodierung (h·w, dim): halbe Dimension Zeile, halbe Spalte."""
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return np.concatenate([_sincos_1d(dim // 2, rows), _sincos_1d(dim // 2, cols)], axis=1)


# ----------------------------------------------------------------------
# Transformer-Encoder (pre-norm)
# ----------------------------------------------------------------------
class EncoderLayer(Module):
    def __init__(self, hidden, heads, ffn, rng):
        self.heads = heads
        self.norm1 = LayerNorm(hidden)
        self.wq = Linear(hidden, hidden, rng)
        self.wk = Linear(hidden, hidden, rng)
        self.wv = Linear(hidden, hidden, rng)
        self.wo = Linear(hidden, hidden, rng)
        self.norm2 = LayerNorm(hidden)
        self.fc1 = Linear(hidden, ffn, rng)
        self.fc2 = Linear(ffn, hidden, rng)

    def attention(self, x):
        n, d = x.shape
        dh = d // self.heads

        def split(t):
            return dc.transpose(dc.reshape(t, (n, self.heads, dh)), (1, 0, 2))

        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        scores = dc.matmul(q, dc.transpose(k, (0, 2, 1))) / float(np.sqrt(dh))
        ctx = dc.matmul(dc.softmax(scores, axis=-1), v)
        ctx = dc.reshape(dc.transpose(ctx, (1, 0, 2)), (n, d))
        return self.wo(ctx)

    def __call__(self, x):
        x = x + self.attention(self.norm1(x))
        return x + self.fc2(dc.relu(self.fc1(self.norm2(x))))


class MpmEncoder(Module):
    def __init__(self, cfg, rng):
        self.proj = Linear(cfg.c5, cfg.hidden, rng)
        self.layers = [EncoderLayer(cfg.hidden, cfg.heads, cfg.ffn, rng) for _ in range(cfg.mpm_layers)]
        self.readout = Linear(cfg.hidden, cfg.c5, rng)
        self.hidden = cfg.hidden

    def encode_sequence(self, p5_flat, pos):
        p5_flat = dc.as_array(p5_flat)
        if p5_flat.ndim != 2 or p5_flat.shape[1] < 1:
            raise ShapeMismatch(f"❌ encode_sequence: erwartet C×N, bekam {p5_flat.shape}")
        if pos.shape != (p5_flat.shape[1], self.hidden):
            raise ShapeMismatch(f"❌ Positionskodierung {pos.shape}, erwartet {(p5_flat.shape[1], self.hidden)}")
        x = self.proj(dc.transpose(p5_flat)) + pos
        for layer in self.layers:
            x = layer(x)
        return x


def encode_sequence(p5_flat, encoder, pos):
    return encoder.encode_sequence(p5_flat, pos)


def encode_pair(p5_flat, encoder, pos, mask=None):
    """Unmaskierte Kodierung F_d und (falls Maske nicht leer) maskierte F_d′."""
    fd = encoder.encode_sequence(p5_flat, pos)
    fd_masked = None
    if mask is not None and not mask.empty:
        fd_masked = encoder.encode_sequence(apply_mask(p5_flat, mask), pos)
    return EncoderOutput(fd=fd, fd_masked=fd_masked)


# ----------------------------------------------------------------------
# Konsistenz-Loss
# ----------------------------------------------------------------------
def consistent_loss(fd_masked, fd, mask, variant="masked_vectors", p5_flat=None,
                    readout=None, target_grad=False):
    """
    masked_vectors: Σ_{i∈M} ‖F_d′ⁱ − F_dⁱ‖²
    all_vectors:    Σ_i     ‖F_d′ⁱ − F_dⁱ‖²
    reconstruct_p5: Σ_{i∈M} ‖readout(F_d′ⁱ) − P₅ⁱ‖²
    Das Ziel ist ohne `target_grad` vom Graphen abgekoppelt.
    """
    if variant not in LOSS_VARIANTS:
        raise ConfigError(f"❌ Unbekannte Loss-Variante '{variant}'")
    fd_masked = dc.as_array(fd_masked)
    idx = np.array(mask.masked, dtype=np.int64)

    if variant == "reconstruct_p5":
        if p5_flat is None:
            raise MissingP5("❌ reconstruct_p5 braucht p5_flat")
        if readout is None:
            raise MissingP5("❌ reconstruct_p5 braucht eine Read-out-Projektion")
        if idx.size == 0:
            return DenseArray(0.0)
        target = dc.transpose(dc.as_array(p5_flat))
        target = target if target_grad else dc.detach(target)
        pred = readout(dc.gather(fd_masked, idx, axis=0))
        return dc.sum_((pred - dc.gather(target, idx, axis=0)) ** 2)

    fd = dc.as_array(fd)
    if fd.shape != fd_masked.shape:
        raise ShapeMismatch(f"❌ consistent_loss: {fd_masked.shape} vs {fd.shape}")
    target = fd if target_grad else dc.detach(fd)

    if variant == "all_vectors":
        return dc.sum_((fd_masked - target) ** 2)
    if idx.size == 0:
        return DenseArray(0.0)
    return dc.sum_((dc.gather(fd_masked, idx, axis=0) - dc.gather(target, idx, axis=0)) ** 2)
