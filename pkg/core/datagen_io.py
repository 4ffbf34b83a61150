# crowd_counting_desk/core/datagen_io.py

"""
Synthetische Szenen, Datensatz-Dateien und Checkpoints.

Datensatz-Layout:
    <data_dir>/images/NNNN.pgm     8-bit Graustufen (P5)
    <data_dir>/points/NNNN.csv     Kopfpositionen, Header x,y (Bildpixel)
    <data_dir>/split.txt           "NNNN train" / "NNNN val"

Checkpoint-Layout:
    <ckpt_dir>/model.bin           alle Gewichte hintereinander, '<f8'
    <ckpt_dir>/model.manifest      je Zeile: name shape offset
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter
from sklearn.model_selection import train_test_split
from tqdm import tqdm

from utils.errors import ConfigError, FormatError, ManifestMismatch, PointOutOfBounds

REFERENCE_AREA = 128 * 128
BANDS = ("low", "medium", "high")
CKPT_DTYPE = np.dtype("<f8")


# ----------------------------------------------------------------------
# Konfiguration
# ----------------------------------------------------------------------
@dataclass
class SceneConfig:
    height: int = 64
    width: int = 64
    density_band: str = "medium"
    count_range: list = None          # überschreibt das Band
    head_radius: list = field(default_factory=lambda: [2.0, 3.5])
    head_amplitude: float = 0.8
    clutter_count: list = field(default_factory=lambda: [2, 6])
    clutter_radius: list = field(default_factory=lambda: [4.0, 7.0])
    clutter_amplitude: float = 0.35
    texture_amplitude: float = 0.15
    min_spacing: float = 4.0
    seed: int = 0

    def validate(self):
        if self.height % 32 or self.width % 32 or min(self.height, self.width) < 64:
            raise ConfigError(f"❌ scene: {self.height}×{self.width} muss Vielfache von 32 und >= 64 sein")
        if self.density_band not in BANDS:
            raise ConfigError(f"❌ scene.density_band='{self.density_band}', erlaubt: {BANDS}")
        if self.count_range is not None and not (len(self.count_range) == 2 and 0 <= self.count_range[0] <= self.count_range[1]):
            raise ConfigError(f"❌ scene.count_range={self.count_range} ungültig")
        if min(self.head_radius) < 1 or min(self.clutter_radius) < 1:
            raise ConfigError("❌ scene: Radien müssen >= 1 sein")
        if min(self.clutter_count) < 0 or self.min_spacing < 0:
            raise ConfigError("❌ scene: clutter_count und min_spacing müssen >= 0 sein")
        return self

    def band_range(self):
        """Zählbereich des Bandes, linear mit der Bildfläche skaliert."""
        if self.count_range is not None:
            return int(self.count_range[0]), int(self.count_range[1])
        s = (self.height * self.width) / REFERENCE_AREA

        def r(v):
            return int(np.floor(v * s + 0.5))

        return {
            "low": (0, r(10)),
            "medium": (r(10) + 1, r(60)),
            "high": (r(60) + 1, r(200)),
        }[self.density_band]


@dataclass
class Sample:
    image: np.ndarray
    points: np.ndarray

    @property
    def count(self):
        return len(self.points)


# ----------------------------------------------------------------------
# Szenengenerator
# ----------------------------------------------------------------------
def _sample_points(rng, n, h, w, min_spacing, max_tries_per_point=200):
    pts = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > max_tries_per_point * max(n, 1):
            raise ConfigError(
                f"❌ {n} Köpfe mit Mindestabstand {min_spacing} px passen nicht auf {h}×{w}"
            )
        cand = np.array([rng.uniform(1.0, w - 1.0), rng.uniform(1.0, h - 1.0)])
        if pts and np.min(np.hypot(*(np.array(pts) - cand).T)) < min_spacing:
            continue
        pts.append(cand)
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def _bump(yy, xx, cx, cy, radius, amplitude):
    """Helle Scheibe (Kern = halber Radius) mit Gauß-Abfall."""
    d = np.hypot(xx - cx, yy - cy)
    core = 0.5 * radius
    return amplitude * np.exp(-np.maximum(d - core, 0.0) ** 2 / (2.0 * core ** 2))


def gen_scene(cfg, rng=None):
    """Eine Szene: Hintergrundtextur, nicht annotierte Störflecken, Köpfe."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    noise = gaussian_filter(rng.normal(size=(h, w)), sigma=max(h, w) / 8.0)
    noise = noise / (np.abs(noise).max() + 1e-12)
    image = 0.2 + cfg.texture_amplitude * noise

    for _ in range(int(rng.integers(cfg.clutter_count[0], cfg.clutter_count[1] + 1))):
        image += _bump(yy, xx, rng.uniform(0, w), rng.uniform(0, h),
                       rng.uniform(*cfg.clutter_radius), cfg.clutter_amplitude)

    lo, hi = cfg.band_range()
    points = _sample_points(rng, int(rng.integers(lo, hi + 1)), h, w, cfg.min_spacing)
    for x, y in points:
        image += _bump(yy, xx, x, y, rng.uniform(*cfg.head_radius), cfg.head_amplitude)

    # 8-bit-Stufen, damit PGM verlustfrei ist
    image = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8) / 255.0
    return Sample(image=image, points=points)


def random_crop(sample, size, rng):
    """Zufälliger Ausschnitt; Punkte außerhalb fallen weg, der Rest wird verschoben."""
    ch, cw = size
    h, w = sample.image.shape
    if ch > h or cw > w:
        raise ConfigError(f"❌ Crop {ch}×{cw} größer als Bild {h}×{w}")
    r0 = int(rng.integers(0, h - ch + 1))
    c0 = int(rng.integers(0, w - cw + 1))
    pts = sample.points - np.array([c0, r0], dtype=np.float64)
    keep = (pts[:, 0] >= 0) & (pts[:, 0] < cw) & (pts[:, 1] >= 0) & (pts[:, 1] < ch)
    return Sample(image=sample.image[r0:r0 + ch, c0:c0 + cw].copy(), points=pts[keep].reshape(-1, 2))


# ----------------------------------------------------------------------
# PGM (P5)
# ----------------------------------------------------------------------
def write_pgm(path, image):
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _next_token(raw, pos, path):
    while pos < len(raw):
        ch = raw[pos:pos + 1]
        if ch == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(raw) and not raw[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("PGM-Header unvollständig", path=path, offset=start)
    return raw[start:pos], start, pos


def read_pgm(path):
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise FormatError("Kein binäres PGM (P5)", path=path, offset=0)
    pos = 2
    values = []
    for _ in range(3):
        tok, start, pos = _next_token(raw, pos, path)
        if not tok.isdigit():
            raise FormatError(f"PGM-Header: '{tok.decode(errors='replace')}' ist keine Zahl", path=path, offset=start)
        values.append(int(tok))
    w, h, maxval = values
    if maxval != 255:
        raise FormatError(f"PGM maxval {maxval} nicht unterstützt (nur 255)", path=path, offset=start)
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise FormatError("PGM-Header ohne Trennzeichen vor den Pixeldaten", path=path, offset=pos)
    pos += 1
    body = raw[pos:]
    if len(body) < w * h:
        raise FormatError(f"PGM abgeschnitten: {len(body)} von {w * h} Pixelbytes", path=path, offset=pos + len(body))
    return np.frombuffer(body[: w * h], dtype=np.uint8).reshape(h, w) / 255.0


# ----------------------------------------------------------------------
# Punkte (CSV)
# ----------------------------------------------------------------------
def write_points(path, points):
    df = pd.DataFrame(np.asarray(points, dtype=np.float64).reshape(-1, 2), columns=["x", "y"])
    df.to_csv(path, index=False, float_format="%.17g")


def read_points(path):
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise FormatError("Punkte-CSV ist leer (Header x,y fehlt)", path=path, offset=0)
    except pd.errors.ParserError as exc:
        raise FormatError(f"Punkte-CSV nicht lesbar: {exc}", path=path, offset=None)
    if list(df.columns) != ["x", "y"]:
        raise FormatError(f"Punkte-CSV: Header {list(df.columns)}, erwartet ['x', 'y']", path=path, offset=0)
    try:
        return df.to_numpy(dtype=np.float64).reshape(-1, 2)
    except ValueError:
        raise FormatError("Punkte-CSV enthält nicht-numerische Werte", path=path, offset=None)


# ----------------------------------------------------------------------
# Samples / Datensatz
# ----------------------------------------------------------------------
def write_sample(data_dir, name, sample):
    data_dir = Path(data_dir)
    (data_dir / "images").mkdir(parents=True, exist_ok=True)
    (data_dir / "points").mkdir(parents=True, exist_ok=True)
    write_pgm(data_dir / "images" / f"{name}.pgm", sample.image)
    write_points(data_dir / "points" / f"{name}.csv", sample.points)


def read_sample(data_dir, name):
    data_dir = Path(data_dir)
    image = read_pgm(data_dir / "images" / f"{name}.pgm")
    points = read_points(data_dir / "points" / f"{name}.csv")
    h, w = image.shape
    for p in points:
        if not (0.0 <= p[0] < w and 0.0 <= p[1] < h):
            raise PointOutOfBounds(p, h, w)
    return Sample(image=image, points=points)


def generate_dataset(out_dir, n, cfg, val_fraction=0.2, seed=0, verbose=True):
    """
    Erzeugt n Szenen; Szene i nutzt default_rng([seed, i]) und ist damit
    unabhängig von n und der Reihenfolge.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = [f"{i:04d}" for i in range(n)]

    if verbose:
        print(f"🚀 Erzeuge {n} Szenen ({cfg.height}×{cfg.width}, Zählbereich {cfg.band_range()}) → {out_dir}")

    for i, name in enumerate(tqdm(names, desc="Szenen", disable=not verbose)):
        write_sample(out_dir, name, gen_scene(cfg, np.random.default_rng([seed, i])))

    n_val = int(round(val_fraction * n))
    if 0 < n_val < n:
        train, val = train_test_split(names, test_size=n_val, random_state=seed)
    else:
        train, val = (names, []) if n_val == 0 else ([], names)
    split = {name: "train" for name in train}
    split.update({name: "val" for name in val})
    (out_dir / "split.txt").write_text("".join(f"{name} {split[name]}\n" for name in names))

    if verbose:
        print(f"✔ {len(train)} train / {len(val)} val, split.txt geschrieben")
    return split


def read_split(data_dir):
    path = Path(data_dir) / "split.txt"
    split = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("train", "val"):
            raise FormatError(f"split.txt Zeile {lineno}: '{line}'", path=path, offset=None)
        split[parts[0]] = parts[1]
    return split


def load_dataset(data_dir, split=None, verbose=False):
    """Liste von (name, Sample); split=None lädt alle Bilder."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"❌ Datensatz-Ordner fehlt: {data_dir}")
    entries = read_split(data_dir)
    names = sorted(n for n, s in entries.items() if split is None or s == split)
    if verbose:
        print(f"📄 Lade {len(names)} Bilder ({split or 'alle'}) aus {data_dir}")
    return [(name, read_sample(data_dir, name)) for name in names]


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------
def save_checkpoint(params, ckpt_dir):
    """params: geordnetes dict name → DenseArray (Module.named_parameters())."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    lines, chunks, offset = [], [], 0
    for name, p in params.items():
        data = np.ascontiguousarray(p.data, dtype=CKPT_DTYPE)
        shape = "x".join(str(s) for s in data.shape) or "scalar"
        lines.append(f"{name} {shape} {offset}\n")
        chunks.append(data.tobytes())
        offset += data.nbytes
    (ckpt_dir / "model.bin").write_bytes(b"".join(chunks))
    (ckpt_dir / "model.manifest").write_text("".join(lines))
    return ckpt_dir


def _parse_shape(text):
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def read_manifest(path):
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"Manifest Zeile {lineno} unlesbar: '{line}'", path=path, offset=None)
        entries.append((parts[0], _parse_shape(parts[1]), int(parts[2])))
    return entries


def load_checkpoint(params, ckpt_dir):
    """Schreibt die gespeicherten Gewichte in `params` (in place)."""
    ckpt_dir = Path(ckpt_dir)
    manifest = read_manifest(ckpt_dir / "model.manifest")
    raw = (ckpt_dir / "model.bin").read_bytes()

    expected = [(name, tuple(p.shape)) for name, p in params.items()]
    found = [(name, shape) for name, shape, _ in manifest]
    if expected != found:
        diff = [f"{e} ≠ {f}" for e, f in zip(expected, found) if e != f][:3]
        raise ManifestMismatch(
            f"❌ Checkpoint passt nicht zur Konfiguration ({len(found)} vs {len(expected)} Tensoren"
            f"{'; ' + ', '.join(diff) if diff else ''})"
        )

    for (name, shape, offset), p in zip(manifest, params.values()):
        nbytes = int(np.prod(shape, dtype=np.int64)) * CKPT_DTYPE.itemsize
        if offset + nbytes > len(raw):
            raise FormatError(f"model.bin zu kurz für '{name}'", path=ckpt_dir / "model.bin", offset=len(raw))
        p.data = np.frombuffer(raw, dtype=CKPT_DTYPE, count=nbytes // CKPT_DTYPE.itemsize,
                               offset=offset).astype(np.float64).reshape(shape)
    return params
