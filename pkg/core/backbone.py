# crowd_counting_desk/core/backbone.py

"""
Backbone (kleines 5-Stufen-CNN), Fusion auf 1/8 und Regressions-Decoder.

    Bild 1×H×W
      └ Stufe 1..3 (+ Pool)      → 1/8
      └ Stufe 4                  → f8   (C₈ × H/8 × W/8)
      └ Pool, Stufe 5, Pool      → p5   (C  × H/32 × W/32)
"""

from dataclasses import dataclass, field

import numpy as np

from core import diffcore as dc
from core.diffcore import DenseArray
from core.layers import Conv2d, Module
from utils.errors import BadSize, ConfigError, ShapeMismatch

MIN_SIDE = 64


# ----------------------------------------------------------------------
# Konfiguration
# ----------------------------------------------------------------------
@dataclass
class ModelConfig:
    stage_channels: list = field(default_factory=lambda: [16, 32, 64, 64, 64])
    decoder_channels: list = field(default_factory=lambda: [64, 32])
    mpm_enabled: bool = True
    mpm_layers: int = 4
    hidden: int = 128
    heads: int = 2
    ffn: int = 512
    clm_hidden: int = 64
    clm_dim: int = 64
    init_seed: int = 0

    @property
    def c5(self):
        return self.stage_channels[-1]

    @property
    def c8(self):
        return self.stage_channels[3]

    @property
    def fused_channels(self):
        return (self.hidden if self.mpm_enabled else self.c5) + self.c8

    def validate(self):
        if len(self.stage_channels) != 5 or min(self.stage_channels) < 1:
            raise ConfigError(f"❌ model.stage_channels braucht 5 positive Werte: {self.stage_channels}")
        if len(self.decoder_channels) != 2 or min(self.decoder_channels) < 1:
            raise ConfigError(f"❌ model.decoder_channels braucht 2 positive Werte: {self.decoder_channels}")
        if self.heads < 1 or self.hidden % self.heads:
            raise ConfigError(f"❌ model.hidden={self.hidden} nicht durch heads={self.heads} teilbar")
        if self.hidden % 4:
            raise ConfigError(f"❌ model.hidden={self.hidden} muss durch 4 teilbar sein (2-D-Positionen)")
        if self.mpm_layers < 0 or self.ffn < 1:
            raise ConfigError("❌ model.mpm_layers >= 0 und model.ffn >= 1 erforderlich")
        return self


# ----------------------------------------------------------------------
# Datentypen
# ----------------------------------------------------------------------
@dataclass
class FeaturePyramid:
    f8: DenseArray
    p5: DenseArray


@dataclass
class DensityMapPred:
    d: DenseArray

    @property
    def count(self):
        return float(self.d.data.sum())


def as_image(image):
    """Akzeptiert H×W oder 1×H×W und prüft die Größe."""
    image = dc.as_array(image)
    if image.ndim == 2:
        image = dc.reshape(image, (1,) + image.shape)
    if image.ndim != 3 or image.shape[0] != 1:
        raise ShapeMismatch(f"❌ Erwartet Graustufenbild 1×H×W, bekam {image.shape}")
    _, h, w = image.shape
    if h % 32 or w % 32 or h < MIN_SIDE or w < MIN_SIDE:
        raise BadSize(f"❌ Bildgröße {h}×{w}: Seiten müssen Vielfache von 32 und >= {MIN_SIDE} sein")
    return image


# ----------------------------------------------------------------------
# Backbone
# ----------------------------------------------------------------------
class Backbone(Module):
    def __init__(self, cfg, rng):
        self.stages = []
        in_ch = 1
        for ch in cfg.stage_channels:
            self.stages.append(_Stage(in_ch, ch, rng))
            in_ch = ch

    def encode(self, image):
        x = as_image(image)
        f8 = None
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i == 3:
                f8 = x
            x = dc.max_pool2d(x, 2)
        return FeaturePyramid(f8=f8, p5=x)


class _Stage(Module):
    def __init__(self, in_ch, out_ch, rng):
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng)

    def __call__(self, x):
        return dc.relu(self.conv2(dc.relu(self.conv1(x))))


def encode(image, backbone):
    return backbone.encode(image)


# ----------------------------------------------------------------------
# Fusion
# ----------------------------------------------------------------------
def fuse_to_f8(fd_spatial, f8):
    """Bilinear ×4 hochskalieren und kanalweise mit f8 verketten."""
    fd_spatial, f8 = dc.as_array(fd_spatial), dc.as_array(f8)
    if fd_spatial.ndim != 3 or f8.ndim != 3 or \
            (fd_spatial.shape[1] * 4, fd_spatial.shape[2] * 4) != f8.shape[1:]:
        raise ShapeMismatch(f"❌ fuse_to_f8: fd {fd_spatial.shape} passt nicht zu f8 {f8.shape}")
    return dc.concat([dc.upsample_bilinear(fd_spatial, 4), f8], axis=0)


# ----------------------------------------------------------------------
# Decoder
# ----------------------------------------------------------------------
class Decoder(Module):
    def __init__(self, in_ch, channels, rng):
        self.conv1 = Conv2d(in_ch, channels[0], 3, rng)
        self.conv2 = Conv2d(channels[0], channels[1], 3, rng)
        self.out = Conv2d(channels[1], 1, 1, rng)

    def decode(self, fused):
        x = dc.relu(self.conv1(fused))
        x = dc.relu(self.conv2(x))
        return DensityMapPred(d=dc.relu(self.out(x)))


def decode(fused, decoder):
    return decoder.decode(fused)


def feature_response(fused, stride=8):
    """Kanalmittel der Dichtemerkmale, auf Bildgröße hochskaliert (für Karten-Export)."""
    fused = dc.as_array(fused)
    resp = fused.data.mean(axis=0, keepdims=True)
    with dc.no_grad():
        return dc.upsample_bilinear(resp, stride).data[0]


def init_rng(cfg):
    return np.random.default_rng(cfg.init_seed)
