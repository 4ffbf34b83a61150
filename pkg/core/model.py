# crowd_counting_desk/core/model.py

"""
Gesamtmodell: Backbone → (MPM-Encoder) → Fusion auf 1/8 → Decoder.
Der CLM-Kopf hängt an den fusionierten Merkmalen und wird nur im Training
ausgewertet (`with_clm=True`).
"""

from dataclasses import dataclass

from core import diffcore as dc
from core.backbone import Backbone, Decoder, fuse_to_f8, init_rng
from core.clm import ProjectionHead, project
from core.layers import Module
from core.mpm import MpmEncoder, encode_pair, sincos_2d


@dataclass
class ForwardResult:
    p5: object
    f8: object
    fd: object
    fd_masked: object
    fused: object
    density: object
    proj: object = None


class CountingModel(Module):
    def __init__(self, cfg):
        cfg.validate()
        self.cfg = cfg
        rng = init_rng(cfg)
        self.backbone = Backbone(cfg, rng)
        self.encoder = MpmEncoder(cfg, rng) if cfg.mpm_enabled else None
        self.decoder = Decoder(cfg.fused_channels, cfg.decoder_channels, rng)
        self.clm_head = ProjectionHead(cfg.fused_channels, cfg.clm_hidden, cfg.clm_dim, rng)

    def forward(self, image, mask=None, with_clm=False):
        pyr = self.backbone.encode(image)
        c, h5, w5 = pyr.p5.shape
        p5_flat = dc.reshape(pyr.p5, (c, h5 * w5))

        fd = fd_masked = None
        if self.encoder is not None:
            out = encode_pair(p5_flat, self.encoder, sincos_2d(h5, w5, self.cfg.hidden), mask)
            fd, fd_masked = out.fd, out.fd_masked
            # gezählt wird ausschließlich mit der unmaskierten Kodierung
            fd_spatial = dc.reshape(dc.transpose(fd), (self.cfg.hidden, h5, w5))
        else:
            fd_spatial = pyr.p5

        fused = fuse_to_f8(fd_spatial, pyr.f8)
        density = self.decoder.decode(fused)
        proj = project(fused, self.clm_head) if with_clm else None
        return ForwardResult(p5=p5_flat, f8=pyr.f8, fd=fd, fd_masked=fd_masked,
                             fused=fused, density=density, proj=proj)

    def predict(self, image):
        """Inferenz ohne Graph und ohne CLM."""
        with dc.no_grad():
            return self.forward(image).density.d.data.copy()

    __call__ = forward
