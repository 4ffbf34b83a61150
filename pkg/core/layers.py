# crowd_counting_desk/core/layers.py

"""
Parameter-Container für Faltungen, lineare Schichten und LayerNorm.
Gewichte: He-Initialisierung (fan-in), Bias = 0.
"""

import numpy as np

from core import diffcore as dc
from core.diffcore import DenseArray


class Module:
    """Sammelt Parameter rekursiv in Attribut-Reihenfolge."""

    def named_parameters(self, prefix=""):
        params = {}
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, DenseArray) and value.requires_grad:
                params[full] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{full}.{i}."))
        return params

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, k, rng, stride=1, padding=None):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.w = DenseArray(he_normal(rng, (out_ch, in_ch, k, k), in_ch * k * k), requires_grad=True)
        self.b = DenseArray(np.zeros(out_ch), requires_grad=True)

    def __call__(self, x):
        return dc.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True):
        self.w = DenseArray(he_normal(rng, (in_dim, out_dim), in_dim), requires_grad=True)
        self.b = DenseArray(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x):
        out = dc.matmul(x, self.w)
        return out + self.b if self.b is not None else out


class LayerNorm(Module):
    def __init__(self, dim):
        self.gamma = DenseArray(np.ones(dim), requires_grad=True)
        self.beta = DenseArray(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return dc.layer_norm(x, self.gamma, self.beta)
