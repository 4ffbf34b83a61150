# crowd_counting_desk/core/optim.py

"""
Adam mit Bias-Korrektur über benannte Parameter.
"""

from dataclasses import dataclass, field

import numpy as np

from utils.errors import ConfigError


@dataclass
class OptimConfig:
    lr: float = 1e-3
    betas: list = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 4

    def validate(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError(f"❌ optim.lr={self.lr} und optim.eps={self.eps} müssen > 0 sein")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"❌ optim.betas={self.betas} müssen in [0, 1) liegen")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("❌ optim.epochs und optim.batch_size müssen >= 1 sein")
        return self


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * p.grad
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * p.grad ** 2
            p.data = p.data - self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
