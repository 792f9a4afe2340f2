"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValidationError("learning rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValidationError("Adam eps must be > 0")


class Adam:
    """Moment buffers start at zero; ``step`` updates ``params.tensors`` in place."""

    def __init__(self, params, cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params, grads: dict | None = None):
        grads = params.grads if grads is None else grads
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, p in params.tensors.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= (c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)).astype(p.dtype)


def adam_step(params, grads: dict, state: Adam):
    state.step(params, grads)
    return params
