"""Adaptive-moment (Adam) optimizer over named parameter dicts."""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 0.0005,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0,
                 frozen: Optional[Iterable[str]] = None):
        if lr <= 0:
            raise ValueError("learning rate must be > 0")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.frozen = frozenset(frozen or ())
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        """Update in place; parameters without a gradient are left alone."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, g in grads.items():
            if key in self.frozen:
                continue
            p = self.params[key]
            if self.weight_decay:
                g = g + self.weight_decay * p
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
