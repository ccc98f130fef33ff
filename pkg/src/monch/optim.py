"""Adam optimizer with bias correction and a step-decay schedule."""

from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .tensor import NumericsError, Tensor


class Adam:
    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name]
            if not np.isfinite(g).all():
                raise NumericsError(f"adam_step({name})")
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.data.dtype)
            p.data = p.data - update


def learning_rate_at(epoch: int, config: TrainConfig) -> float:
    """Step decay: lr * decay^(milestones crossed), milestones as fractions
    of the configured epoch count."""
    crossed = sum(1 for frac in config.milestones if epoch >= int(frac * config.epochs))
    return config.learn_rate * (config.decay_factor ** crossed)
