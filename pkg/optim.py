import math
from dataclasses import dataclass

import numpy as np

from errors import ValidationError
from tensor_core import Tensor


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 5e-5
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (self.lr >= 0 and self.weight_decay >= 0 and self.eps > 0):
            raise ValidationError(f"invalid AdamW settings: {self}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError(f"AdamW betas must lie in [0, 1), got {self.beta1}, {self.beta2}")


class AdamW:
    """Adam with decoupled weight decay over a named set of leaf tensors.

    Parameters are updated by rebinding ``Tensor.data``; the moment buffers
    are keyed by parameter name so the optimiser state can be inspected.
    """

    def __init__(self, params: dict[str, Tensor], config: AdamWConfig | None = None):
        self.params = dict(params)
        self.config = config or AdamWConfig()
        self.step_count = 0
        self.m = {name: np.zeros(p.shape) for name, p in self.params.items()}
        self.v = {name: np.zeros(p.shape) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float | None = None):
        cfg = self.config
        lr = cfg.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - cfg.beta1 ** t
        bias2 = 1.0 - cfg.beta2 ** t
        for name, p in self.params.items():
            g = np.zeros(p.shape) if p.grad is None else p.grad
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            if lr == 0:
                continue
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            data = p.data * (1.0 - lr * cfg.weight_decay)
            data = data - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            data.flags.writeable = False
            p.data = data


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Half-cosine decay from ``base_lr`` at step 0 to 0 after ``total_steps``."""
    if total_steps <= 1:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


def learning_rate(schedule: str, base_lr: float, step: int, total_steps: int) -> float:
    if schedule == "constant":
        return base_lr
    if schedule == "cosine":
        return cosine_lr(base_lr, step, total_steps)
    raise ValidationError(f"unknown lr schedule '{schedule}'")
