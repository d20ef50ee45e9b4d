"""Run configuration: one flat record, loadable from flat JSON.

``RunConfig()`` carries the full-scale optimiser and width settings;
``RunConfig.desk()`` shrinks the widths and raises the learning rate so a
full train + evaluate finishes in seconds on one laptop core.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, fields

from errors import ValidationError

BACKENDS = ("hyperbolic", "euclidean", "cosine")
ATTENTIONS = ("mpsa", "softmax")
LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    curvature: float = 1.0
    d_h: int = 512
    d_t: int = 768
    d_v: int = 768
    d_a: int = 64
    spatial: int = 36
    epsilon: float = 0.05
    sinkhorn_iters: int = 10
    alpha: float = 2.0
    beta: float = 0.5
    tau: float = 1.0
    lr: float = 5e-5
    weight_decay: float = 0.05
    lr_schedule: str = "constant"
    batch_size: int = 18
    steps: int = 300
    backend: str = "hyperbolic"
    attention: str = "mpsa"
    ln_eps: float = 1e-5
    n_train: int = 512
    n_test: int = 128
    noise: float = 0.5
    sweep_workers: int = 1

    def __post_init__(self):
        positive = ("curvature", "d_h", "d_t", "d_v", "d_a", "spatial", "epsilon",
                    "sinkhorn_iters", "tau", "batch_size", "steps", "ln_eps", "n_train", "n_test", "sweep_workers")
        non_negative = ("alpha", "beta", "lr", "weight_decay", "noise")
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be positive, got {value}")
        for name in non_negative:
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(f"{name} must be non-negative, got {value}")
        if self.batch_size < 2:
            raise ValidationError(f"batch_size must be at least 2, got {self.batch_size}")
        if self.backend not in BACKENDS:
            raise ValidationError(f"backend must be one of {BACKENDS}, got '{self.backend}'")
        if self.attention not in ATTENTIONS:
            raise ValidationError(f"attention must be one of {ATTENTIONS}, got '{self.attention}'")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValidationError(f"lr_schedule must be one of {LR_SCHEDULES}, got '{self.lr_schedule}'")

    @classmethod
    def desk(cls) -> "RunConfig":
        # full scale: d_h 512, prompt/visual width 768, batch 18, lr 5e-5
        return cls(d_h=16, d_t=32, d_v=32, d_a=64, batch_size=16, steps=300, lr=5e-3)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **overrides) -> "RunConfig":
        return self.from_dict(overrides, base=self)

    @classmethod
    def from_dict(cls, data: dict, base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls.desk()
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        values = base.to_dict()
        for key, raw in data.items():
            kind = type(values[key])
            try:
                if kind is int:
                    if isinstance(raw, float) and not raw.is_integer():
                        raise ValueError(f"{raw} is not an integer")
                    values[key] = int(raw)
                elif kind is float:
                    values[key] = float(raw)
                else:
                    values[key] = str(raw)
            except (TypeError, ValueError) as e:
                raise ValidationError(f"config key '{key}': {e}") from e
        return cls(**values)


def load_config(path) -> RunConfig:
    """Read a flat JSON object of RunConfig fields on top of the desk preset."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ValidationError(f"{path} must hold a JSON object")
    return RunConfig.from_dict(data)
