"""Adam with warmup/anneal learning-rate schedule.

The rate climbs linearly from 0 to the base rate over the warmup window,
then decays as base_lr * (1 - progress)^0.5, reaching exactly 0 at the
final step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autodiff import Parameter


@dataclass
class AdamConfig:
    max_steps: int
    base_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-9
    batch_size: int = 50
    warmup_steps: int = field(init=False)

    def __post_init__(self):
        self.warmup_steps = self.max_steps // 20
        if not 0 < self.warmup_steps < self.max_steps:
            raise ValueError(
                f"invalid schedule: warmup_steps={self.warmup_steps}, max_steps={self.max_steps}"
            )


def lr_at(step: int, config: AdamConfig) -> float:
    """Learning rate at a 0-based step; defined on [0, max_steps]."""
    if not 0 <= step <= config.max_steps:
        raise ValueError(f"step {step} outside [0, {config.max_steps}]")
    if step <= config.warmup_steps:
        return config.base_lr * step / config.warmup_steps
    progress = (step - config.warmup_steps) / (config.max_steps - config.warmup_steps)
    return config.base_lr * math.sqrt(1.0 - progress)


def adam_step(params: Iterable[Parameter], config: AdamConfig, step: int) -> float:
    """One bias-corrected Adam update from each parameter's current gradient.

    `step` is 0-based; returns the learning rate that was applied. Frozen
    parameters are skipped.
    """
    lr = lr_at(step, config)
    t = step + 1
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    for p in params:
        if not p.trainable:
            continue
        g = p.grad
        # in-place moment updates; one scratch buffer per parameter
        p.adam_m *= config.beta1
        p.adam_m += (1.0 - config.beta1) * g
        p.adam_v *= config.beta2
        p.adam_v += (1.0 - config.beta2) * (g * g)
        denom = np.sqrt(p.adam_v / c2)
        denom += config.epsilon
        p.data -= (lr / c1) * p.adam_m / denom
    return lr
