"""Shared learning-rate schedule: linear warmup, then cosine decay to a floor.

All optimizers in the harness are evaluated together with this schedule.
It is stepped once per optimizer step; the warmup length and the floor
are fractions of the total step count and of the base learning rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import BadHyperparameterError, OutOfRangeError


@dataclass(frozen=True)
class ScheduleSpec:
    base_lr: float
    total_steps: int
    warmup_fraction: float = 0.01
    min_lr_fraction: float = 0.01
    warmup_steps: int = field(init=False)
    warmup_clamped: bool = field(init=False)

    def __post_init__(self):
        if self.base_lr <= 0:
            raise BadHyperparameterError("base_lr must be positive")
        if self.total_steps < 2:
            raise BadHyperparameterError("total_steps must be at least 2")
        if not 0 < self.warmup_fraction <= 1:
            raise BadHyperparameterError("warmup_fraction must be in (0, 1]")
        if not 0 < self.min_lr_fraction < 1:
            raise BadHyperparameterError("min_lr_fraction must be in (0, 1)")
        w = max(1, round(self.warmup_fraction * self.total_steps))
        clamped = w > self.total_steps - 1
        if clamped:
            # 100% warmup would leave no cosine phase; keep one decay step
            w = self.total_steps - 1
        object.__setattr__(self, "warmup_steps", w)
        object.__setattr__(self, "warmup_clamped", clamped)

    @property
    def eta_min(self) -> float:
        return self.min_lr_fraction * self.base_lr


def lr_at(spec: ScheduleSpec, step: int) -> float:
    """Learning rate for a 0-based optimizer step.

    Warmup ramps linearly from base_lr/w so the very first step already
    moves; the last warmup step hits base_lr exactly and the final step
    hits eta_min exactly (the decay is evaluated as a convex combination,
    which keeps both endpoints exact in floating point for any w and T).
    """
    if not 0 <= step < spec.total_steps:
        raise OutOfRangeError(
            f"step {step} outside [0, {spec.total_steps})"
        )
    w = spec.warmup_steps
    if step < w:
        return spec.base_lr * ((step + 1) / w)
    span = spec.total_steps - 1 - w
    if span == 0:
        return spec.eta_min
    weight = 0.5 * (1.0 + math.cos(math.pi * ((step - w) / span)))
    return spec.base_lr * weight + spec.eta_min * (1.0 - weight)
