"""Pseudo-label loss warm-up and polynomial learning-rate decay."""

from __future__ import annotations

import math
from dataclasses import dataclass

from scribblevs.labels import ConfigError

LR_FLOOR = 1e-7


class ScheduleExhausted(ValueError):
    """Raised when the LR schedule is queried past its last iteration."""


@dataclass(frozen=True)
class WarmupSchedule:
    t_warm: int

    def __post_init__(self):
        if int(self.t_warm) < 1:
            raise ConfigError(f"t_warm must be >= 1, got {self.t_warm}")

    def __call__(self, t: int) -> float:
        return lambda_at(self, t)


@dataclass(frozen=True)
class PolyLRSchedule:
    base_lr: float
    max_iters: int
    power: float = 0.9

    def __post_init__(self):
        if self.base_lr <= 0 or self.max_iters < 1 or self.power <= 0:
            raise ConfigError(f"invalid poly schedule {self}")

    def __call__(self, t: int) -> float:
        return lr_at(self, t)


def lambda_at(sched: WarmupSchedule, t: int) -> float:
    """Gaussian ramp ``exp(-5 (1 - t/t_warm)^2)``, held at 1 from ``t_warm`` on."""
    if t < 0:
        raise ValueError(f"step must be non-negative, got {t}")
    if t >= sched.t_warm:
        return 1.0
    return math.exp(-5.0 * (1.0 - t / sched.t_warm) ** 2)


def lr_at(sched: PolyLRSchedule, t: int) -> float:
    if t < 0:
        raise ValueError(f"step must be non-negative, got {t}")
    if t > sched.max_iters:
        raise ScheduleExhausted(f"step {t} beyond max_iters={sched.max_iters}")
    return max(sched.base_lr * (1.0 - t / sched.max_iters) ** sched.power, LR_FLOOR)
