"""Per-epoch learning-rate schedules."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

from ..errors import ConfigError, ContractError


@dataclass
class ScheduleParams:
    T: int = 140
    warmup: int = 10
    lr_peak: float = 6e-4
    lr_floor: float = 6e-7

    @property
    def lr_start(self) -> float:
        # the linear ramp passes through lr_peak / warmup at epoch 1
        return self.lr_peak / self.warmup

    def __post_init__(self):
        if self.warmup < 1 or self.T <= self.warmup:
            raise ConfigError(f"need T > warmup >= 1, got T={self.T}, warmup={self.warmup}", field="epochs")
        if not self.lr_floor < self.lr_start < self.lr_peak:
            raise ConfigError("need lr_floor < lr_start < lr_peak", field="lr_floor")


def lr_schedule(t: int, p: ScheduleParams) -> float:
    """Warmup then cosine decay, indexed by 1-based epoch ``t``."""
    if not 1 <= t <= p.T:
        raise ContractError(f"epoch {t} outside [1, {p.T}]")
    if t <= p.warmup:
        return p.lr_peak * t / p.warmup
    lr = p.lr_peak * 0.5 * (1 + math.cos(math.pi * (t - p.warmup) / (p.T - p.warmup)))
    return max(p.lr_floor, lr)


def scaled_drop_epochs(T: int, drops: Sequence[int] = (50, 80, 110), reference: int = 140) -> tuple:
    """Drop epochs for the step baseline, rescaled from a ``reference``-epoch run."""
    if T == reference:
        return tuple(drops)
    return tuple(max(1, int(round(d * T / reference))) for d in drops)


def step_schedule(t: int, T: int, lr: float = 6e-4, drops: Sequence[int] = (50, 80, 110),
                  factor: float = 0.1) -> float:
    """Constant rate reduced by ``factor`` from each epoch listed in ``drops`` onward."""
    if not 1 <= t <= T:
        raise ContractError(f"epoch {t} outside [1, {T}]")
    return lr * factor ** sum(1 for d in drops if t >= d)


def write_schedule_csv(path, lrs: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr"])
        for epoch, lr in enumerate(lrs, start=1):
            w.writerow([epoch, repr(float(lr))])
