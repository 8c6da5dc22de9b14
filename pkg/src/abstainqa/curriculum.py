"""Per-epoch intervention-probability schedules.

The default quadratic schedule decays from p_r at epoch 1 to exactly 0 at the
final epoch, so late training sees only original question-video pairs. Linear
also reaches 0 at the end; exponential decays toward 0 without reaching it;
fixed holds a constant probability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError

KINDS = ("quadratic", "linear", "exponential", "fixed")


@dataclass(frozen=True)
class Schedule:
    kind: str = "quadratic"
    epochs: int = 30
    p_r: float = 0.3
    lam: float = 5.0
    fixed_p: float = 0.25

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.epochs < 1:
            raise ConfigError("schedule needs at least one epoch")
        if not 0.0 <= self.p_r <= 1.0 or not 0.0 <= self.fixed_p <= 1.0:
            raise ConfigError("schedule probabilities must lie in [0, 1]")
        if self.lam <= 0.0:
            raise ConfigError("exponential decay rate must be positive")


def prob(schedule: Schedule, epoch: int) -> float:
    """Intervention probability at a 1-based epoch."""
    e, E = epoch, schedule.epochs
    if not 1 <= e <= E:
        raise ConfigError(f"epoch {e} outside [1, {E}]")
    if schedule.kind == "quadratic":
        return schedule.p_r * (e - E) ** 2 / E**2
    if schedule.kind == "linear":
        if E == 1:
            return 0.0
        return schedule.p_r * (E - e) / (E - 1)
    if schedule.kind == "exponential":
        if E == 1:
            return schedule.p_r
        return schedule.p_r * math.exp(-schedule.lam * (e - 1) / (E - 1))
    return schedule.fixed_p


def should_intervene(p: float, rng) -> bool:
    if not 0.0 <= p <= 1.0:
        raise ConfigError("probability must lie in [0, 1]")
    return bool(rng.random() < p)
