"""Adaptive intra-distillation strength.

For a target strength ``alpha > 1`` and sentinels ``q > p > 0`` over ``N``
updates, the strength at update ``x`` is::

    alpha * (p * x / N) ** gamma    for x < N / p
    alpha                           for x >= N / p

with ``gamma = log(1 / alpha) / log(p / q)``. The strength therefore reaches
exactly 1 at ``x = N / q``; ``q = alpha * p`` gives a linear ramp. For
``alpha <= 1`` (or ``adaptive=False``) the strength is the constant alpha.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class AlphaSchedule:
    alpha: float
    p: float = 5.0
    q: float = 10.0
    n_total: int = 1
    adaptive: bool = True

    def __post_init__(self) -> None:
        if not self.alpha >= 0 or math.isinf(self.alpha):
            raise ScheduleError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not self.p > 0:
            raise ScheduleError(f"sentinel p must be > 0, got {self.p}")
        if not self.q > self.p:
            raise ScheduleError(f"sentinel q must exceed p ({self.p}), got {self.q}")
        if int(self.n_total) != self.n_total or self.n_total < 1:
            raise ScheduleError(f"n_total must be a positive integer, got {self.n_total}")

    @property
    def ramps(self) -> bool:
        return self.adaptive and self.alpha > 1.0


def gamma(s: AlphaSchedule) -> float:
    if not s.alpha > 1.0:
        raise ScheduleError(f"gamma is undefined for alpha <= 1 (alpha={s.alpha}); the schedule is constant")
    return math.log(1.0 / s.alpha) / math.log(s.p / s.q)


def alpha_at(s: AlphaSchedule, x: int) -> float:
    if x < 0:
        raise ScheduleError(f"step must be >= 0, got {x}")
    if not s.ramps:
        return float(s.alpha)
    if x >= s.n_total / s.p:
        return float(s.alpha)
    return s.alpha * (s.p * x / s.n_total) ** gamma(s)


def sample_curve(s: AlphaSchedule, samples: int) -> list[tuple[int, float]]:
    """``samples`` evenly spaced (x, alpha') points from 0 to N inclusive."""
    if samples < 2:
        raise ScheduleError("need at least 2 samples")
    xs = [round(i * s.n_total / (samples - 1)) for i in range(samples)]
    return [(x, alpha_at(s, x)) for x in xs]
