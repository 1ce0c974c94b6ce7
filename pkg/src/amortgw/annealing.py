"""Annealing schedules for the entropic regularisation strength."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

from .errors import InvalidInputError

KINDS = ("constant", "geometric", "staircase")


@dataclass(frozen=True)
class AnnealSchedule:
    """Decay of epsilon from ``eps_start`` to ``eps_end``.

    ``geometric`` interpolates log-linearly over ``decay_steps`` steps;
    ``staircase`` holds ``levels`` values of that curve. After
    ``floor_after`` steps (default ``decay_steps``) epsilon stays at
    ``eps_end``.
    """

    kind: str = "geometric"
    eps_start: float = 1.0
    eps_end: float = 0.01
    decay_steps: int = 100
    floor_after: Optional[int] = None
    levels: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if not (self.eps_end > 0 and self.eps_start >= self.eps_end):
            raise InvalidInputError(
                f"need eps_start >= eps_end > 0, got eps_start={self.eps_start}, eps_end={self.eps_end}"
            )
        if self.decay_steps < 1:
            raise InvalidInputError("decay_steps must be >= 1")
        if self.floor_after is not None and self.floor_after < 0:
            raise InvalidInputError("floor_after must be >= 0")
        if self.levels < 2:
            raise InvalidInputError("staircase needs at least 2 levels")

    @classmethod
    def constant(cls, eps):
        return cls("constant", eps, eps, 1)

    @classmethod
    def for_training(cls, steps, eps_start=100.0, eps_end=0.01, fraction=0.7, kind="geometric"):
        """Default training schedule: decay over ``fraction`` of the steps, then hold.

        The values are on costs normalised by their centred RMS; starting
        far above 1 keeps the first plans near the product coupling.
        """
        return cls(kind, eps_start, eps_end, max(1, int(round(fraction * steps))))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def epsilon_at(schedule, step):
    """Epsilon at training step ``step`` (non-increasing in ``step``)."""
    if step < 0:
        raise InvalidInputError("step must be >= 0")
    s = schedule
    if s.kind == "constant":
        return s.eps_start
    hold = s.decay_steps if s.floor_after is None else min(s.decay_steps, s.floor_after)
    if step >= hold:
        return s.eps_end
    progress = step / s.decay_steps
    if s.kind == "staircase":
        progress = min(math.floor(progress * s.levels), s.levels - 1) / (s.levels - 1)
    if progress <= 0:
        return s.eps_start
    if progress >= 1:
        return s.eps_end
    return s.eps_start * (s.eps_end / s.eps_start) ** progress
