"""Points on the valence/arousal circumplex and their geometry."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class InvalidValue(ValueError):
    """A coordinate was NaN or infinite."""


class Quadrant(enum.Enum):
    HIGH_AROUSAL_POSITIVE_VALENCE = "high_arousal_positive_valence"
    HIGH_AROUSAL_NEGATIVE_VALENCE = "high_arousal_negative_valence"
    LOW_AROUSAL_NEGATIVE_VALENCE = "low_arousal_negative_valence"
    LOW_AROUSAL_POSITIVE_VALENCE = "low_arousal_positive_valence"
    # exact zero in one coordinate: the point sits on a centerline
    AXIS = "axis"
    ORIGIN = "origin"


@dataclass(frozen=True)
class EmotionPoint:
    valence: float
    arousal: float

    def __post_init__(self):
        if not (math.isfinite(self.valence) and math.isfinite(self.arousal)):
            raise InvalidValue(f"non-finite emotion point ({self.valence}, {self.arousal})")

    def as_tuple(self) -> tuple[float, float]:
        return (self.valence, self.arousal)


ORIGIN = EmotionPoint(0.0, 0.0)


def _saturate(x: float) -> float:
    return min(1.0, max(-1.0, x))


def clamp(valence: float, arousal: float) -> EmotionPoint:
    """Build a point with both coordinates saturated to [-1, 1]."""
    valence, arousal = float(valence), float(arousal)
    if not (math.isfinite(valence) and math.isfinite(arousal)):
        raise InvalidValue(f"non-finite emotion point ({valence}, {arousal})")
    return EmotionPoint(_saturate(valence), _saturate(arousal))


def quadrant(p: EmotionPoint) -> Quadrant:
    v, a = p.valence, p.arousal
    if v == 0.0 and a == 0.0:
        return Quadrant.ORIGIN
    if v == 0.0 or a == 0.0:
        return Quadrant.AXIS
    if a > 0:
        return (Quadrant.HIGH_AROUSAL_POSITIVE_VALENCE if v > 0
                else Quadrant.HIGH_AROUSAL_NEGATIVE_VALENCE)
    return (Quadrant.LOW_AROUSAL_POSITIVE_VALENCE if v > 0
            else Quadrant.LOW_AROUSAL_NEGATIVE_VALENCE)


def intensity(p: EmotionPoint) -> float:
    # raw norm, so the corners reach sqrt(2)
    return math.hypot(p.valence, p.arousal)


def distance(a: EmotionPoint, b: EmotionPoint) -> float:
    return math.hypot(a.valence - b.valence, a.arousal - b.arousal)
