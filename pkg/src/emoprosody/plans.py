"""Scaling-plan value types exchanged between the prompt client and the scaler."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

DIMENSIONS = ("pitch", "energy", "duration")


@dataclass(frozen=True)
class Factors:
    """One (pitch, energy, duration) triple, in raw or mapped units."""

    pitch: float = 0.0
    energy: float = 0.0
    duration: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {"pitch": self.pitch, "energy": self.energy, "duration": self.duration}

    def is_zero(self) -> bool:
        return self.pitch == 0.0 and self.energy == 0.0 and self.duration == 0.0


ZERO = Factors()


@dataclass(frozen=True)
class RawScalingPlan:
    """Global and per-word factors as the language model emits them.

    Pitch and energy live in [-5, 5], duration in [-2, 2]. ``warnings`` and
    ``attempts`` are bookkeeping and do not take part in equality.
    """

    global_: Factors
    locals: tuple[Factors, ...]
    words: tuple[str, ...]
    rationale: str | None = None
    degraded: bool = False
    attempts: int = field(default=0, compare=False)
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.locals) != len(self.words):
            raise ValueError(
                f"plan has {len(self.locals)} local triples for {len(self.words)} words"
            )

    @classmethod
    def neutral(cls, words, *, degraded: bool = False, attempts: int = 0,
                warnings=()) -> RawScalingPlan:
        words = tuple(words)
        return cls(ZERO, tuple(ZERO for _ in words), words, None, degraded,
                   attempts, tuple(warnings))

    def is_neutral(self) -> bool:
        return self.global_.is_zero() and all(f.is_zero() for f in self.locals)

    def without_global(self) -> RawScalingPlan:
        return replace(self, global_=ZERO)
