"""Phoneme-level prosody tracks and the global/local scaling rules applied to them.

Duration and energy are scaled multiplicatively, pitch additively::

    d' = d * G_d * sigma_i
    e' = e * G_e * eps_i
    p' = p + G_p + pi_i

where word ``i`` contributes the same local factors to every one of its
phonemes. Raw language-model values are turned into factors by a quadratic
map that sends the raw range endpoints to the target interval and 0 to 1.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

from .errors import AlignmentError, ProsodyWarning, TrackError
from .plans import Factors, RawScalingPlan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhonemeProsody:
    symbol: str
    duration: float
    energy: float
    pitch: float

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise TrackError(f"phoneme {self.symbol!r}: duration must be > 0, got {self.duration}")
        if not (math.isfinite(self.energy) and self.energy > 0):
            raise TrackError(f"phoneme {self.symbol!r}: energy must be > 0, got {self.energy}")
        if not math.isfinite(self.pitch):
            raise TrackError(f"phoneme {self.symbol!r}: pitch must be finite")


@dataclass(frozen=True)
class WordSpan:
    """A word covering phonemes ``first..last`` inclusive."""

    word: str
    first: int
    last: int

    def __post_init__(self):
        # numpy integers would otherwise leak into JSON output
        object.__setattr__(self, "first", int(self.first))
        object.__setattr__(self, "last", int(self.last))

    def __len__(self):
        return self.last - self.first + 1


@dataclass(frozen=True)
class PitchRange:
    p_min: float
    p_max: float

    def __post_init__(self):
        if not (math.isfinite(self.p_min) and math.isfinite(self.p_max)):
            raise TrackError("pitch range bounds must be finite")
        if not self.p_min < self.p_max:
            raise TrackError(f"pitch range needs p_min < p_max, got [{self.p_min}, {self.p_max}]")

    @property
    def span(self) -> float:
        return self.p_max - self.p_min


@dataclass(frozen=True)
class ProsodyTrack:
    utterance_id: str
    text: str
    phonemes: tuple[PhonemeProsody, ...]
    words: tuple[WordSpan, ...]
    pitch_range: PitchRange | None = None
    emotion: str | None = None
    intensity: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "phonemes", tuple(self.phonemes))
        object.__setattr__(self, "words", tuple(self.words))
        if not self.phonemes:
            raise TrackError(f"{self.utterance_id}: track has no phonemes")
        expected = 0
        for w in self.words:
            if w.first != expected:
                raise TrackError(
                    f"{self.utterance_id}: word {w.word!r} starts at phoneme {w.first}, "
                    f"expected {expected} (spans must be contiguous and non-overlapping)"
                )
            if w.last < w.first:
                raise TrackError(f"{self.utterance_id}: word {w.word!r} is empty")
            expected = w.last + 1
        if expected != len(self.phonemes):
            raise TrackError(
                f"{self.utterance_id}: words cover {expected} of {len(self.phonemes)} phonemes"
            )

    @property
    def word_strings(self) -> tuple[str, ...]:
        return tuple(w.word for w in self.words)

    def effective_pitch_range(self) -> PitchRange:
        """Stored pitch range, or the min/max of the phoneme pitches."""
        if self.pitch_range is not None:
            return self.pitch_range
        pitches = [p.pitch for p in self.phonemes]
        return PitchRange(min(pitches), max(pitches))


@dataclass(frozen=True)
class ScalingRanges:
    duration_raw: tuple[float, float] = (-2.0, 2.0)
    duration_target: tuple[float, float] = (0.74, 1.34)
    energy_raw: tuple[float, float] = (-5.0, 5.0)
    energy_target: tuple[float, float] = (0.5, 2.0)
    pitch_raw: tuple[float, float] = (-5.0, 5.0)
    # full-scale raw pitch moves the offset by pitch_gain * (p_max - p_min) / 2
    pitch_gain: float = 1.0

    def __post_init__(self):
        for name in ("duration", "energy"):
            quadratic_coefficients(getattr(self, f"{name}_raw"), getattr(self, f"{name}_target"))
        lo, hi = self.pitch_raw
        if not (lo < 0 < hi and lo == -hi):
            raise ValueError(f"pitch_raw must be symmetric about 0, got {self.pitch_raw}")
        if not (math.isfinite(self.pitch_gain) and self.pitch_gain > 0):
            raise ValueError(f"pitch_gain must be positive, got {self.pitch_gain}")


def quadratic_coefficients(raw_range, target_range) -> tuple[float, float, float]:
    """Coefficients (a, b, c) of f(v) = a v^2 + b v + c.

    Fixed by f(lo_r) = lo_t, f(0) = 1 and f(hi_r) = hi_t. Raises ``ValueError``
    when the ranges are malformed or f would not be strictly increasing.
    """
    lo_r, hi_r = (float(x) for x in raw_range)
    lo_t, hi_t = (float(x) for x in target_range)
    if not (lo_r < 0 < hi_r and lo_r == -hi_r):
        raise ValueError(f"raw range must be symmetric about 0, got {raw_range}")
    if not (lo_t < 1 < hi_t):
        raise ValueError(f"target range must straddle 1, got {target_range}")
    r = hi_r
    a = (hi_t + lo_t - 2.0) / (2.0 * r * r)
    b = (hi_t - lo_t) / (2.0 * r)
    # f'(v) = 2 a v + b must stay positive on [-r, r]
    if b - 2.0 * abs(a) * r <= 0:
        raise ValueError(f"map {raw_range} -> {target_range} is not monotone")
    return a, b, 1.0


DEFAULT_RANGES = ScalingRanges()


def _clamp(v: float, lo: float, hi: float) -> tuple[float, bool]:
    if v < lo:
        return lo, True
    if v > hi:
        return hi, True
    return v, False


def quadratic_map(v: float, raw_range=(-5.0, 5.0), target_range=(0.5, 2.0)) -> float:
    """Map a raw model value onto a multiplicative factor.

    Values outside ``raw_range`` are clamped with a :class:`ProsodyWarning`.
    """
    a, b, c = quadratic_coefficients(raw_range, target_range)
    if not math.isfinite(v):
        raise ValueError(f"cannot map non-finite value {v}")
    v_c, clamped = _clamp(float(v), *raw_range)
    if clamped:
        warnings.warn(f"value {v} outside {tuple(raw_range)}, clamped to {v_c}",
                      ProsodyWarning, stacklevel=2)
    out = (a * v_c + b) * v_c + c
    # rounding can overshoot the closed target interval by an ulp
    return _clamp(out, *target_range)[0]


def pitch_offset(v: float, pitch_range: PitchRange, raw_range=(-5.0, 5.0),
                 gain: float = 1.0) -> float:
    """Linear map of a raw pitch value onto an additive offset."""
    return (v / raw_range[1]) * gain * pitch_range.span / 2.0


@dataclass(frozen=True)
class MappedScalingPlan:
    """Plan in factor units: multiplicative duration/energy, additive pitch."""

    global_: Factors
    locals: tuple[Factors, ...]
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @classmethod
    def neutral(cls, n_words: int) -> MappedScalingPlan:
        one = Factors(pitch=0.0, energy=1.0, duration=1.0)
        return cls(one, tuple(one for _ in range(n_words)))


def _offset_bounds(pitch_range: PitchRange) -> tuple[float, float]:
    # the zero offset is always admissible so a neutral plan stays neutral
    return min(pitch_range.p_min, 0.0), max(pitch_range.p_max, 0.0)


def map_plan(raw: RawScalingPlan, pitch_range: PitchRange,
             ranges: ScalingRanges = DEFAULT_RANGES,
             n_words: int | None = None) -> MappedScalingPlan:
    """Turn raw model output into factors, clamping anything out of range."""
    if n_words is not None and len(raw.locals) != n_words:
        raise AlignmentError(f"plan has {len(raw.locals)} words, track has {n_words}")
    notes: list[str] = []

    def clamp(v, rng, where):
        v_c, hit = _clamp(float(v), *rng)
        if hit:
            notes.append(f"{where}: {v} clamped to {v_c}")
        return v_c

    def mapped(f: Factors, where: str) -> Factors:
        d = quadratic_map(clamp(f.duration, ranges.duration_raw, f"{where}.duration"),
                          ranges.duration_raw, ranges.duration_target)
        e = quadratic_map(clamp(f.energy, ranges.energy_raw, f"{where}.energy"),
                          ranges.energy_raw, ranges.energy_target)
        p = pitch_offset(clamp(f.pitch, ranges.pitch_raw, f"{where}.pitch"),
                         pitch_range, ranges.pitch_raw, ranges.pitch_gain)
        return Factors(pitch=p, energy=e, duration=d)

    g = mapped(raw.global_, "global")
    lo, hi = _offset_bounds(pitch_range)
    out = []
    for i, f in enumerate(raw.locals):
        m = mapped(f, f"words[{i}]")
        total = g.pitch + m.pitch
        if total < lo or total > hi:
            target = lo if total < lo else hi
            pi = target - g.pitch
            # step pi by ulps until the sum lands inside the closed interval
            while g.pitch + pi > hi:
                pi = math.nextafter(pi, -math.inf)
            while g.pitch + pi < lo:
                pi = math.nextafter(pi, math.inf)
            notes.append(f"words[{i}].pitch: offset {total} clamped into [{lo}, {hi}]")
            m = Factors(pitch=pi, energy=m.energy, duration=m.duration)
        out.append(m)
    return MappedScalingPlan(g, tuple(out), tuple(notes))


def apply_scaling(track: ProsodyTrack, plan: MappedScalingPlan,
                  pitch_range: PitchRange | None = None) -> ProsodyTrack:
    """Return a new track with the plan's factors applied word by word."""
    if len(plan.locals) != len(track.words):
        raise AlignmentError(
            f"{track.utterance_id}: plan has {len(plan.locals)} words, track has {len(track.words)}"
        )
    g = plan.global_
    phonemes = list(track.phonemes)
    for span, f in zip(track.words, plan.locals):
        for k in range(span.first, span.last + 1):
            ph = phonemes[k]
            phonemes[k] = PhonemeProsody(
                ph.symbol,
                ph.duration * g.duration * f.duration,
                ph.energy * g.energy * f.energy,
                ph.pitch + g.pitch + f.pitch,
            )
    pr = pitch_range or track.pitch_range
    if pr is not None:
        outside = sum(1 for ph in phonemes if not pr.p_min <= ph.pitch <= pr.p_max)
        if outside:
            log.warning("%s: %d scaled pitch values fall outside [%g, %g]",
                        track.utterance_id, outside, pr.p_min, pr.p_max)
    return ProsodyTrack(track.utterance_id, track.text, tuple(phonemes), track.words,
                        track.pitch_range, track.emotion, track.intensity)


def export_durations(track: ProsodyTrack) -> tuple[list[int], int]:
    """Integer frame counts for a length regulator.

    Rounds half to even and never returns fewer than one frame per phoneme.
    """
    frames = [max(1, round(ph.duration)) for ph in track.phonemes]
    return frames, sum(frames)
