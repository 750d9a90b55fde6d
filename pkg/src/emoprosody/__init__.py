"""Prompt-guided prosody scaling, per-speaker emotion-intensity ranking and
speech evaluation metrics."""

__version__ = "0.1.0"

from .plans import Factors, RawScalingPlan
from .prosody import (
    MappedScalingPlan,
    PhonemeProsody,
    PitchRange,
    ProsodyTrack,
    ScalingRanges,
    WordSpan,
    apply_scaling,
    export_durations,
    map_plan,
    quadratic_map,
)
from .ranking import (
    AcousticFeatureVector,
    Bucket,
    Emotion,
    PairSet,
    RankModel,
    annotate_corpus,
    bucket,
    build_pairs,
    score,
    train_rank,
)

__all__ = [
    "AcousticFeatureVector",
    "Bucket",
    "Emotion",
    "Factors",
    "MappedScalingPlan",
    "PairSet",
    "PhonemeProsody",
    "PitchRange",
    "ProsodyTrack",
    "RankModel",
    "RawScalingPlan",
    "ScalingRanges",
    "WordSpan",
    "annotate_corpus",
    "apply_scaling",
    "bucket",
    "build_pairs",
    "export_durations",
    "map_plan",
    "quadratic_map",
    "score",
    "train_rank",
]
