"""Per-speaker relative ranking of emotion intensity.

For each (speaker, emotion) we learn a linear score ``r(x) = W . z(x)`` over
z-scored acoustic features such that emotional utterances rank above the
speaker's neutral ones (ordered pairs) while utterances of the same category
score alike (similar pairs). The primal objective is

    1/2 |W|^2 + C * ( sum_ordered max(0, 1 - W.(x_hi - x_lo))^2
                      + sum_similar (W.(x_i - x_j))^2 )

which is convex and piecewise quadratic, so a generalized Newton method with
backtracking converges in a handful of iterations.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericalError, UnsatisfiableTrainingError

log = logging.getLogger(__name__)

FEATURE_DIM = 384
MODEL_SCHEMA_VERSION = 1


class Emotion(str, enum.Enum):
    ANGRY = "Angry"
    HAPPY = "Happy"
    NEUTRAL = "Neutral"
    SAD = "Sad"
    SURPRISE = "Surprise"

    @classmethod
    def parse(cls, value) -> Emotion:
        if isinstance(value, cls):
            return value
        for e in cls:
            if e.value.lower() == str(value).strip().lower():
                return e
        raise ValueError(f"unknown emotion {value!r}")


class Bucket(str, enum.Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"

    @classmethod
    def parse(cls, value) -> Bucket:
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        for b in cls:
            if v in (b.value.lower(), b.value[0].lower()):
                return b
        raise ValueError(f"unknown intensity level {value!r}")


@dataclass(frozen=True)
class AcousticFeatureVector:
    utterance_id: str
    speaker_id: str
    emotion: Emotion
    features: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionError(f"{self.utterance_id}: features must be a vector")
        if not np.all(np.isfinite(x)):
            raise DimensionError(f"{self.utterance_id}: non-finite feature values")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "emotion", Emotion.parse(self.emotion))

    def __eq__(self, other):
        if not isinstance(other, AcousticFeatureVector):
            return NotImplemented
        return (self.utterance_id, self.speaker_id, self.emotion) == (
            other.utterance_id, other.speaker_id, other.emotion
        ) and np.array_equal(self.features, other.features)

    __hash__ = None


@dataclass(frozen=True)
class PairSet:
    """Training pairs over a local utterance ordering.

    ``utterance_ids[k]`` names row ``k`` of the training matrix; pair entries
    are indices into that ordering.
    """

    utterance_ids: tuple[str, ...]
    ordered: tuple[tuple[int, int], ...]
    similar: tuple[tuple[int, int], ...]

    def __post_init__(self):
        n = len(self.utterance_ids)
        for i, j in itertools.chain(self.ordered, self.similar):
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"pair ({i}, {j}) out of range for {n} utterances")
            if i == j:
                raise ValueError(f"self-pair ({i}, {i})")
        if set(self.ordered) & set(self.similar):
            raise ValueError("a pair cannot be both ordered and similar")


def _subsample(pairs: list, limit: int | None, rng: np.random.Generator) -> tuple:
    if limit is None or len(pairs) <= limit:
        return tuple(pairs)
    keep = np.sort(rng.choice(len(pairs), size=limit, replace=False))
    return tuple(pairs[k] for k in keep)


def speaker_subset(corpus, speaker: str, emotion) -> list[AcousticFeatureVector]:
    """The speaker's utterances of ``emotion`` followed by their neutral ones."""
    emotion = Emotion.parse(emotion)
    emo = [u for u in corpus if u.speaker_id == speaker and u.emotion == emotion]
    neu = [u for u in corpus if u.speaker_id == speaker and u.emotion == Emotion.NEUTRAL]
    return emo + neu


def build_pairs(corpus, speaker: str, emotion, limit: int | None = 10_000,
                seed: int = 0) -> PairSet:
    """Emotional-over-neutral ordered pairs plus within-category similar pairs."""
    emotion = Emotion.parse(emotion)
    if emotion == Emotion.NEUTRAL:
        raise UnsatisfiableTrainingError("neutral has no ranker of its own")
    subset = speaker_subset(corpus, speaker, emotion)
    n_emo = sum(1 for u in subset if u.emotion == emotion)
    n_neu = len(subset) - n_emo
    if n_emo == 0 or n_neu == 0:
        raise UnsatisfiableTrainingError(
            f"({speaker}, {emotion.value}): need at least one {emotion.value} and one "
            f"Neutral utterance, found {n_emo} and {n_neu}"
        )
    emo_idx = range(n_emo)
    neu_idx = range(n_emo, n_emo + n_neu)
    ordered = [(e, n) for e in emo_idx for n in neu_idx]
    similar = list(itertools.combinations(neu_idx, 2)) + list(itertools.combinations(emo_idx, 2))
    rng = np.random.default_rng(seed)
    return PairSet(
        tuple(u.utterance_id for u in subset),
        _subsample(ordered, limit, rng),
        _subsample(similar, limit, rng),
    )


def standardize_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[~(std > 0)] = 1.0
    return mean, std


def rank_objective(W, D_ord, D_sim, C, hessian=True):
    """Objective, gradient and (generalized) Hessian of the ranking primal."""
    m = 1.0 - D_ord @ W
    active = m > 0
    Da = D_ord[active]
    ma = m[active]
    s = D_sim @ W
    f = 0.5 * W @ W + C * (ma @ ma + s @ s)
    g = W + 2.0 * C * (D_sim.T @ s - Da.T @ ma)
    if not hessian:
        return f, g, None
    H = np.eye(W.shape[0]) + 2.0 * C * (Da.T @ Da + D_sim.T @ D_sim)
    return f, g, H


@dataclass(frozen=True)
class TrainResult:
    W: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    converged: bool


def minimize_rank_objective(D_ord, D_sim, C, tol=1e-6, max_iter=200) -> TrainResult:
    """Damped generalized Newton, falling back to a gradient step if needed."""
    dim = D_ord.shape[1]
    W = np.zeros(dim)
    f, g, H = rank_objective(W, D_ord, D_sim, C)
    it = 0
    gnorm = float(np.linalg.norm(g))
    while gnorm > tol and it < max_iter:
        it += 1
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -g
        slope = g @ step
        if not slope < 0:
            step, slope = -g, -(g @ g)
        t = 1.0
        while True:
            W_new = W + t * step
            f_new, g_new, _ = rank_objective(W_new, D_ord, D_sim, C, hessian=False)
            if not math.isfinite(f_new):
                raise NumericalError(f"objective became non-finite at iteration {it}")
            if f_new <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        W, f, g = W_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        if gnorm > tol:
            H = rank_objective(W, D_ord, D_sim, C)[2]
    if not math.isfinite(f):
        raise NumericalError("objective is non-finite")
    return TrainResult(W, float(f), gnorm, it, gnorm <= tol)


@dataclass(frozen=True, eq=False)
class RankModel:
    speaker_id: str
    emotion: Emotion
    W: np.ndarray
    feature_mean: np.ndarray
    feature_std: np.ndarray
    score_min: float
    score_max: float
    thresholds: tuple[float, float] = (1 / 3, 2 / 3)
    hyperparams: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.score_min < self.score_max:
            raise UnsatisfiableTrainingError(
                f"({self.speaker_id}, {self.emotion.value}): degenerate score range "
                f"[{self.score_min}, {self.score_max}]"
            )
        if np.any(self.feature_std <= 0):
            raise ValueError("feature_std entries must be positive")

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    def raw_score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise DimensionError(f"expected {self.dim} features, got {X.shape[-1]}")
        return ((X - self.feature_mean) / self.feature_std) @ self.W

    def __eq__(self, other):
        if not isinstance(other, RankModel):
            return NotImplemented
        return (
            self.speaker_id == other.speaker_id
            and self.emotion == other.emotion
            and all(np.array_equal(getattr(self, k), getattr(other, k))
                    for k in ("W", "feature_mean", "feature_std"))
            and (self.score_min, self.score_max, tuple(self.thresholds))
            == (other.score_min, other.score_max, tuple(other.thresholds))
            and self.hyperparams == other.hyperparams
            and self.metadata == other.metadata
        )

    __hash__ = None


def tertile_thresholds(scores) -> tuple[float, float]:
    lo, hi = (float(q) for q in np.quantile(np.asarray(scores, dtype=np.float64), [1 / 3, 2 / 3]))
    if not (0.0 < lo < hi <= 1.0):
        # heavy ties collapse the tertiles; fall back to even thirds
        return 1 / 3, 2 / 3
    return lo, hi


def train_rank(features, pairs: PairSet, C: float = 0.1, tol: float = 1e-6,
               max_iter: int = 200, speaker_id: str = "", emotion=Emotion.ANGRY) -> RankModel:
    """Fit W on the rows of ``features`` referenced by ``pairs``.

    ``features`` holds one row per entry of ``pairs.utterance_ids``.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(pairs.utterance_ids):
        raise DimensionError(
            f"feature matrix {X.shape} does not match {len(pairs.utterance_ids)} utterances"
        )
    if not pairs.ordered:
        raise UnsatisfiableTrainingError(
            f"({speaker_id}, {Emotion.parse(emotion).value}): no ordered pairs to train on"
        )
    if not np.all(np.isfinite(X)):
        raise NumericalError("feature matrix contains non-finite values")
    mean, std = standardize_stats(X)
    Z = (X - mean) / std
    o = np.asarray(pairs.ordered, dtype=np.intp)
    D_ord = Z[o[:, 0]] - Z[o[:, 1]]
    if pairs.similar:
        s = np.asarray(pairs.similar, dtype=np.intp)
        D_sim = Z[s[:, 0]] - Z[s[:, 1]]
    else:
        D_sim = np.zeros((0, X.shape[1]))
    res = minimize_rank_objective(D_ord, D_sim, C, tol, max_iter)
    if not res.converged:
        log.warning("(%s, %s): stopped after %d iterations with gradient norm %.3g",
                    speaker_id, Emotion.parse(emotion).value, res.iterations, res.grad_norm)
    raw = Z @ res.W
    smin, smax = float(raw.min()), float(raw.max())
    if not smin < smax:
        raise UnsatisfiableTrainingError(
            f"({speaker_id}, {Emotion.parse(emotion).value}): all training scores are equal"
        )
    norm = np.clip((raw - smin) / (smax - smin), 0.0, 1.0)
    return RankModel(
        speaker_id=speaker_id,
        emotion=Emotion.parse(emotion),
        W=res.W,
        feature_mean=mean,
        feature_std=std,
        score_min=smin,
        score_max=smax,
        thresholds=tertile_thresholds(norm),
        hyperparams={"C": C, "tol": tol, "max_iter": max_iter},
        metadata={
            "n_utterances": int(X.shape[0]),
            "n_ordered": len(pairs.ordered),
            "n_similar": len(pairs.similar),
            "objective": res.objective,
            "grad_norm": res.grad_norm,
            "iterations": res.iterations,
            "converged": res.converged,
        },
    )


def fit_speaker_emotion(corpus, speaker: str, emotion, C=0.1, tol=1e-6, max_iter=200,
                        limit: int | None = 10_000, seed: int = 0) -> RankModel:
    pairs = build_pairs(corpus, speaker, emotion, limit=limit, seed=seed)
    subset = speaker_subset(corpus, speaker, emotion)
    X = np.vstack([u.features for u in subset])
    model = train_rank(X, pairs, C=C, tol=tol, max_iter=max_iter,
                       speaker_id=speaker, emotion=emotion)
    model.hyperparams.update(pair_limit=limit, seed=seed)
    return model


def score(model: RankModel, x) -> float:
    """Normalized intensity in [0, 1]."""
    if isinstance(x, AcousticFeatureVector):
        x = x.features
    raw = float(model.raw_score(np.asarray(x, dtype=np.float64)))
    s = (raw - model.score_min) / (model.score_max - model.score_min)
    return min(max(s, 0.0), 1.0)


def bucket(intensity: float, thresholds=(1 / 3, 2 / 3)) -> Bucket:
    t_low, t_high = thresholds
    # t_low > 0 keeps a zero intensity in the Low bucket
    if not 0.0 < t_low < t_high <= 1.0:
        raise ValueError(f"thresholds must satisfy 0 < low < high <= 1, got {thresholds}")
    if intensity < t_low:
        return Bucket.LOW
    if intensity < t_high:
        return Bucket.MEDIUM
    return Bucket.HIGH


@dataclass(frozen=True)
class Annotation:
    utterance_id: str
    speaker_id: str
    emotion: Emotion
    intensity: float
    bucket: Bucket


@dataclass(frozen=True)
class AnnotationError:
    utterance_id: str
    message: str


def annotate_corpus(corpus, models, neutral_under=None, thresholds=None):
    """Score every emotional utterance with its (speaker, emotion) model.

    ``models`` maps ``(speaker_id, Emotion)`` to :class:`RankModel`. Neutral
    utterances are skipped unless ``neutral_under`` names the emotion whose
    model should score them. ``thresholds`` overrides each model's tertiles.
    Returns ``(annotations, errors)``; a missing model produces an error entry
    and processing continues.
    """
    if neutral_under is not None:
        neutral_under = Emotion.parse(neutral_under)
    rows, errors = [], []
    for u in corpus:
        key_emotion = u.emotion
        if u.emotion == Emotion.NEUTRAL:
            if neutral_under is None:
                continue
            key_emotion = neutral_under
        model = models.get((u.speaker_id, key_emotion))
        if model is None:
            errors.append(AnnotationError(
                u.utterance_id, f"no model for ({u.speaker_id}, {key_emotion.value})"))
            continue
        try:
            s = score(model, u.features)
        except DimensionError as exc:
            errors.append(AnnotationError(u.utterance_id, str(exc)))
            continue
        b = bucket(s, thresholds if thresholds is not None else model.thresholds)
        rows.append(Annotation(u.utterance_id, u.speaker_id, u.emotion, s, b))
    return rows, errors
