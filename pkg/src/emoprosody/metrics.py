"""Objective and listening-test metrics: WER/CER, MCD, ECA, PIR and MOS."""

from __future__ import annotations

import math
import unicodedata
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, UndefinedRateError
from .ranking import Bucket

MCD_CONST = 10.0 / math.log(10.0) * math.sqrt(2.0)
LEVELS = (Bucket.LOW, Bucket.MEDIUM, Bucket.HIGH)


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    ref, hyp = list(ref), list(hyp)
    if len(ref) < len(hyp):
        ref, hyp = hyp, ref
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i]
        for j, h in enumerate(hyp, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h)))
        prev = cur
    return prev[-1]


def normalize_text(text: str) -> str:
    """Lowercase and drop punctuation (any Unicode ``P*`` category)."""
    text = unicodedata.normalize("NFC", text).lower()
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def word_tokens(text) -> list[str]:
    if isinstance(text, str):
        return normalize_text(text).split()
    return list(text)


def char_tokens(text) -> list[str]:
    if isinstance(text, str):
        return [ch for ch in normalize_text(text) if not ch.isspace()]
    return list(text)


def _rate(ref_tokens, hyp_tokens) -> float:
    if not ref_tokens:
        raise UndefinedRateError("reference is empty")
    return edit_distance(ref_tokens, hyp_tokens) / len(ref_tokens)


def wer(ref, hyp) -> float:
    """Word error rate; strings are normalized, token lists are used as given."""
    return _rate(word_tokens(ref), word_tokens(hyp))


def cer(ref, hyp) -> float:
    return _rate(char_tokens(ref), char_tokens(hyp))


def frame_costs(a: np.ndarray, b: np.ndarray, exclude_c0: bool = True) -> np.ndarray:
    """Euclidean distance between every frame of ``a`` and every frame of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("cepstra must be T x K matrices")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DimensionError("cepstra sequences must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"coefficient count mismatch: {a.shape[1]} vs {b.shape[1]}")
    k0 = 1 if exclude_c0 else 0
    if a.shape[1] - k0 < 1:
        raise DimensionError("no coefficients left to compare")
    diff = a[:, None, k0:] - b[None, :, k0:]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def dtw(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Minimum-total-cost monotone path from (0, 0) to (T-1, U-1).

    Steps are (1, 0), (0, 1) and (1, 1); ties prefer the diagonal.
    """
    T, U = cost.shape
    acc = np.full((T, U), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(T):
        for j in range(U):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = best + cost[i, j]
    path = [(T - 1, U - 1)]
    i, j = T - 1, U - 1
    while (i, j) != (0, 0):
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            if diag <= up and diag <= left:
                i, j = i - 1, j - 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return float(acc[-1, -1]), path


@dataclass(frozen=True)
class MCDResult:
    value: float
    path: list[tuple[int, int]]
    total_cost: float


def mcd_alignment(a, b, exclude_c0: bool = True, use_dtw: bool = True) -> MCDResult:
    cost = frame_costs(a, b, exclude_c0)
    if use_dtw:
        total, path = dtw(cost)
    else:
        n = min(cost.shape)
        path = [(t, t) for t in range(n)]
        total = float(sum(cost[t, t] for t in range(n)))
    return MCDResult(MCD_CONST * total / len(path), path, total)


def mcd(a, b, exclude_c0: bool = True, use_dtw: bool = True) -> float:
    """Mel cepstral distortion in dB.

    ``(10 / ln 10) * sqrt(2)`` times the mean Euclidean distance over aligned
    frame pairs. Without DTW, frames are paired by index up to the shorter length.
    """
    return mcd_alignment(a, b, exclude_c0, use_dtw).value


def classification_accuracy(pred: Sequence, truth: Sequence) -> float:
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(truth)} labels")
    if not pred:
        raise ValueError("no labels to score")
    return sum(p == t for p, t in zip(pred, truth)) / len(pred)


@dataclass
class EvalReport:
    metric: str
    per_utterance: dict[str, float] = field(default_factory=dict)
    mean: float | None = None
    count: int = 0
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "config": self.config,
            "aggregate": {"mean": self.mean, "count": self.count},
            "per_utterance": self.per_utterance,
            **self.extra,
        }


def _mean(values) -> float | None:
    values = list(values)
    return sum(values) / len(values) if values else None


def rate_report(kind: str, refs: dict[str, str], hyps: dict[str, str]) -> EvalReport:
    """Per-utterance WER or CER plus the pooled corpus rate."""
    tok = word_tokens if kind == "wer" else char_tokens
    per, errors, total_ref = {}, 0, 0
    for uid, ref in refs.items():
        if uid not in hyps:
            continue
        r, h = tok(ref), tok(hyps[uid])
        d = edit_distance(r, h)
        if not r:
            raise UndefinedRateError(f"{uid}: reference is empty")
        per[uid] = d / len(r)
        errors += d
        total_ref += len(r)
    missing = sorted(set(refs) - set(hyps))
    return EvalReport(
        kind, per, _mean(per.values()), len(per),
        config={"normalization": "lowercase, punctuation stripped",
                "tokens": "words" if kind == "wer" else "characters without spaces"},
        extra={"pooled": errors / total_ref if total_ref else None, "missing_hyp": missing},
    )


def mcd_report(pairs: dict[str, tuple], exclude_c0: bool = True, use_dtw: bool = True) -> EvalReport:
    per = {uid: mcd(a, b, exclude_c0, use_dtw) for uid, (a, b) in pairs.items()}
    return EvalReport("mcd", per, _mean(per.values()), len(per),
                      config={"exclude_c0": exclude_c0, "dtw": use_dtw, "unit": "dB"})


def eca_report(labels: dict[str, tuple[str, str]]) -> EvalReport:
    """``labels`` maps utterance id to (predicted, true) emotion."""
    ids = list(labels)
    pred = [labels[u][0] for u in ids]
    truth = [labels[u][1] for u in ids]
    acc = classification_accuracy(pred, truth)
    per = {u: float(labels[u][0] == labels[u][1]) for u in ids}
    return EvalReport("eca", per, acc, len(ids), extra={"accuracy": acc})


@dataclass(frozen=True)
class PirResponse:
    rater_id: str
    utterance_id: str
    perceived: Bucket
    annotated: Bucket

    def __post_init__(self):
        object.__setattr__(self, "perceived", Bucket.parse(self.perceived))
        object.__setattr__(self, "annotated", Bucket.parse(self.annotated))


def pir_confusion(responses: Sequence[PirResponse]) -> EvalReport:
    """Confusion of annotated (rows) against perceived (columns) intensity."""
    if not responses:
        raise ValueError("no PIR responses")
    idx = {b: k for k, b in enumerate(LEVELS)}
    m = [[0, 0, 0] for _ in LEVELS]
    for r in responses:
        m[idx[r.annotated]][idx[r.perceived]] += 1
    total = len(responses)
    correct = sum(m[k][k] for k in range(3))
    recall = {b.value: (m[k][k] / sum(m[k]) if sum(m[k]) else None) for b, k in idx.items()}
    per = defaultdict(list)
    for r in responses:
        per[r.utterance_id].append(float(r.perceived == r.annotated))
    return EvalReport(
        "pir",
        {u: sum(v) / len(v) for u, v in per.items()},
        correct / total,
        total,
        extra={
            "labels": [b.value for b in LEVELS],
            "confusion": m,
            "recall": recall,
            "accuracy": correct / total,
        },
    )


@dataclass(frozen=True)
class Rating:
    rater_id: str
    utterance_id: str
    score: float
    condition: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 5.0):
            raise ValueError(f"{self.utterance_id}: score {self.score} outside [0, 5]")


def mos_aggregate(ratings: Sequence[Rating], group_by: Sequence[str] = ()) -> EvalReport:
    """Mean opinion score per condition with a 95% normal-approximation CI.

    Groups are keyed by the ``group_by`` condition columns joined with ``/``;
    with no grouping columns there is a single ``all`` group.
    """
    z = 1.959963984540054
    groups: dict[str, list[float]] = defaultdict(list)
    for r in ratings:
        if not (math.isfinite(r.score) and 0.0 <= r.score <= 5.0):
            raise ValueError(f"{r.utterance_id}: score {r.score} outside [0, 5]")
        cond = dict(r.condition)
        key = "/".join(str(cond.get(c, "")) for c in group_by) if group_by else "all"
        groups[key].append(r.score)
    out = {}
    for key in sorted(groups):
        s = np.asarray(groups[key], dtype=np.float64)
        mean = float(s.mean())
        half = float(z * s.std(ddof=1) / math.sqrt(len(s))) if len(s) > 1 else 0.0
        out[key] = {"mean": mean, "count": len(s), "ci95_low": mean - half,
                    "ci95_high": mean + half, "ci95_halfwidth": half}
    all_scores = [r.score for r in ratings]
    return EvalReport("mos", {}, _mean(all_scores), len(all_scores),
                      config={"group_by": list(group_by), "ci": "95% normal approximation"},
                      extra={"groups": out})
