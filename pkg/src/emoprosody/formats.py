"""Reading and writing every persisted file type.

Batch readers never stop at the first bad record: they return the records
they could parse together with a list of :class:`RowError` entries. JSON
numbers are written with Python's shortest round-trip ``repr`` so values
survive a write/read cycle unchanged.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError
from .metrics import EvalReport, PirResponse, Rating
from .plans import Factors, RawScalingPlan
from .prosody import PhonemeProsody, PitchRange, ProsodyTrack, WordSpan
from .ranking import (
    FEATURE_DIM,
    MODEL_SCHEMA_VERSION,
    AcousticFeatureVector,
    Annotation,
    Bucket,
    Emotion,
    RankModel,
)

TRACK_SCHEMA_VERSION = 1
PLAN_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1

SCHEMA_VERSIONS = {
    "track": TRACK_SCHEMA_VERSION,
    "plan": PLAN_SCHEMA_VERSION,
    "model": MODEL_SCHEMA_VERSION,
    "report": REPORT_SCHEMA_VERSION,
}


@dataclass(frozen=True)
class RowError:
    """A record that could not be parsed; ``row`` is 1-based."""

    source: str
    row: int
    message: str

    def __str__(self):
        return f"{self.source}:{self.row}: {self.message}"


def _check_version(obj: dict, expected: int, what: str):
    v = obj.get("schema_version", expected)
    if v != expected:
        raise FormatError(f"{what} schema_version {v!r} is not supported (expected {expected})")


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False)


def _num(v, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FormatError(f"{what} must be a number, got {v!r}")
    return float(v)


# -- prosody tracks ----------------------------------------------------------


def track_to_dict(track: ProsodyTrack) -> dict:
    d = {
        "schema_version": TRACK_SCHEMA_VERSION,
        "utterance_id": track.utterance_id,
        "text": track.text,
        "phonemes": [
            {"symbol": p.symbol, "duration": p.duration, "energy": p.energy, "pitch": p.pitch}
            for p in track.phonemes
        ],
        "words": [{"word": w.word, "first": w.first, "last": w.last} for w in track.words],
    }
    if track.pitch_range is not None:
        d["pitch_range"] = {"min": track.pitch_range.p_min, "max": track.pitch_range.p_max}
    if track.emotion is not None:
        d["emotion"] = track.emotion
    if track.intensity is not None:
        d["intensity"] = track.intensity
    return d


def track_from_dict(d: dict) -> ProsodyTrack:
    if not isinstance(d, dict):
        raise FormatError("track must be a JSON object")
    _check_version(d, TRACK_SCHEMA_VERSION, "track")
    try:
        phonemes = tuple(
            PhonemeProsody(str(p["symbol"]), _num(p["duration"], "duration"),
                           _num(p["energy"], "energy"), _num(p["pitch"], "pitch"))
            for p in d["phonemes"]
        )
        words = tuple(WordSpan(str(w["word"]), int(w["first"]), int(w["last"])) for w in d["words"])
        pr = d.get("pitch_range")
        pitch_range = PitchRange(_num(pr["min"], "pitch_range.min"),
                                 _num(pr["max"], "pitch_range.max")) if pr is not None else None
        return ProsodyTrack(str(d["utterance_id"]), str(d.get("text", "")), phonemes, words,
                            pitch_range, d.get("emotion"), d.get("intensity"))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed track: {type(exc).__name__}: {exc}") from exc


def _is_jsonl(path: Path) -> bool:
    return path.suffix.lower() in (".jsonl", ".ndjson")


def read_tracks(path) -> tuple[list[ProsodyTrack], list[RowError]]:
    """Tracks from a ``.json`` file (object or list) or a ``.jsonl`` batch."""
    path = Path(path)
    tracks, errors = [], []
    text = path.read_text(encoding="utf-8")
    if _is_jsonl(path):
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                tracks.append(track_from_dict(json.loads(line)))
            except (ValueError, FormatError) as exc:
                errors.append(RowError(path.name, n, str(exc)))
        return tracks, errors
    try:
        obj = json.loads(text)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    items = obj if isinstance(obj, list) else [obj]
    for n, item in enumerate(items, 1):
        try:
            tracks.append(track_from_dict(item))
        except (ValueError, FormatError) as exc:
            errors.append(RowError(path.name, n, str(exc)))
    return tracks, errors


def write_tracks(path, tracks) -> None:
    path = Path(path)
    tracks = list(tracks)
    if _is_jsonl(path):
        body = "".join(_dumps(track_to_dict(t)) + "\n" for t in tracks)
    elif len(tracks) == 1:
        body = json.dumps(track_to_dict(tracks[0]), ensure_ascii=False, indent=2) + "\n"
    else:
        body = json.dumps([track_to_dict(t) for t in tracks], ensure_ascii=False, indent=2) + "\n"
    path.write_text(body, encoding="utf-8")


# -- scaling plans -----------------------------------------------------------


def plan_to_dict(utterance_id: str, plan: RawScalingPlan) -> dict:
    return {
        "schema_version": PLAN_SCHEMA_VERSION,
        "utterance_id": utterance_id,
        "global": plan.global_.as_dict(),
        "words": [{"word": w, **f.as_dict()} for w, f in zip(plan.words, plan.locals)],
        "rationale": plan.rationale,
        "degraded": plan.degraded,
        "attempts": plan.attempts,
        "warnings": list(plan.warnings),
    }


def _factors(d, what) -> Factors:
    return Factors(*(_num(d[k], f"{what}.{k}") for k in ("pitch", "energy", "duration")))


def plan_from_dict(d: dict) -> tuple[str, RawScalingPlan]:
    if not isinstance(d, dict):
        raise FormatError("plan must be a JSON object")
    _check_version(d, PLAN_SCHEMA_VERSION, "plan")
    try:
        words = d["words"]
        plan = RawScalingPlan(
            _factors(d["global"], "global"),
            tuple(_factors(w, f"words[{i}]") for i, w in enumerate(words)),
            tuple(str(w["word"]) for w in words),
            rationale=d.get("rationale"),
            degraded=bool(d.get("degraded", False)),
            attempts=int(d.get("attempts", 0)),
            warnings=tuple(d.get("warnings", ())),
        )
        return str(d["utterance_id"]), plan
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed plan: {type(exc).__name__}: {exc}") from exc


def read_plans(path) -> tuple[list[tuple[str, RawScalingPlan]], list[RowError]]:
    path = Path(path)
    out, errors = [], []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(plan_from_dict(json.loads(line)))
        except (ValueError, FormatError) as exc:
            errors.append(RowError(path.name, n, str(exc)))
    return out, errors


def write_plans(path, records) -> None:
    """``records`` is an iterable of ``(utterance_id, plan)``."""
    Path(path).write_text(
        "".join(_dumps(plan_to_dict(uid, p)) + "\n" for uid, p in records), encoding="utf-8"
    )


# -- acoustic features -------------------------------------------------------

_ID_COLS = ("utterance_id", "name", "file", "filename")
_SPK_COLS = ("speaker_id", "speaker")
_EMO_COLS = ("emotion", "class", "label")


def _find(header, names, path):
    low = [h.strip().lower() for h in header]
    for n in names:
        if n in low:
            return low.index(n)
    raise FormatError(f"{path}: header has none of the columns {names}")


def read_features(path, dim: int = FEATURE_DIM, offset: int | None = None
                  ) -> tuple[list[AcousticFeatureVector], list[RowError]]:
    """Utterance-level feature vectors from CSV.

    By default the header is ``utterance_id,speaker_id,emotion,f0..f{dim-1}``.
    With ``offset`` set, the features are the ``dim`` columns starting at that
    position and the metadata columns are located by name, which covers
    openSMILE exports with extra leading columns.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if offset is None:
            offset = 3
            i_id, i_spk, i_emo = 0, 1, 2
            if [h.strip() for h in header[:3]] != ["utterance_id", "speaker_id", "emotion"]:
                raise FormatError(f"{path}: header must start with utterance_id,speaker_id,emotion")
            n_feat = len(header) - offset
        else:
            i_id = _find(header, _ID_COLS, path)
            i_spk = _find(header, _SPK_COLS, path)
            i_emo = _find(header, _EMO_COLS, path)
            n_feat = min(dim, len(header) - offset)
        if n_feat != dim:
            raise DimensionError(f"{path}: row 1 (header) has {n_feat} feature columns, expected {dim}")
        vectors, errors = [], []
        for row_no, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                cells = row[offset:offset + dim]
                if len(cells) != dim or (len(row) != len(header)):
                    raise DimensionError(
                        f"expected {dim} features, got {len(row) - offset}")
                x = np.array([float(c) for c in cells], dtype=np.float64)
                vectors.append(AcousticFeatureVector(
                    row[i_id].strip(), row[i_spk].strip(), Emotion.parse(row[i_emo]), x))
            except (ValueError, IndexError) as exc:
                errors.append(RowError(path.name, row_no, str(exc)))
        return vectors, errors


def write_features(path, vectors) -> None:
    vectors = list(vectors)
    dim = vectors[0].features.shape[0] if vectors else FEATURE_DIM
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["utterance_id", "speaker_id", "emotion"] + [f"f{k}" for k in range(dim)])
        for v in vectors:
            w.writerow([v.utterance_id, v.speaker_id, v.emotion.value] + [repr(float(x)) for x in v.features])


# -- rank models -------------------------------------------------------------


def model_to_dict(model: RankModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "speaker": model.speaker_id,
        "emotion": model.emotion.value,
        "W": model.W.tolist(),
        "mean": model.feature_mean.tolist(),
        "std": model.feature_std.tolist(),
        "score_min": model.score_min,
        "score_max": model.score_max,
        "thresholds": list(model.thresholds),
        "hyperparams": model.hyperparams,
        "metadata": model.metadata,
    }


def model_from_dict(d: dict) -> RankModel:
    _check_version(d, MODEL_SCHEMA_VERSION, "model")
    try:
        W = np.asarray(d["W"], dtype=np.float64)
        mean = np.asarray(d["mean"], dtype=np.float64)
        std = np.asarray(d["std"], dtype=np.float64)
        if not (W.shape == mean.shape == std.shape) or W.ndim != 1:
            raise DimensionError("W, mean and std must be vectors of equal length")
        return RankModel(
            speaker_id=str(d["speaker"]),
            emotion=Emotion.parse(d["emotion"]),
            W=W, feature_mean=mean, feature_std=std,
            score_min=float(d["score_min"]), score_max=float(d["score_max"]),
            thresholds=tuple(float(t) for t in d.get("thresholds", (1 / 3, 2 / 3))),
            hyperparams=dict(d.get("hyperparams", {})),
            metadata=dict(d.get("metadata", {})),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed model: {type(exc).__name__}: {exc}") from exc


def write_model(path, model: RankModel) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1, allow_nan=False) + "\n",
                          encoding="utf-8")


def read_model(path) -> RankModel:
    path = Path(path)
    try:
        return model_from_dict(json.loads(path.read_text(encoding="utf-8")))
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from exc


def model_filename(speaker: str, emotion: Emotion) -> str:
    return f"{speaker}__{Emotion.parse(emotion).value}.json"


def read_models_dir(directory) -> dict[tuple[str, Emotion], RankModel]:
    models = {}
    for p in sorted(Path(directory).glob("*__*.json")):
        m = read_model(p)
        models[(m.speaker_id, m.emotion)] = m
    return models


# -- annotations and evaluation inputs ---------------------------------------

ANNOTATION_HEADER = ["utterance_id", "speaker", "emotion", "intensity", "bucket"]


def write_annotations(path, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for a in rows:
            w.writerow([a.utterance_id, a.speaker_id, a.emotion.value, repr(a.intensity), a.bucket.value])


def _dict_rows(path, required):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise FormatError(f"{path}: missing columns {missing}")
        for row_no, row in enumerate(reader, 2):
            yield row_no, row


def read_annotations(path) -> tuple[list[Annotation], list[RowError]]:
    out, errors = [], []
    for n, row in _dict_rows(path, ANNOTATION_HEADER):
        try:
            out.append(Annotation(row["utterance_id"], row["speaker"], Emotion.parse(row["emotion"]),
                                  float(row["intensity"]), Bucket.parse(row["bucket"])))
        except (ValueError, TypeError) as exc:
            errors.append(RowError(Path(path).name, n, str(exc)))
    return out, errors


def read_transcripts(path) -> dict[str, str]:
    return {row["utterance_id"]: row["text"] for _, row in _dict_rows(path, ["utterance_id", "text"])}


def read_labels(path) -> dict[str, tuple[str, str]]:
    return {row["utterance_id"]: (row["pred"].strip(), row["truth"].strip())
            for _, row in _dict_rows(path, ["utterance_id", "pred", "truth"])}


def read_pir_responses(path) -> tuple[list[PirResponse], list[RowError]]:
    out, errors = [], []
    for n, row in _dict_rows(path, ["rater_id", "utterance_id", "perceived", "annotated"]):
        try:
            out.append(PirResponse(row["rater_id"], row["utterance_id"], row["perceived"], row["annotated"]))
        except ValueError as exc:
            errors.append(RowError(Path(path).name, n, str(exc)))
    return out, errors


def read_ratings(path) -> list[Rating]:
    """MOS ratings; columns beyond rater_id/utterance_id/score become condition keys.

    Out-of-range scores raise, since a MOS with silently dropped ratings is wrong.
    """
    base = ("rater_id", "utterance_id", "score")
    out = []
    for n, row in _dict_rows(path, list(base)):
        try:
            cond = tuple((k, v) for k, v in row.items() if k not in base)
            out.append(Rating(row["rater_id"], row["utterance_id"], float(row["score"]), cond))
        except ValueError as exc:
            raise FormatError(f"{Path(path).name}:{n}: {exc}") from exc
    return out


def read_cepstra(path) -> np.ndarray:
    """A T x K cepstra matrix from CSV or from raw binary plus a JSON sidecar."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        m = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    else:
        sidecar = path.with_suffix(".json")
        try:
            meta = json.loads(sidecar.read_text(encoding="utf-8"))
            T, K, dtype = int(meta["T"]), int(meta["K"]), np.dtype(meta.get("dtype", "float32"))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: unreadable sidecar {sidecar.name}: {exc}") from exc
        data = np.fromfile(path, dtype=dtype)
        if data.size != T * K:
            raise DimensionError(f"{path}: sidecar says {T}x{K}, file holds {data.size} values")
        m = data.reshape(T, K).astype(np.float64)
    if not np.all(np.isfinite(m)):
        raise FormatError(f"{path}: non-finite cepstral values")
    return m


def write_cepstra(path, matrix, dtype="float32") -> None:
    path = Path(path)
    m = np.asarray(matrix)
    if path.suffix.lower() == ".csv":
        np.savetxt(path, m, delimiter=",", fmt="%.17g")
        return
    m.astype(dtype).tofile(path)
    path.with_suffix(".json").write_text(
        json.dumps({"T": int(m.shape[0]), "K": int(m.shape[1]), "dtype": str(np.dtype(dtype))}) + "\n")


def read_cepstra_dir(directory) -> dict[str, np.ndarray]:
    out = {}
    for p in sorted(Path(directory).iterdir()):
        if p.suffix.lower() == ".json":
            continue
        if p.suffix.lower() == ".csv" or p.with_suffix(".json").exists():
            out[p.stem] = read_cepstra(p)
    return out


# -- reports -----------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_report(path, report: EvalReport) -> None:
    d = {"schema_version": REPORT_SCHEMA_VERSION, **_clean(report.to_dict())}
    Path(path).write_text(json.dumps(d, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def write_report_csv(path, report: EvalReport) -> None:
    """Plot-ready long-form CSV."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if report.metric == "pir":
            labels = report.extra["labels"]
            w.writerow(["annotated", "perceived", "count"])
            for i, a in enumerate(labels):
                for j, p in enumerate(labels):
                    w.writerow([a, p, report.extra["confusion"][i][j]])
        elif report.metric == "mos":
            w.writerow(["group", "mean", "count", "ci95_low", "ci95_high"])
            for g, s in report.extra["groups"].items():
                w.writerow([g, repr(s["mean"]), s["count"], repr(s["ci95_low"]), repr(s["ci95_high"])])
        else:
            w.writerow(["utterance_id", report.metric])
            for uid, v in report.per_utterance.items():
                w.writerow([uid, repr(v)])
