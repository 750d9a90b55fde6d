"""Prompting a chat model for prosody scaling factors and cleaning up its answers."""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from string import Template
from typing import Protocol

import httpx

from .errors import ParseError, SchemaError, TransportError
from .plans import DIMENSIONS, ZERO, Factors, RawScalingPlan
from .prosody import DEFAULT_RANGES, ScalingRanges
from .ranking import Bucket, Emotion

log = logging.getLogger(__name__)

TEMPLATE_VERSION = "prosody_prompt_v1"

SYSTEM_MESSAGE = (
    "You control the prosody of an expressive text-to-speech system. "
    "Answer with a single JSON object that follows the requested format."
)


class ControlMode(str, enum.Enum):
    NONE = "none"
    GLOBAL_AND_LOCAL = "gl"
    LOCAL_ONLY = "local"


@dataclass(frozen=True)
class PromptRequest:
    text: str
    words: tuple[str, ...]
    target_emotion: Emotion
    intensity_bucket: Bucket | None = None
    mode: ControlMode = ControlMode.GLOBAL_AND_LOCAL
    utterance_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "target_emotion", Emotion.parse(self.target_emotion))
        object.__setattr__(self, "mode", ControlMode(self.mode))
        if self.intensity_bucket is not None:
            object.__setattr__(self, "intensity_bucket", Bucket.parse(self.intensity_bucket))
        if self.mode != ControlMode.NONE and not self.words:
            raise ValueError("a prompt request needs at least one word")


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 2
    max_concurrent_requests: int = 4
    temperature: float = 0.0
    # "http", "stub", "stub:neutral" or "replay:<path>"
    provider: str = "http"

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")


def _template() -> Template:
    text = resources.files("emoprosody").joinpath(f"templates/{TEMPLATE_VERSION}.txt").read_text("utf-8")
    return Template(text)


def _fmt(x: float) -> str:
    return f"{x:g}"


def build_prompt(req: PromptRequest, ranges: ScalingRanges = DEFAULT_RANGES) -> str:
    emotion = req.target_emotion.value
    if req.intensity_bucket is not None:
        level = req.intensity_bucket.value.lower()
        emotion_phrase = f"{emotion.lower()} at a {level} intensity"
        intensity_line = f"Target intensity: {req.intensity_bucket.value}\n"
    else:
        emotion_phrase = emotion.lower()
        intensity_line = ""
    if req.mode == ControlMode.LOCAL_ONLY:
        mode_instruction = (
            "For this request use local adjustments only. The global object must be all zeros: "
            '{"pitch": 0, "energy": 0, "duration": 0}.'
        )
    else:
        mode_instruction = "Provide both the global adjustment and one local adjustment per word."
    return _template().substitute(
        emotion_phrase=emotion_phrase,
        mode_instruction=mode_instruction,
        text=req.text,
        emotion=emotion,
        intensity_line=intensity_line,
        n_words=len(req.words),
        word_list="\n".join(f"{i}: {w}" for i, w in enumerate(req.words)),
        pitch_lo=_fmt(ranges.pitch_raw[0]), pitch_hi=_fmt(ranges.pitch_raw[1]),
        energy_lo=_fmt(ranges.energy_raw[0]), energy_hi=_fmt(ranges.energy_raw[1]),
        duration_lo=_fmt(ranges.duration_raw[0]), duration_hi=_fmt(ranges.duration_raw[1]),
    )


def plan_to_response(plan: RawScalingPlan) -> str:
    """Serialize a plan in the same JSON shape the prompt asks for."""
    obj = {}
    if plan.rationale is not None:
        obj["reasoning"] = plan.rationale
    obj["global"] = plan.global_.as_dict()
    obj["words"] = [{"word": w, **f.as_dict()} for w, f in zip(plan.words, plan.locals)]
    return json.dumps(obj, ensure_ascii=False)


_decoder = json.JSONDecoder()


_OBJECT_START = re.compile(r"\{(?=\s*[\"}])")


def extract_json_object(text: str) -> dict:
    """First complete JSON object in ``text``; prose and code fences are skipped."""
    # a JSON object opens with "{" then a key or "}", which rules out most
    # stray braces (and deep "{{{{" runs) before the decoder sees them
    for m in _OBJECT_START.finditer(text):
        try:
            obj, _ = _decoder.raw_decode(text, m.start())
        except (ValueError, RecursionError):
            continue
        if isinstance(obj, dict):
            return obj
    raise ParseError("no JSON object found in response")


def _raw_ranges(ranges: ScalingRanges) -> dict[str, tuple[float, float]]:
    return {"pitch": ranges.pitch_raw, "energy": ranges.energy_raw,
            "duration": ranges.duration_raw}


def _triple(obj, where: str, bounds, notes: list[str]) -> Factors:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where} must be an object, got {type(obj).__name__}")
    vals = {}
    for dim in DIMENSIONS:
        if dim not in obj:
            raise SchemaError(f"{where} is missing {dim!r}")
        v = obj[dim]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{where}.{dim} must be a number, got {v!r}")
        try:
            v = float(v)
        except OverflowError:
            v = math.inf if v > 0 else -math.inf
        if math.isnan(v):
            raise SchemaError(f"{where}.{dim} is NaN")
        lo, hi = bounds[dim]
        if v < lo or v > hi:
            c = lo if v < lo else hi
            notes.append(f"{where}.{dim}: {v} clamped to {c}")
            v = c
        vals[dim] = v
    return Factors(**vals)


def parse_response(raw_text: str, expected_words, ranges: ScalingRanges = DEFAULT_RANGES
                   ) -> RawScalingPlan:
    """Recover a :class:`RawScalingPlan` from free-form model output.

    Raises :class:`ParseError` when no JSON object is present and
    :class:`SchemaError` when the object lacks ``global``/``words`` or holds
    non-numeric factors. Everything else (out-of-range values, wrong word
    count, misspelled words) is repaired and reported in ``plan.warnings``.
    """
    expected = tuple(expected_words)
    obj = extract_json_object(raw_text)
    for key in ("global", "words"):
        if key not in obj:
            raise SchemaError(f"response object has no {key!r} field")
    if not isinstance(obj["words"], list):
        raise SchemaError("'words' must be a list")
    bounds = _raw_ranges(ranges)
    notes: list[str] = []
    g = _triple(obj["global"], "global", bounds, notes)
    entries = obj["words"]
    locals_ = []
    for i, entry in enumerate(entries[: len(expected)]):
        f = _triple(entry, f"words[{i}]", bounds, notes)
        said = entry.get("word")
        if said != expected[i]:
            notes.append(f"words[{i}]: expected {expected[i]!r}, got {said!r}")
        locals_.append(f)
    if len(entries) > len(expected):
        notes.append(f"dropped {len(entries) - len(expected)} extra word entries")
    elif len(entries) < len(expected):
        missing = len(expected) - len(entries)
        notes.append(f"padded {missing} missing word entries with zeros")
        locals_.extend([ZERO] * missing)
    reasoning = obj.get("reasoning")
    return RawScalingPlan(
        g, tuple(locals_), expected,
        rationale=reasoning if isinstance(reasoning, str) else None,
        warnings=tuple(notes),
    )


def enforce_mode(plan: RawScalingPlan, mode: ControlMode) -> RawScalingPlan:
    mode = ControlMode(mode)
    if mode == ControlMode.NONE:
        return RawScalingPlan.neutral(plan.words, attempts=plan.attempts)
    if mode == ControlMode.LOCAL_ONLY and not plan.global_.is_zero():
        return replace(plan.without_global(),
                       warnings=plan.warnings + ("non-zero global factors zeroed for local-only control",))
    return plan


class Provider(Protocol):
    def complete(self, messages: list[dict], request: PromptRequest) -> str: ...


class HttpProvider:
    """Chat-completions client with retry on 429/5xx and a concurrency cap."""

    retry_statuses = frozenset({408, 409, 429})

    def __init__(self, cfg: ProviderConfig, transport: httpx.BaseTransport | None = None,
                 sleep=time.sleep, backoff_base: float = 1.0, backoff_max: float = 30.0,
                 seed: int | None = None):
        key = os.environ.get(cfg.api_key_env)
        if not key:
            raise TransportError(f"API key variable {cfg.api_key_env} is not set")
        self.cfg = cfg
        self._client = httpx.Client(
            base_url=cfg.base_url,
            timeout=cfg.timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {key}"},
        )
        self._slots = threading.BoundedSemaphore(cfg.max_concurrent_requests)
        self._sleep = sleep
        self._rng = random.Random(seed)
        self._rng_lock = threading.Lock()
        self.backoff_base = backoff_base
        self.backoff_max = backoff_max

    def _delay(self, attempt: int, retry_after: str | None) -> float:
        if retry_after:
            try:
                return min(float(retry_after), self.backoff_max)
            except ValueError:
                pass
        with self._rng_lock:
            jitter = self._rng.uniform(0.5, 1.0)
        return min(self.backoff_max, self.backoff_base * 2 ** attempt) * jitter

    def complete(self, messages, request=None) -> str:
        body = {"model": self.cfg.model, "messages": messages,
                "temperature": self.cfg.temperature}
        last = "no attempt made"
        for attempt in range(self.cfg.max_retries + 1):
            retry_after = None
            with self._slots:
                try:
                    r = self._client.post("/chat/completions", json=body)
                except httpx.HTTPError as exc:
                    r = None
                    last = f"{type(exc).__name__}: {exc}"
            if r is not None:
                if r.status_code in (401, 403):
                    raise TransportError(f"authentication failed ({r.status_code})")
                if r.status_code in self.retry_statuses or r.status_code >= 500:
                    last = f"HTTP {r.status_code}"
                    retry_after = r.headers.get("retry-after")
                elif r.status_code >= 400:
                    raise TransportError(f"HTTP {r.status_code}: {r.text[:200]}")
                else:
                    try:
                        return r.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise TransportError(f"malformed completion envelope: {exc}") from exc
            if attempt < self.cfg.max_retries:
                delay = self._delay(attempt, retry_after)
                log.warning("request failed (%s); retrying in %.2fs", last, delay)
                self._sleep(delay)
        raise TransportError(f"giving up after {self.cfg.max_retries + 1} attempts: {last}")

    def close(self):
        self._client.close()


# raw (global, per-word) factors returned by the stub provider
DEFAULT_STUB_TABLE: dict[Emotion, tuple[Factors, Factors]] = {
    Emotion.ANGRY: (Factors(pitch=2.0, energy=3.0, duration=-1.0), Factors(0.5, 1.0, 0.0)),
    Emotion.HAPPY: (Factors(pitch=3.0, energy=2.0, duration=-0.5), Factors(1.0, 0.5, 0.0)),
    Emotion.SAD: (Factors(pitch=-2.0, energy=-2.0, duration=1.0), Factors(-0.5, -0.5, 0.5)),
    Emotion.SURPRISE: (Factors(pitch=4.0, energy=2.0, duration=0.0), Factors(1.0, 1.0, -0.5)),
    Emotion.NEUTRAL: (ZERO, ZERO),
}

NEUTRAL_STUB_TABLE = {e: (ZERO, ZERO) for e in Emotion}


class StubProvider:
    """Answers every request with canned factors for the target emotion."""

    def __init__(self, table=None):
        self.table = dict(DEFAULT_STUB_TABLE if table is None else table)

    def complete(self, messages, request: PromptRequest) -> str:
        g, loc = self.table.get(request.target_emotion, (ZERO, ZERO))
        plan = RawScalingPlan(g, tuple(loc for _ in request.words), request.words,
                              rationale=f"canned {request.target_emotion.value} plan")
        return plan_to_response(plan)


class ReplayProvider:
    """Replays previously recorded plans keyed by utterance id."""

    def __init__(self, path):
        from .formats import read_plans

        records, errors = read_plans(path)
        if errors:
            raise TransportError(f"{path}: {len(errors)} unreadable plan lines, first: {errors[0]}")
        self.plans = {uid: plan for uid, plan in records}

    def complete(self, messages, request: PromptRequest) -> str:
        try:
            return plan_to_response(self.plans[request.utterance_id])
        except KeyError:
            raise TransportError(f"no recorded plan for utterance {request.utterance_id!r}") from None


def make_provider(spec: str, cfg: ProviderConfig, base_dir: Path | None = None) -> Provider:
    if spec == "http":
        return HttpProvider(cfg)
    if spec == "stub":
        return StubProvider()
    if spec == "stub:neutral":
        return StubProvider(NEUTRAL_STUB_TABLE)
    if spec.startswith("replay:"):
        path = Path(spec[len("replay:"):])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return ReplayProvider(path)
    raise ValueError(f"unknown provider {spec!r}")


def request_plan(req: PromptRequest, cfg: ProviderConfig, provider: Provider | None = None,
                 ranges: ScalingRanges = DEFAULT_RANGES) -> RawScalingPlan:
    """Ask the provider for a plan, retrying on unusable answers.

    After ``cfg.max_retries`` failed retries the neutral plan is returned with
    ``degraded=True``. Transport failures propagate as :class:`TransportError`.
    """
    if req.mode == ControlMode.NONE:
        return RawScalingPlan.neutral(req.words)
    if provider is None:
        provider = HttpProvider(cfg)
    messages = [
        {"role": "system", "content": SYSTEM_MESSAGE},
        {"role": "user", "content": build_prompt(req, ranges)},
    ]
    failures = []
    for attempt in range(1, cfg.max_retries + 2):
        text = provider.complete(list(messages), req)
        if not isinstance(text, str):
            text = "" if text is None else str(text)
        try:
            plan = parse_response(text, req.words, ranges)
        except (ParseError, SchemaError) as exc:
            failures.append(f"attempt {attempt}: {exc}")
            log.warning("%s: unusable response on attempt %d: %s",
                        req.utterance_id or "<request>", attempt, exc)
            messages.append({"role": "assistant", "content": text})
            messages.append({"role": "user", "content": (
                f"Your previous reply could not be used ({exc}). "
                "Reply again with only the JSON object in the required format."
            )})
            continue
        return replace(enforce_mode(plan, req.mode), attempts=attempt)
    log.error("%s: falling back to the neutral plan after %d attempts",
              req.utterance_id or "<request>", len(failures))
    return RawScalingPlan.neutral(req.words, degraded=True, attempts=len(failures),
                                  warnings=failures)
