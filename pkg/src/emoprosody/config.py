"""Run configuration loaded from a TOML file with flat sections.

An empty file yields the defaults. Unknown sections or keys are rejected so a
typo cannot silently fall back to a default::

    [provider]
    provider = "replay:plans.jsonl"   # relative to the config file
    max_retries = 2

    [scaling]
    duration_target = [0.74, 1.34]
    pitch_gain = 1.0

    [rank]
    C = 0.1
    thresholds = "tertile"            # or [low, high]

    [metrics]
    mcd_exclude_c0 = true
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli_w

from .errors import ConfigError
from .prompting import ProviderConfig
from .prosody import ScalingRanges

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class RankConfig:
    C: float = 0.1
    tol: float = 1e-6
    max_iter: int = 200
    pair_limit: int = 10_000
    seed: int = 0
    thresholds: str | tuple[float, float] = "tertile"

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1 or self.pair_limit < 1:
            raise ValueError("max_iter and pair_limit must be >= 1")
        if self.thresholds != "tertile":
            lo, hi = self.thresholds
            if not 0.0 < lo < hi <= 1.0:
                raise ValueError(f"invalid range: thresholds {list(self.thresholds)}")

    def explicit_thresholds(self) -> tuple[float, float] | None:
        return None if self.thresholds == "tertile" else tuple(self.thresholds)


@dataclass(frozen=True)
class MetricConfig:
    mcd_exclude_c0: bool = True
    mcd_dtw: bool = True


@dataclass(frozen=True)
class RunConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    scaling: ScalingRanges = field(default_factory=ScalingRanges)
    rank: RankConfig = field(default_factory=RankConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)


_SECTIONS = {
    "provider": ProviderConfig,
    "scaling": ScalingRanges,
    "rank": RankConfig,
    "metrics": MetricConfig,
}

_RANGE_KEYS = {"duration_raw", "duration_target", "energy_raw", "energy_target", "pitch_raw"}


def _coerce(section: str, key: str, value):
    if key in _RANGE_KEYS:
        if not (isinstance(value, list) and len(value) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
            raise ConfigError(f"[{section}] {key} must be a two-number list, got {value!r}")
        lo, hi = float(value[0]), float(value[1])
        if not lo < hi:
            raise ConfigError(f"[{section}] {key}: invalid range [{lo}, {hi}]")
        return (lo, hi)
    if section == "rank" and key == "thresholds":
        if value == "tertile":
            return value
        if isinstance(value, list) and len(value) == 2:
            return (float(value[0]), float(value[1]))
        raise ConfigError(f"[rank] thresholds must be \"tertile\" or [low, high], got {value!r}")
    return value


def config_from_dict(data: dict, base_dir: Path | None = None) -> RunConfig:
    parts = {}
    for section, body in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        cls = _SECTIONS[section]
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            kwargs[key] = _coerce(section, key, value)
        try:
            parts[section] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from exc
    cfg = RunConfig(**parts)
    spec = cfg.provider.provider
    if spec.startswith("replay:") and base_dir is not None:
        p = Path(spec[len("replay:"):])
        if not p.is_absolute():
            cfg = replace(cfg, provider=replace(cfg.provider, provider=f"replay:{(base_dir / p).resolve()}"))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        # the message carries "(at line L, column C)"
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, path.parent)


def config_to_dict(cfg: RunConfig) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return list(v)
        return v

    return {name: {k: plain(v) for k, v in asdict(getattr(cfg, name)).items()} for name in _SECTIONS}


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))
