"""One declarative run configuration covering every module, with dotted overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .network import IsgConfig
from .planner import PlannerConfig
from .scene import SceneDims
from .synth import DIFFICULTIES, GeneratorConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


@dataclass(frozen=True)
class DataConfig:
    n_scenes: int = 2000
    seed: int = 0
    mix: dict = field(default_factory=lambda: {"interactive": 1.0})

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ConfigError("data.n_scenes must be at least 1")
        if not isinstance(self.mix, dict) or not self.mix:
            raise ConfigError("data.mix must be a non-empty mapping of difficulty to weight")
        for k, v in self.mix.items():
            if k not in DIFFICULTIES:
                raise ConfigError(f"unknown difficulty {k!r} (expected one of {', '.join(DIFFICULTIES)})")
            if not isinstance(v, (int, float)) or v < 0:
                raise ConfigError(f"data.mix weight for {k!r} must be a non-negative number")


SECTIONS = {
    "isg": IsgConfig,
    "planner": PlannerConfig,
    "generator": GeneratorConfig,
    "data": DataConfig,
    "train": TrainConfig,
    "dims": SceneDims,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    isg: IsgConfig = field(default_factory=IsgConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dims: SceneDims = field(default_factory=SceneDims)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _coerce(value: Any, default: Any, key: str) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping, got {value!r}")
        return value
    return value


def _build_section(cls, values: dict, prefix: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{prefix}: expected a mapping")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key {prefix}.{unknown[0]}")
    kwargs = {k: _coerce(v, getattr(defaults, k), f"{prefix}.{k}") for k, v in values.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{prefix}: {exc}") from None


def from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(d) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]}")
    kwargs: dict[str, Any] = {}
    if "seed" in d:
        kwargs["seed"] = _coerce(d["seed"], 0, "seed")
    for name, cls in SECTIONS.items():
        if name in d:
            kwargs[name] = _build_section(cls, d[name], name)
    return RunConfig(**kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(data)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: RunConfig, items: Iterable[str]) -> RunConfig:
    """Apply ``section.key=value`` (or ``seed=N``) overrides; values are parsed as JSON when possible."""
    d = cfg.to_dict()
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        if parts == ["seed"]:
            d["seed"] = _parse_value(text)
            continue
        if len(parts) != 2 or parts[0] not in SECTIONS:
            raise ConfigError(f"unknown key {key}")
        if parts[1] not in d[parts[0]]:
            raise ConfigError(f"unknown key {key}")
        d[parts[0]][parts[1]] = _parse_value(text)
    return from_dict(d)


def with_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Dict form of :func:`apply_overrides`: ``{"isg.distance": "current", ...}``."""
    return apply_overrides(cfg, [f"{k}={json.dumps(v)}" for k, v in overrides.items()])
