"""Pipeline configuration: roster, model registry, roles, threshold, mode."""

from __future__ import annotations

import hashlib
import json
import os
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any

from .errors import ConfigError, ProfilerError
from .gateway import DEFAULT_MAX_IN_FLIGHT, DEFAULT_MAX_OUTPUT_TOKENS, MODES, ModelSpec, validate_registry
from .pipeline import DEFAULT_THRESHOLD, CharacterSpec, validate_roster

DEFAULT_CONFIG_PATH = "pipeline.json"

PAPER_ROSTER = (
    CharacterSpec("Hercule Poirot", frozenset({"Poirot"})),
    CharacterSpec("Sherlock Holmes", frozenset({"Holmes"})),
    CharacterSpec("William Murdoch", frozenset({"Murdoch", "Detective Murdoch"})),
    CharacterSpec("Columbo", frozenset({"Lieutenant Columbo"})),
    CharacterSpec("Father Brown", frozenset({"Brown"})),
    CharacterSpec("Miss Marple", frozenset({"Marple", "Jane Marple"})),
    CharacterSpec("Auguste Dupin", frozenset({"Dupin", "C. Auguste Dupin"})),
)

_OPENAI = "https://api.openai.com/v1"
_GOOGLE = "https://generativelanguage.googleapis.com/v1beta/openai"
_ANTHROPIC = "https://api.anthropic.com/v1"
_OLLAMA = "http://localhost:11434"
_ALL = frozenset({"describer", "identifier"})


def _remote(model_id: str, url: str, version: str, env: str, roles=_ALL) -> ModelSpec:
    return ModelSpec(model_id, "remote-api", url, version, roles, env)


def _local(model_id: str, version: str) -> ModelSpec:
    return ModelSpec(model_id, "local-endpoint", _OLLAMA, version, _ALL)


PAPER_REGISTRY = (
    _remote("gpt-3.5-turbo", _OPENAI, "gpt-3.5-turbo-0125", "OPENAI_API_KEY"),
    _remote("gpt-4o", _OPENAI, "gpt-4o-2024-08-06", "OPENAI_API_KEY", _ALL | {"extractor", "grouper"}),
    _remote("gpt-4.1", _OPENAI, "gpt-4.1-2025-04-14", "OPENAI_API_KEY"),
    _remote("o4-mini", _OPENAI, "o4-mini-2025-04-16", "OPENAI_API_KEY"),
    _remote("o3-mini", _OPENAI, "o3-mini-2025-01-31", "OPENAI_API_KEY"),
    _remote("gemini-1.5-pro", _GOOGLE, "gemini-1.5-pro", "GEMINI_API_KEY"),
    _remote("gemini-2.0-flash", _GOOGLE, "gemini-2.0-flash", "GEMINI_API_KEY"),
    _remote("claude-3.5-haiku", _ANTHROPIC, "claude-3-5-haiku-20241022", "ANTHROPIC_API_KEY"),
    _remote("claude-3.7-sonnet", _ANTHROPIC, "claude-3-7-sonnet-20250219", "ANTHROPIC_API_KEY"),
    _local("llama3.3", "llama3.3:70b-instruct-q5_K_M"),
    _local("qwen2.5", "qwen2.5:72b-instruct-q5_K_M"),
    _local("qwq", "qwq:32b"),
    _local("mistral-small", "mistral-small:22b-instruct-q5_K_M"),
    _local("gemma3", "gemma3:27b"),
    _local("deepseek-r1", "deepseek-r1:70b"),
)


@dataclass(frozen=True)
class PipelineConfig:
    roster: tuple[CharacterSpec, ...]
    registry: tuple[ModelSpec, ...]
    extractor_id: str
    grouper_id: str
    threshold: Fraction = DEFAULT_THRESHOLD
    mode: str = "replay"
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    rate_per_second: float | None = None
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    runs_dir: str = "runs"
    cache_dir: str | None = None
    models: dict[str, ModelSpec] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "roster", tuple(self.roster))
        object.__setattr__(self, "registry", tuple(self.registry))
        object.__setattr__(self, "threshold", Fraction(self.threshold))
        try:
            validate_roster(self.roster)
        except ProfilerError as exc:
            raise ConfigError(str(exc)) from None
        models = validate_registry(self.registry)
        object.__setattr__(self, "models", models)
        for role, model_id in (("extractor", self.extractor_id), ("grouper", self.grouper_id)):
            if model_id not in models:
                raise ConfigError(f"{role}_id {model_id!r} is not in the registry")
            if not models[model_id].has_role(role):
                raise ConfigError(f"{model_id!r} does not carry the {role} role")
        if not self.describers:
            raise ConfigError("registry has no describer models")
        if not 0 < self.threshold <= 1:
            raise ConfigError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.max_in_flight < 1 or self.max_output_tokens < 1:
            raise ConfigError("max_in_flight and max_output_tokens must be positive")

    @property
    def describers(self) -> list[ModelSpec]:
        return sorted((m for m in self.registry if m.has_role("describer")), key=lambda m: m.model_id)

    @property
    def identifiers(self) -> list[ModelSpec]:
        return sorted((m for m in self.registry if m.has_role("identifier")), key=lambda m: m.model_id)

    @property
    def extractor(self) -> ModelSpec:
        return self.models[self.extractor_id]

    @property
    def grouper(self) -> ModelSpec:
        return self.models[self.grouper_id]

    @property
    def roster_names(self) -> list[str]:
        return [c.name for c in self.roster]

    @property
    def aliases(self) -> dict[str, frozenset[str]]:
        return {c.name: c.aliases for c in self.roster}

    def with_overrides(self, **changes: Any) -> PipelineConfig:
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes) if changes else self

    def to_dict(self) -> dict[str, Any]:
        return {
            "roster": [c.to_dict() for c in self.roster],
            "registry": [m.to_dict() for m in self.registry],
            "extractor_id": self.extractor_id,
            "grouper_id": self.grouper_id,
            "threshold": str(self.threshold),
            "mode": self.mode,
            "concurrency": {"max_in_flight": self.max_in_flight, "rate_per_second": self.rate_per_second},
            "max_output_tokens": self.max_output_tokens,
            "runs_dir": self.runs_dir,
            "cache_dir": self.cache_dir,
        }

    def content_hash(self) -> str:
        """Hash of everything that shapes artifacts; mode and concurrency are excluded."""
        data = self.to_dict()
        for key in ("mode", "concurrency", "runs_dir", "cache_dir"):
            data.pop(key)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str | os.PathLike[str] | None = None) -> PipelineConfig:
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        known = {"roster", "registry", "extractor_id", "grouper_id", "threshold", "mode",
                 "concurrency", "max_output_tokens", "runs_dir", "cache_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            roster = [CharacterSpec.from_dict(c) for c in data["roster"]]
            registry = [ModelSpec.from_dict(m) for m in data["registry"]]
            concurrency = data.get("concurrency") or {}
            threshold = Fraction(str(data.get("threshold", DEFAULT_THRESHOLD)))
            runs_dir = data.get("runs_dir", "runs")
            cache_dir = data.get("cache_dir")
            if base_dir is not None:
                runs_dir = str(Path(base_dir, runs_dir))
                cache_dir = None if cache_dir is None else str(Path(base_dir, cache_dir))
            return cls(
                roster=roster,
                registry=registry,
                extractor_id=data["extractor_id"],
                grouper_id=data["grouper_id"],
                threshold=threshold,
                mode=data.get("mode", "replay"),
                max_in_flight=int(concurrency.get("max_in_flight", DEFAULT_MAX_IN_FLIGHT)),
                rate_per_second=concurrency.get("rate_per_second"),
                max_output_tokens=int(data.get("max_output_tokens", DEFAULT_MAX_OUTPUT_TOKENS)),
                runs_dir=runs_dir,
                cache_dir=cache_dir,
            )
        except KeyError as exc:
            raise ConfigError(f"config is missing {exc.args[0]!r}") from None
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        except ProfilerError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None


def load_config(path: str | os.PathLike[str]) -> PipelineConfig:
    """Parse a JSON config; relative directories resolve against the file's folder."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return PipelineConfig.from_dict(data, base_dir=path.parent)


def paper_config(**overrides: Any) -> PipelineConfig:
    """Seven detectives, fifteen models, gpt-4o extracting and grouping, 20% threshold."""
    return PipelineConfig(PAPER_ROSTER, PAPER_REGISTRY, "gpt-4o", "gpt-4o", **overrides)
