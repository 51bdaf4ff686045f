"""Uniform access to chat-completion backends with record/replay caching.

Every request goes through :class:`Gateway.complete`, which enforces the
deterministic sampling settings, routes the request to a backend (remote
chat-completions API, local inference server, or an offline mock), and
consults the response cache according to the run mode:

``live``    dispatch every request, never touch the cache
``record``  serve cache hits, dispatch misses and persist them
``replay``  serve cache hits only; a miss is a :class:`FixtureError`
``mock``    route every model to an offline mock backend, no cache
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from .errors import BackendError, ConfigError, FixtureError, RetriableError, ValidationError

logger = logging.getLogger(__name__)

PROVIDERS = ("remote-api", "local-endpoint", "mock", "replay")
ROLES = ("describer", "extractor", "grouper", "identifier")
MODES = ("live", "record", "replay", "mock")

DEFAULT_MAX_OUTPUT_TOKENS = 1024
DEFAULT_MAX_IN_FLIGHT = 4
RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 1.0
RETRYABLE_STATUS_CODES = {408, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class ModelSpec:
    """One registered LLM and the roles it plays in the workflow."""

    model_id: str
    provider: str
    endpoint_url: str = ""
    version_tag: str = ""
    roles: frozenset[str] = frozenset()
    credentials_env: str = ""

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ConfigError("model_id must be non-empty")
        if self.provider not in PROVIDERS:
            raise ConfigError(f"{self.model_id}: unknown provider {self.provider!r}")
        object.__setattr__(self, "roles", frozenset(self.roles))
        unknown = self.roles - set(ROLES)
        if unknown:
            raise ConfigError(f"{self.model_id}: unknown roles {sorted(unknown)}")
        if self.provider == "remote-api" and not self.credentials_env:
            raise ConfigError(f"{self.model_id}: remote-api models must name credentials_env")

    def has_role(self, role: str) -> bool:
        return role in self.roles

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "provider": self.provider,
            "endpoint_url": self.endpoint_url,
            "version_tag": self.version_tag,
            "roles": sorted(self.roles),
            "credentials_env": self.credentials_env,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelSpec:
        try:
            return cls(
                model_id=data["model_id"],
                provider=data["provider"],
                endpoint_url=data.get("endpoint_url", ""),
                version_tag=data.get("version_tag", ""),
                roles=frozenset(data.get("roles", ())),
                credentials_env=data.get("credentials_env", ""),
            )
        except KeyError as exc:
            raise ConfigError(f"model entry missing field {exc.args[0]!r}") from None


def validate_registry(models: Iterable[ModelSpec]) -> dict[str, ModelSpec]:
    """Index ``models`` by id, checking uniqueness and role coverage."""
    registry: dict[str, ModelSpec] = {}
    for spec in models:
        if spec.model_id in registry:
            raise ConfigError(f"duplicate model_id {spec.model_id!r}")
        registry[spec.model_id] = spec
    for role in ("extractor", "grouper"):
        if not any(spec.has_role(role) for spec in registry.values()):
            raise ConfigError(f"registry has no model with role {role!r}")
    return registry


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    prompt_text: str
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    request_tag: str = ""

    @property
    def phase(self) -> str:
        return self.request_tag.split("/", 1)[0] if self.request_tag else ""


@dataclass(frozen=True)
class CompletionResult:
    raw_text: str
    clean_text: str
    model_id: str
    cache_hit: bool
    latency_ms: int


_THINK_RE = re.compile(r"<think>.*?</think>", re.DOTALL | re.IGNORECASE)
_FENCE_RE = re.compile(r"\A```[^\n`]*\n(.*?)\n?[ \t]*```\Z", re.DOTALL)
_EMPHASIS_MARKERS = ("**", "__", "*", "_")


def _sanitize_once(text: str) -> str:
    text = _THINK_RE.sub("", text).strip()
    match = _FENCE_RE.match(text)
    if match:
        text = match.group(1).strip()
    for marker in _EMPHASIS_MARKERS:
        n = len(marker)
        if len(text) > 2 * n and text.startswith(marker) and text.endswith(marker):
            inner = text[n:-n]
            # only strip markers that wrap the whole text, never interior emphasis
            if marker[0] not in inner:
                text = inner.strip()
            break
    return text


def sanitize(raw_text: str) -> str:
    """Strip reasoning tags, enclosing code fences, outer emphasis, and whitespace.

    The rules are applied until nothing changes, so the result is idempotent.
    """
    text = raw_text
    while True:
        cleaned = _sanitize_once(text)
        if cleaned == text:
            return cleaned
        text = cleaned


def prompt_hash(prompt_text: str) -> str:
    return hashlib.sha256(prompt_text.encode("utf-8")).hexdigest()


def cache_key(request: ChatRequest) -> str:
    """Content hash of ``(model_id, prompt_text)``; nothing else enters the key."""
    payload = json.dumps([request.model_id, request.prompt_text], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def atomic_write_text(path: Path, text: str) -> None:
    """Write ``text`` to a temp file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ResponseCache:
    """One JSON file per cache key under ``directory``."""

    def __init__(self, directory: str | os.PathLike[str]):
        self.directory = Path(directory)

    def path_for(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict[str, str] | None:
        path = self.path_for(key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def put(self, key: str, request: ChatRequest, raw_text: str, clean_text: str) -> Path:
        entry = {
            "model_id": request.model_id,
            "prompt_hash": prompt_hash(request.prompt_text),
            "raw_text": raw_text,
            "clean_text": clean_text,
        }
        path = self.path_for(key)
        atomic_write_text(path, json.dumps(entry, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
        return path

    def __len__(self) -> int:
        if not self.directory.is_dir():
            return 0
        return sum(1 for _ in self.directory.glob("*.json"))


class Backend(Protocol):
    def send(self, spec: ModelSpec, request: ChatRequest, api_key: str | None) -> str: ...


class EchoBackend:
    """Returns the prompt unchanged."""

    def send(self, spec: ModelSpec, request: ChatRequest, api_key: str | None) -> str:
        return request.prompt_text


class ChatCompletionsBackend:
    """Remote APIs speaking the common ``/chat/completions`` JSON scheme."""

    def __init__(self, client: httpx.Client | None = None, timeout: float = 120.0):
        self.client = client or httpx.Client(timeout=timeout)

    def send(self, spec: ModelSpec, request: ChatRequest, api_key: str | None) -> str:
        url = spec.endpoint_url.rstrip("/") + "/chat/completions"
        body = {
            "model": spec.version_tag or spec.model_id,
            "messages": [{"role": "user", "content": request.prompt_text}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        response = self.client.post(url, json=body, headers=headers)
        response.raise_for_status()
        try:
            return response.json()["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendError(f"{spec.model_id}: unexpected response shape: {exc!r}") from exc


class LocalChatBackend:
    """Local inference servers exposing the Ollama-style ``/api/chat`` endpoint."""

    def __init__(self, client: httpx.Client | None = None, timeout: float = 600.0):
        self.client = client or httpx.Client(timeout=timeout)

    def send(self, spec: ModelSpec, request: ChatRequest, api_key: str | None) -> str:
        url = spec.endpoint_url.rstrip("/") + "/api/chat"
        body = {
            "model": spec.version_tag or spec.model_id,
            "messages": [{"role": "user", "content": request.prompt_text}],
            "stream": False,
            "options": {"temperature": request.temperature, "num_predict": request.max_output_tokens},
        }
        response = self.client.post(url, json=body)
        response.raise_for_status()
        try:
            return response.json()["message"]["content"] or ""
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"{spec.model_id}: unexpected response shape: {exc!r}") from exc


def _is_transient(exc: BaseException) -> bool:
    if isinstance(exc, httpx.HTTPStatusError):
        return exc.response.status_code in RETRYABLE_STATUS_CODES
    return isinstance(exc, (httpx.TransportError, ConnectionError, TimeoutError))


class TokenBucket:
    """Blocking token bucket; ``rate`` tokens per second, bursts up to ``capacity``."""

    def __init__(self, rate: float, capacity: float | None = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            self._sleep(wait)


@dataclass
class _ProviderLimits:
    semaphore: threading.BoundedSemaphore
    bucket: TokenBucket | None = None


@dataclass
class Gateway:
    """Routes :class:`ChatRequest` objects to backends under one run mode.

    ``backends`` overrides the default backend per model_id or per provider
    name (model_id wins). ``calls`` counts every ``complete`` invocation by
    phase (the prefix of ``request_tag``); ``dispatches`` counts requests that
    actually reached a backend, by model_id.
    """

    models: Iterable[ModelSpec] = ()
    mode: str = "mock"
    cache_dir: str | os.PathLike[str] | None = None
    backends: Mapping[str, Backend] = field(default_factory=dict)
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    rate_per_second: float | None = None
    retries: int = RETRY_ATTEMPTS
    backoff_seconds: float = RETRY_BASE_DELAY
    sleep: Callable[[float], None] = time.sleep
    environ: Mapping[str, str] | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be at least 1")
        self.registry = {spec.model_id: spec for spec in self.models}
        self.cache = ResponseCache(self.cache_dir) if self.cache_dir is not None else None
        self.calls: Counter[str] = Counter()
        self.dispatches: Counter[str] = Counter()
        self._lock = threading.Lock()
        self._limits: dict[str, _ProviderLimits] = {}
        self._default_backends: dict[str, Backend] = {}

    def complete(self, spec: ModelSpec, request: ChatRequest) -> CompletionResult:
        if request.temperature != 0.0:
            raise ValidationError(f"temperature must be 0.0, got {request.temperature}")
        if spec.model_id != request.model_id:
            raise ValidationError(f"request for {request.model_id!r} sent to spec {spec.model_id!r}")
        if request.max_output_tokens < 1:
            raise ValidationError("max_output_tokens must be positive")
        with self._lock:
            self.calls[request.phase] += 1

        mode = "replay" if spec.provider == "replay" and self.mode != "mock" else self.mode
        if mode in ("record", "replay"):
            if self.cache is None:
                raise ConfigError(f"mode {mode!r} needs a cache directory")
            key = cache_key(request)
            entry = self.cache.get(key)
            if entry is not None:
                return CompletionResult(entry["raw_text"], entry["clean_text"], spec.model_id, True, 0)
            if mode == "replay":
                raise FixtureError(
                    f"no recorded response for model {spec.model_id!r} "
                    f"(tag {request.request_tag!r}, key {key[:12]})"
                )

        started = time.monotonic()
        raw = self._dispatch(spec, request)
        latency = int(round((time.monotonic() - started) * 1000))
        clean = sanitize(raw)
        if mode == "record":
            self.cache.put(cache_key(request), request, raw, clean)
        return CompletionResult(raw, clean, spec.model_id, False, latency)

    def _backend_for(self, spec: ModelSpec) -> Backend:
        if spec.model_id in self.backends:
            return self.backends[spec.model_id]
        if self.mode == "mock" and spec.provider != "mock":
            kind = "mock"
        else:
            kind = spec.provider
        if kind in self.backends:
            return self.backends[kind]
        if kind == "mock":
            return self._default("mock://echo" if spec.endpoint_url == "mock://echo" else "mock", spec)
        if kind == "replay":
            raise FixtureError(f"replay-only model {spec.model_id!r} cannot be dispatched")
        return self._default(kind, spec)

    def _default(self, kind: str, spec: ModelSpec) -> Backend:
        with self._lock:
            if kind not in self._default_backends:
                if kind == "mock://echo":
                    backend: Backend = EchoBackend()
                elif kind == "mock":
                    from .mock import HeuristicMockBackend

                    backend = HeuristicMockBackend()
                elif kind == "remote-api":
                    backend = ChatCompletionsBackend()
                else:
                    backend = LocalChatBackend()
                self._default_backends[kind] = backend
            return self._default_backends[kind]

    def _limits_for(self, provider: str) -> _ProviderLimits:
        with self._lock:
            if provider not in self._limits:
                bucket = TokenBucket(self.rate_per_second, sleep=self.sleep) if self.rate_per_second else None
                self._limits[provider] = _ProviderLimits(threading.BoundedSemaphore(self.max_in_flight), bucket)
            return self._limits[provider]

    def _api_key(self, spec: ModelSpec) -> str | None:
        if not spec.credentials_env:
            return None
        env = self.environ if self.environ is not None else os.environ
        key = env.get(spec.credentials_env)
        if not key and spec.provider == "remote-api" and self.mode != "mock":
            raise ConfigError(f"{spec.model_id}: environment variable {spec.credentials_env} is not set")
        return key

    def _dispatch(self, spec: ModelSpec, request: ChatRequest) -> str:
        backend = self._backend_for(spec)
        api_key = self._api_key(spec)
        limits = self._limits_for(spec.provider)
        for attempt in range(1, self.retries + 1):
            with limits.semaphore:
                if limits.bucket is not None:
                    limits.bucket.acquire()
                with self._lock:
                    self.dispatches[spec.model_id] += 1
                try:
                    return backend.send(spec, request, api_key)
                except httpx.HTTPStatusError as exc:
                    if not _is_transient(exc):
                        raise BackendError(f"{spec.model_id}: HTTP {exc.response.status_code}") from exc
                    last: BaseException = exc
                except Exception as exc:
                    if not _is_transient(exc):
                        raise
                    last = exc
            logger.warning("%s: attempt %d/%d failed: %r", spec.model_id, attempt, self.retries, last)
            if attempt < self.retries:
                self.sleep(self.backoff_seconds * 2 ** (attempt - 1))
        raise RetriableError(f"{spec.model_id}: transport failure: {last!r}", attempts=self.retries)
