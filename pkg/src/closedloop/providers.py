"""Model-provider contract.

A provider turns a :class:`CompletionRequest` (system text plus interleaved
text and image segments) into a :class:`Completion` carrying usage and a
synthetic latency. Two implementations ship: :class:`ScriptedProvider`, a
deterministic rule table used by tests and the oracle agents, and
:class:`RemoteProvider`, a JSON chat-completions client.
"""

from __future__ import annotations

import base64
import enum
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Union

import httpx

from .domain import IMAGE_TOKEN_COST, count_tokens

logger = logging.getLogger(__name__)

__all__ = [
    "TextSegment",
    "ImageSegment",
    "CompletionRequest",
    "Usage",
    "Completion",
    "Role",
    "LatencyModel",
    "ProviderConfig",
    "Provider",
    "ProviderBindings",
    "ProviderError",
    "ProviderUnavailable",
    "MalformedProviderResponse",
    "RuleMiss",
    "ScriptedProvider",
    "CountingProvider",
    "RemoteEndpoint",
    "RemoteProvider",
    "remote_complete",
    "count_tokens",
    "prompt_tokens",
]


@dataclass(frozen=True)
class TextSegment:
    text: str


@dataclass(frozen=True)
class ImageSegment:
    """An attached screenshot. ``declared_bytes`` is what the upload would cost."""

    payload: str
    declared_bytes: int


Segment = Union[TextSegment, ImageSegment]


@dataclass(frozen=True)
class CompletionRequest:
    system: str
    user_segments: tuple[Segment, ...]
    max_tokens: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.user_segments:
            raise ValueError("a completion request needs at least one user segment")

    @property
    def images(self) -> tuple[ImageSegment, ...]:
        return tuple(s for s in self.user_segments if isinstance(s, ImageSegment))

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(s.text for s in self.user_segments if isinstance(s, TextSegment))

    @property
    def image_bytes(self) -> int:
        return sum(s.declared_bytes for s in self.images)

    def matching_text(self) -> str:
        """Everything a scripted rule may match against: system, then segments in order."""
        parts = [self.system]
        for seg in self.user_segments:
            parts.append(seg.text if isinstance(seg, TextSegment) else seg.payload)
        return "\n".join(parts)

    def to_dict(self) -> dict[str, Any]:
        segs: list[dict[str, Any]] = []
        for seg in self.user_segments:
            if isinstance(seg, TextSegment):
                segs.append({"type": "text", "text": seg.text})
            else:
                segs.append({"type": "image", "payload": seg.payload, "declared_bytes": seg.declared_bytes})
        return {"system": self.system, "segments": segs, "max_tokens": self.max_tokens}


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("usage counters must be >= 0")

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class Completion:
    text: str
    usage: Usage
    synthetic_latency: float = 0.0
    retries: int = 0


class Role(enum.Enum):
    CLOUD = "cloud"
    DEVICE_EXECUTOR = "device_executor"
    DEVICE_OBSERVER = "device_observer"


@dataclass(frozen=True)
class LatencyModel:
    fixed: float = 0.0
    per_token: float = 0.0

    def __post_init__(self) -> None:
        if self.fixed < 0 or self.per_token < 0:
            raise ValueError("latency terms must be nonnegative")

    def latency(self, tokens: int) -> float:
        return self.fixed + self.per_token * tokens


@dataclass(frozen=True)
class ProviderConfig:
    role: Role
    latency_model: LatencyModel = LatencyModel()
    image_token_cost: int = IMAGE_TOKEN_COST

    def __post_init__(self) -> None:
        if self.image_token_cost <= 0:
            raise ValueError("image_token_cost must be > 0")


CLOUD_DEFAULT = ProviderConfig(Role.CLOUD, LatencyModel(fixed=3.0))
EXECUTOR_DEFAULT = ProviderConfig(Role.DEVICE_EXECUTOR, LatencyModel(fixed=0.3))
OBSERVER_DEFAULT = ProviderConfig(Role.DEVICE_OBSERVER, LatencyModel(fixed=0.3))


def prompt_tokens(request: CompletionRequest, image_token_cost: int = IMAGE_TOKEN_COST) -> int:
    """Proxy prompt size: system and each text segment counted separately, plus a flat cost per image."""
    text = count_tokens(request.system) + sum(count_tokens(t) for t in request.texts)
    return text + image_token_cost * len(request.images)


class ProviderError(RuntimeError):
    pass


class ProviderUnavailable(ProviderError):
    pass


class MalformedProviderResponse(ProviderError):
    pass


class RuleMiss(ProviderError):
    pass


class Provider(Protocol):
    config: ProviderConfig

    def complete(self, request: CompletionRequest) -> Completion: ...


@dataclass(frozen=True)
class ProviderBindings:
    """The three providers one episode talks to."""

    cloud: Provider
    executor: Provider
    observer: Provider


# -- scripted ------------------------------------------------------------

Responder = Union[str, Callable[[CompletionRequest, "re.Match[str]"], str]]


@dataclass(frozen=True)
class _Rule:
    rule_id: int
    pattern: "re.Pattern[str]"
    response: Responder


class ScriptedProvider:
    """First-match-wins rule table over the request's matching text.

    A response is either a template expanded with the match's groups
    (``\\1``, ``\\g<name>``) or a callable ``(request, match) -> text``.
    The table freezes on the first :meth:`complete` call.
    """

    def __init__(self, config: ProviderConfig, rules: Optional[list[tuple[str, Responder]]] = None):
        self.config = config
        self._rules: list[_Rule] = []
        self._frozen = False
        for pattern, response in rules or []:
            self.register(pattern, response)

    def register(self, pattern: Union[str, "re.Pattern[str]"], response: Responder) -> int:
        if self._frozen:
            raise RuntimeError("rule table is frozen once the provider has served a request")
        compiled = pattern if isinstance(pattern, re.Pattern) else re.compile(pattern, re.S)
        rule = _Rule(len(self._rules), compiled, response)
        self._rules.append(rule)
        return rule.rule_id

    @property
    def rule_count(self) -> int:
        return len(self._rules)

    def complete(self, request: CompletionRequest) -> Completion:
        self._frozen = True
        haystack = request.matching_text()
        for rule in self._rules:
            m = rule.pattern.search(haystack)
            if m is None:
                continue
            if callable(rule.response):
                text = rule.response(request, m)
            else:
                text = m.expand(rule.response)
            usage = Usage(prompt_tokens(request, self.config.image_token_cost), count_tokens(text))
            return Completion(text, usage, self.config.latency_model.latency(usage.total))
        raise RuleMiss(f"no rule matched request starting {haystack[:60]!r}")


class CountingProvider:
    """Pass-through wrapper that counts completions; an independent wiretap for MC checks."""

    def __init__(self, inner: Provider):
        self.inner = inner
        self.config = inner.config
        self.calls = 0
        self.tokens = 0
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> Completion:
        completion = self.inner.complete(request)
        with self._lock:
            self.calls += 1
            self.tokens += completion.usage.total
        return completion


# -- remote -------------------------------------------------------------

DEFAULT_SECRET_ENV = "CLOSEDLOOP_API_KEY"


@dataclass(frozen=True)
class RemoteEndpoint:
    base_url: str
    model: str
    secret_env: str = DEFAULT_SECRET_ENV
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"
    timeout: float = 60.0
    retries: int = 2
    path: str = "/chat/completions"

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> RemoteEndpoint:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown endpoint keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> RemoteEndpoint:
        return cls.from_mapping(json.loads(Path(path).read_text()))

    @classmethod
    def from_env(cls, prefix: str = "CLOSEDLOOP_") -> RemoteEndpoint:
        env = os.environ
        return cls(
            base_url=env[f"{prefix}BASE_URL"],
            model=env[f"{prefix}MODEL"],
            timeout=float(env.get(f"{prefix}TIMEOUT", 60.0)),
            retries=int(env.get(f"{prefix}RETRIES", 2)),
        )

    def headers(self) -> dict[str, str]:
        secret = os.environ.get(self.secret_env)
        if not secret:
            return {}
        value = f"{self.auth_scheme} {secret}" if self.auth_scheme else secret
        return {self.auth_header: value}


def chat_payload(request: CompletionRequest, model: str) -> dict[str, Any]:
    content: list[dict[str, Any]] = []
    for seg in request.user_segments:
        if isinstance(seg, TextSegment):
            content.append({"type": "text", "text": seg.text})
        else:
            b64 = base64.b64encode(seg.payload.encode("utf-8")).decode("ascii")
            content.append({"type": "image_url", "image_url": {"url": f"data:application/json;base64,{b64}"}})
    payload: dict[str, Any] = {
        "model": model,
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": content},
        ],
    }
    if request.max_tokens is not None:
        payload["max_tokens"] = request.max_tokens
    return payload


def _parse_reply(data: Any) -> tuple[str, Usage]:
    try:
        text = data["choices"][0]["message"]["content"]
        usage = data["usage"]
        prompt, completion = int(usage["prompt_tokens"]), int(usage["completion_tokens"])
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise MalformedProviderResponse(f"unexpected reply shape: {exc!r}") from None
    if not isinstance(text, str):
        raise MalformedProviderResponse("message content is not text")
    # JSON escapes can smuggle in lone surrogates, which cannot be re-encoded as UTF-8.
    text = text.encode("utf-8", "replace").decode("utf-8")
    try:
        return text, Usage(prompt, completion)
    except ValueError as exc:
        raise MalformedProviderResponse(str(exc)) from None


def remote_complete(
    request: CompletionRequest,
    endpoint: RemoteEndpoint,
    client: Optional[httpx.Client] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> Completion:
    """One chat-completion round trip with bounded retries on transport errors and 5xx."""
    own = client is None
    client = client or httpx.Client(timeout=endpoint.timeout)
    url = endpoint.base_url.rstrip("/") + endpoint.path
    body = chat_payload(request, endpoint.model)
    start = time.perf_counter()
    last_error = "no attempt made"
    try:
        for attempt in range(endpoint.retries + 1):
            if attempt:
                sleep(min(2.0 ** (attempt - 1), 8.0))
            try:
                resp = client.post(url, json=body, headers=endpoint.headers())
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc!r}"
                logger.warning("attempt %d to %s failed: %s", attempt + 1, url, last_error)
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("attempt %d to %s failed: %s", attempt + 1, url, last_error)
                continue
            if resp.status_code >= 400:
                raise ProviderUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()
            except ValueError:
                raise MalformedProviderResponse("reply is not JSON") from None
            text, usage = _parse_reply(data)
            return Completion(text, usage, time.perf_counter() - start, retries=attempt)
    finally:
        if own:
            client.close()
    raise ProviderUnavailable(f"{url}: gave up after {endpoint.retries + 1} attempts ({last_error})")


class RemoteProvider:
    def __init__(
        self,
        config: ProviderConfig,
        endpoint: RemoteEndpoint,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.endpoint = endpoint
        self._client = httpx.Client(timeout=endpoint.timeout, transport=transport)
        self._sleep = sleep

    def complete(self, request: CompletionRequest) -> Completion:
        return remote_complete(request, self.endpoint, self._client, self._sleep)

    def close(self) -> None:
        self._client.close()
