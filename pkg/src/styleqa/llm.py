"""Chat-completion boundary: HTTP backend plus a deterministic mock.

Every LLM call in the system goes through :class:`ChatBackend.complete`.
The request carries an optional ``adapter_id`` so the serving stack can
activate per-cluster low-rank parameters; everything else is a plain JSON
chat completion. The mock is scriptable and fully deterministic, which is
what makes the offline pipeline byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from .errors import (
    BackendError,
    BackendTimeout,
    MalformedResponse,
    RateLimited,
    UnknownAdapter,
)

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def estimate_tokens(text: str) -> int:
    """Whitespace + punctuation token count, used when a backend omits usage."""
    return len(_TOKEN_RE.findall(text))


@dataclass(frozen=True)
class ChatRequest:
    system: str
    messages: tuple[tuple[str, str], ...]
    adapter_id: str | None = None
    max_tokens: int = 512
    temperature: float = 0.0
    tag: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def prompt_text(self) -> str:
        parts = [self.system] if self.system else []
        parts.extend(text for _, text in self.messages)
        return "\n".join(parts)

    def fingerprint(self) -> str:
        payload = json.dumps(
            {"system": self.system, "messages": list(self.messages), "adapter_id": self.adapter_id},
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    backend_id: str
    latency_ms: float

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")


class ChatBackend(Protocol):
    def complete(self, req: ChatRequest) -> ChatResponse: ...


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    base_delay_s: float = 0.25


class HttpChatBackend:
    """JSON chat-completion client with an ``adapter_id`` request extension.

    Wire format (documented bit-exactly in the README): request body
    ``{"messages": [{"role", "content"}...], "adapter_id", "max_tokens",
    "temperature"}``; response body ``{"text", "usage": {"prompt_tokens",
    "completion_tokens"}}``. Missing usage falls back to the whitespace +
    punctuation estimator.
    """

    def __init__(
        self,
        endpoint: str,
        auth_token: str | None = None,
        deadline_s: float = 30.0,
        retry: RetryPolicy | None = None,
        backend_id: str = "http",
    ):
        self.endpoint = endpoint
        self.deadline_s = deadline_s
        self.retry = retry or RetryPolicy()
        self.backend_id = backend_id
        headers = {"content-type": "application/json"}
        if auth_token:
            headers["authorization"] = f"Bearer {auth_token}"
        self._client = httpx.Client(timeout=deadline_s, headers=headers)

    def complete(self, req: ChatRequest) -> ChatResponse:
        body = {
            "messages": [{"role": "system", "content": req.system}]
            + [{"role": role, "content": text} for role, text in req.messages],
            "adapter_id": req.adapter_id,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        start = time.monotonic()
        last_exc: Exception | None = None
        for attempt in range(self.retry.max_attempts):
            try:
                resp = self._client.post(self.endpoint, json=body)
            except httpx.TimeoutException as exc:
                raise BackendTimeout(f"deadline {self.deadline_s}s exceeded") from exc
            except httpx.HTTPError as exc:
                raise BackendError(str(exc)) from exc
            if resp.status_code == 429:
                last_exc = RateLimited("backend rate limited")
                time.sleep(self.retry.base_delay_s * (2**attempt))
                continue
            if resp.status_code == 404 and req.adapter_id:
                raise UnknownAdapter(f"adapter {req.adapter_id!r} unknown to backend")
            if resp.status_code >= 400:
                raise BackendError(f"backend returned HTTP {resp.status_code}")
            return self._parse(resp, req, start)
        raise last_exc or BackendError("retries exhausted")

    def _parse(self, resp: httpx.Response, req: ChatRequest, start: float) -> ChatResponse:
        try:
            doc = resp.json()
            text = doc["text"]
        except (ValueError, KeyError) as exc:
            raise MalformedResponse(f"unparsable backend response: {exc}") from exc
        usage = doc.get("usage") or {}
        return ChatResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", estimate_tokens(req.prompt_text()))),
            completion_tokens=int(usage.get("completion_tokens", estimate_tokens(text))),
            backend_id=self.backend_id,
            latency_ms=(time.monotonic() - start) * 1000.0,
        )


Rule = tuple[str | Callable[[ChatRequest], bool], str | Callable[[ChatRequest], str]]


class MockChatBackend:
    """Deterministic scriptable backend for offline runs and tests.

    Resolution order per request: exact fingerprint script, then the first
    matching rule (substring of the last user message, or a predicate),
    then the default text. Latency is synthetic but deterministic:
    prompt tokens + completion tokens, in milliseconds.
    """

    def __init__(
        self,
        script: Mapping[str, str] | None = None,
        rules: Sequence[Rule] | None = None,
        default: str = "ok",
        backend_id: str = "mock",
    ):
        self.script = dict(script or {})
        self.rules = list(rules or [])
        self.default = default
        self.backend_id = backend_id
        self.transcript: list[ChatRequest] = []
        self._lock = threading.Lock()

    def _resolve(self, req: ChatRequest) -> str:
        fp = req.fingerprint()
        if fp in self.script:
            return self.script[fp]
        last_user = req.messages[-1][1]
        for matcher, responder in self.rules:
            matched = matcher(req) if callable(matcher) else (matcher in last_user)
            if matched:
                return responder(req) if callable(responder) else responder
        return self.default

    def complete(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            self.transcript.append(req)
        text = self._resolve(req)
        prompt_tokens = estimate_tokens(req.prompt_text())
        completion_tokens = estimate_tokens(text)
        return ChatResponse(
            text=text,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            backend_id=self.backend_id,
            latency_ms=float(prompt_tokens + completion_tokens),
        )
