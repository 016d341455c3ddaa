"""Chat-completion backends: live HTTP, record, replay, and a base for simulation.

Every request is canonicalized and hashed; a per-digest repetition counter
distinguishes the k-th issue of an identical request from the first, so
recorded runs preserve independent draws and replayed runs hand them back in
the same order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Final, Literal, Mapping, Sequence

import httpx

from mavlab.core import SamplingParams

__all__ = [
    "AuthError",
    "BackendError",
    "CassetteMiss",
    "ChatBackend",
    "ChatRequest",
    "ChatResponse",
    "LiveBackend",
    "LiveSettings",
    "NetworkError",
    "RecordBackend",
    "ReplayBackend",
    "cassette_key",
    "read_cassette",
]

logger = logging.getLogger(__name__)

Purpose = Literal["generation", "verification", "scalar_reward"]

_PURPOSES: Final = ("generation", "verification", "scalar_reward")


class BackendError(Exception):
    """Base class for request failures a caller may want to handle per slot."""


class NetworkError(BackendError):
    """The provider could not be reached or kept failing after retries."""


class AuthError(BackendError):
    """Credentials are missing or were rejected; retrying cannot help."""


class CassetteMiss(BackendError):
    """Replay was asked for a request the cassette never recorded."""


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call: prompts plus sampling plus a purpose tag."""

    model: str
    user_prompt: str
    system_prompt: str | None = None
    sampling: SamplingParams = field(default_factory=SamplingParams)
    purpose: Purpose = "generation"
    verifier_id: str | None = None

    def __post_init__(self) -> None:
        if not self.model.strip():
            raise ValueError("model must be non-empty")
        if not self.user_prompt:
            raise ValueError("user_prompt must be non-empty")
        if self.purpose not in _PURPOSES:
            raise ValueError(f"unknown purpose {self.purpose!r}")

    def canonical(self) -> str:
        """Stable JSON form of the request, insensitive to field ordering."""
        payload = {
            "model": self.model,
            "system_prompt": self.system_prompt,
            "user_prompt": self.user_prompt,
            "temperature": self.sampling.temperature,
            "max_tokens": self.sampling.max_tokens,
            "seed": self.sampling.seed,
            "purpose": self.purpose,
            "verifier_id": self.verifier_id,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    provider_meta: Mapping[str, str] = field(default_factory=dict)
    cache_hit: bool = False


def cassette_key(digest: str, rep: int) -> str:
    return f"{digest}#{rep}"


def read_cassette(path: str | Path) -> dict[str, dict]:
    """Load a cassette file into a key-to-response mapping."""
    entries: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                key = record["key"]
                response = record["response"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise CassetteMiss(f"{path}:{line_no}: corrupt cassette line ({exc})") from None
            entries[key] = response
    return entries


class ChatBackend(ABC):
    """Base backend: repetition bookkeeping, batch fan-out, request counting."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._rep_counts: dict[str, int] = {}
        self._requests_issued = 0

    @property
    def requests_issued(self) -> int:
        """Logical completions issued so far, including any caller-level retries."""
        return self._requests_issued

    def _next_rep(self, digest: str) -> int:
        with self._lock:
            rep = self._rep_counts.get(digest, 0)
            self._rep_counts[digest] = rep + 1
            self._requests_issued += 1
            return rep

    def complete(self, request: ChatRequest) -> ChatResponse:
        rep = self._next_rep(request.digest)
        return self._execute(request, rep)

    def complete_batch(
        self, requests: Sequence[ChatRequest], max_in_flight: int = 8
    ) -> list[ChatResponse | BackendError]:
        """Issue many requests, preserving order; failed slots hold the error.

        Repetition counters are assigned up front in list order, so results
        are identical whatever the concurrency level.
        """
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        reps = [self._next_rep(request.digest) for request in requests]

        def run_one(pair: tuple[ChatRequest, int]) -> ChatResponse | BackendError:
            request, rep = pair
            try:
                return self._execute(request, rep)
            except BackendError as exc:
                logger.warning("request failed: %s", exc)
                return exc

        work = list(zip(requests, reps))
        if max_in_flight == 1 or len(work) <= 1:
            return [run_one(pair) for pair in work]
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            return list(pool.map(run_one, work))

    @abstractmethod
    def _execute(self, request: ChatRequest, rep: int) -> ChatResponse:
        """Produce the response for the ``rep``-th issue of this exact request."""


class _TokenBucket:
    """Simple token bucket; acquire blocks until a token is available."""

    def __init__(self, rate_per_s: float) -> None:
        if rate_per_s <= 0:
            raise ValueError("rate must be positive")
        self._rate = rate_per_s
        self._capacity = max(1.0, rate_per_s)
        self._tokens = self._capacity
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self._capacity, self._tokens + (now - self._stamp) * self._rate)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            time.sleep(wait)


@dataclass(frozen=True)
class LiveSettings:
    """Connection settings for an OpenAI-compatible chat-completions endpoint."""

    endpoint: str
    api_key_env: str = "OPENAI_API_KEY"
    max_attempts: int = 3
    backoff_base_s: float = 0.5
    backoff_factor: float = 2.0
    rate_limit_per_s: float = 4.0
    timeout_s: float = 120.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")


_RETRYABLE_STATUS: Final = frozenset({408, 409, 429, 500, 502, 503, 504})


class LiveBackend(ChatBackend):
    """Talks to a chat-completions endpoint with bearer auth, rate limiting,
    and bounded exponential backoff."""

    def __init__(self, settings: LiveSettings, transport: httpx.BaseTransport | None = None):
        super().__init__()
        self._settings = settings
        self._bucket = _TokenBucket(settings.rate_limit_per_s)
        self._client = httpx.Client(
            base_url=settings.endpoint.rstrip("/"),
            timeout=settings.timeout_s,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def _api_key(self) -> str:
        key = os.environ.get(self._settings.api_key_env, "")
        if not key:
            raise AuthError(
                f"environment variable {self._settings.api_key_env} is unset or empty"
            )
        return key

    def _execute(self, request: ChatRequest, rep: int) -> ChatResponse:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.user_prompt})
        body = {
            "model": request.model,
            "messages": messages,
            "temperature": request.sampling.temperature,
            "max_tokens": request.sampling.max_tokens,
        }
        if request.sampling.seed is not None:
            body["seed"] = request.sampling.seed
        headers = {"Authorization": f"Bearer {self._api_key()}"}

        last_error = "no attempt made"
        for attempt in range(self._settings.max_attempts):
            if attempt:
                delay = self._settings.backoff_base_s * (
                    self._settings.backoff_factor ** (attempt - 1)
                )
                logger.info("retrying in %.2fs (attempt %d)", delay, attempt + 1)
                time.sleep(delay)
            self._bucket.acquire()
            try:
                response = self._client.post("/chat/completions", json=body, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code in (401, 403):
                raise AuthError(f"provider rejected credentials (HTTP {response.status_code})")
            if response.status_code in _RETRYABLE_STATUS:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code != 200:
                raise NetworkError(f"unexpected HTTP {response.status_code}: {response.text[:200]}")
            try:
                payload = response.json()
                text = payload["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise NetworkError(f"malformed provider response: {exc}") from exc
            meta = {
                "provider_model": str(payload.get("model", "")),
                "response_id": str(payload.get("id", "")),
            }
            return ChatResponse(text=text, provider_meta=meta, cache_hit=False)
        raise NetworkError(
            f"gave up after {self._settings.max_attempts} attempts; last error: {last_error}"
        )


class RecordBackend(ChatBackend):
    """Wraps another backend and appends every exchange to a cassette file."""

    def __init__(self, inner: ChatBackend, cassette_path: str | Path) -> None:
        super().__init__()
        self._inner = inner
        self._path = Path(cassette_path)
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def _execute(self, request: ChatRequest, rep: int) -> ChatResponse:
        response = self._inner._execute(request, rep)
        record = {
            "key": cassette_key(request.digest, rep),
            "digest": request.digest,
            "rep": rep,
            "request": json.loads(request.canonical()),
            "response": {
                "text": response.text,
                "provider_meta": dict(response.provider_meta),
            },
        }
        line = json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
        with self._write_lock, open(self._path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        return response


class ReplayBackend(ChatBackend):
    """Serves responses from a cassette; the i-th identical request gets the
    i-th recorded draw. Unknown requests raise ``CassetteMiss``."""

    def __init__(self, cassette_path: str | Path) -> None:
        super().__init__()
        self._path = Path(cassette_path)
        self._entries = read_cassette(self._path)

    def _execute(self, request: ChatRequest, rep: int) -> ChatResponse:
        key = cassette_key(request.digest, rep)
        entry = self._entries.get(key)
        if entry is None:
            raise CassetteMiss(
                f"cassette {self._path.name} has no entry for repetition {rep} of "
                f"request {request.digest[:12]} ({request.purpose})"
            )
        return ChatResponse(
            text=entry.get("text", ""),
            provider_meta=dict(entry.get("provider_meta", {})),
            cache_hit=True,
        )
