"""Chat-completion gateway with live, record, and replay modes.

Transcript format (one JSON file per request digest, ``<digest>.json``)::

    {
      "schema_version": 1,
      "request_digest": "<sha256 hex of the canonical request>",
      "request": {...canonical request...},
      "response": {"content": str | null, "tool_calls": [...], "finish_reason": str},
      "attempts": int,
      "latency_s": float,
      "created_at": "<ISO-8601 UTC>"
    }

The store is append-only: a digest that already has a record is never
overwritten.
"""

from __future__ import annotations

import collections
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

from .errors import ConfigError, GatewayTimeout, ReplayMiss, TransientUpstream, UpstreamError
from .model import write_text_atomic

log = logging.getLogger(__name__)

TRANSCRIPT_SCHEMA_VERSION = 1
MODES = ("live", "record", "replay")
ROLES = ("system", "user", "assistant", "tool")
REASONING_EFFORTS = ("low", "medium", "high")
TRANSIENT_STATUSES = frozenset({429, 500, 502, 503, 504})


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _clean_message(m: Mapping[str, Any]) -> dict[str, Any]:
    if m.get("role") not in ROLES:
        raise ValueError(f"invalid message role {m.get('role')!r}")
    out = {k: v for k, v in m.items() if v is not None}
    out.setdefault("content", "")
    return out


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[Mapping[str, Any], ...]
    temperature: float | None = 0.0
    max_output_tokens: int | None = None
    reasoning_effort: str | None = None
    tools: tuple[Mapping[str, Any], ...] | None = None

    def __post_init__(self):
        msgs = tuple(_clean_message(m) for m in self.messages)
        if not msgs:
            raise ValueError("messages must be nonempty")
        object.__setattr__(self, "messages", msgs)
        if self.temperature is not None:
            if self.temperature < 0:
                raise ValueError("temperature must be >= 0")
            object.__setattr__(self, "temperature", float(self.temperature))
        if self.reasoning_effort is not None and self.reasoning_effort not in REASONING_EFFORTS:
            raise ValueError(f"reasoning_effort must be one of {REASONING_EFFORTS}")
        if self.tools is not None:
            object.__setattr__(self, "tools", tuple(self.tools))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"model_id": self.model_id, "messages": [dict(m) for m in self.messages]}
        if self.temperature is not None:
            d["temperature"] = self.temperature
        if self.max_output_tokens is not None:
            d["max_output_tokens"] = self.max_output_tokens
        if self.reasoning_effort is not None:
            d["reasoning_effort"] = self.reasoning_effort
        if self.tools:
            d["tools"] = [dict(t) for t in self.tools]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ChatRequest":
        return cls(
            model_id=d["model_id"],
            messages=tuple(d["messages"]),
            temperature=d.get("temperature"),
            max_output_tokens=d.get("max_output_tokens"),
            reasoning_effort=d.get("reasoning_effort"),
            tools=tuple(d["tools"]) if d.get("tools") else None,
        )


def canonical_digest(request: "ChatRequest | Mapping[str, Any] | str") -> str:
    """SHA-256 over the canonical JSON form of a request.

    Key order and insignificant whitespace of a serialized request do not
    change the digest; any content or parameter change does.
    """
    if isinstance(request, str):
        request = json.loads(request)
    if not isinstance(request, ChatRequest):
        request = ChatRequest.from_dict(request)
    return hashlib.sha256(canonical_json(request.to_dict()).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    content: str | None
    tool_calls: tuple[Mapping[str, Any], ...] = ()
    finish_reason: str = "stop"

    def to_dict(self) -> dict[str, Any]:
        return {"content": self.content, "tool_calls": [dict(t) for t in self.tool_calls],
                "finish_reason": self.finish_reason}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ChatResponse":
        return cls(d.get("content"), tuple(d.get("tool_calls") or ()), d.get("finish_reason") or "stop")


@dataclass(frozen=True)
class TranscriptRecord:
    request_digest: str
    request: Mapping[str, Any]
    response: ChatResponse
    attempts: int = 1
    latency_s: float = 0.0
    created_at: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": TRANSCRIPT_SCHEMA_VERSION,
            "request_digest": self.request_digest,
            "request": dict(self.request),
            "response": self.response.to_dict(),
            "attempts": self.attempts,
            "latency_s": self.latency_s,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TranscriptRecord":
        version = d.get("schema_version", TRANSCRIPT_SCHEMA_VERSION)
        if version != TRANSCRIPT_SCHEMA_VERSION:
            raise ValueError(f"unsupported transcript schema_version {version}")
        return cls(
            request_digest=d["request_digest"],
            request=d["request"],
            response=ChatResponse.from_dict(d["response"]),
            attempts=d.get("attempts", 1),
            latency_s=d.get("latency_s", 0.0),
            created_at=d.get("created_at", ""),
        )


class TranscriptStore:
    """Append-only directory of transcript records keyed by request digest."""

    def __init__(self, root: "str | Path"):
        self.root = Path(root)
        self._cache: dict[str, TranscriptRecord] = {}
        self._write_lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.root / f"{digest}.json"

    def get(self, digest: str) -> TranscriptRecord | None:
        rec = self._cache.get(digest)
        if rec is None:
            path = self._path(digest)
            if not path.exists():
                return None
            rec = TranscriptRecord.from_dict(json.loads(path.read_text(encoding="utf-8")))
            self._cache[digest] = rec
        return rec

    def __contains__(self, digest: str) -> bool:
        return self.get(digest) is not None

    def put(self, record: TranscriptRecord) -> bool:
        """Persist a record; returns False when the digest was already stored."""
        with self._write_lock:
            if self.get(record.request_digest) is not None:
                return False
            write_text_atomic(self._path(record.request_digest),
                              json.dumps(record.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n")
            self._cache[record.request_digest] = record
            return True

    def add(self, request: ChatRequest, response: ChatResponse | Mapping[str, Any]) -> str:
        """Author a record by hand (scripted fixtures, golden transcripts)."""
        if not isinstance(response, ChatResponse):
            response = ChatResponse.from_dict(response)
        digest = canonical_digest(request)
        self.put(TranscriptRecord(digest, request.to_dict(), response, created_at=_now()))
        return digest

    def digests(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))


class Backend(Protocol):
    def __call__(self, request: ChatRequest) -> ChatResponse: ...


class HttpBackend:
    """Chat-completions over HTTP JSON with a configurable endpoint and auth header."""

    def __init__(
        self,
        base_url: str,
        path: str = "/chat/completions",
        api_key: str | None = None,
        auth_header: str = "Authorization",
        auth_scheme: str | None = "Bearer",
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
        extra_headers: Mapping[str, str] | None = None,
    ):
        headers = {"Content-Type": "application/json", **(extra_headers or {})}
        if api_key:
            headers[auth_header] = f"{auth_scheme} {api_key}" if auth_scheme else api_key
        self.url = base_url.rstrip("/") + "/" + path.lstrip("/")
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    @staticmethod
    def payload(request: ChatRequest) -> dict[str, Any]:
        body: dict[str, Any] = {"model": request.model_id, "messages": [dict(m) for m in request.messages]}
        if request.temperature is not None:
            body["temperature"] = request.temperature
        if request.max_output_tokens is not None:
            body["max_completion_tokens"] = request.max_output_tokens
        if request.reasoning_effort is not None:
            body["reasoning_effort"] = request.reasoning_effort
        if request.tools:
            body["tools"] = [dict(t) for t in request.tools]
        return body

    def __call__(self, request: ChatRequest) -> ChatResponse:
        try:
            resp = self._client.post(self.url, json=self.payload(request))
        except httpx.TimeoutException as exc:
            raise TransientUpstream(None, str(exc), timeout=True) from None
        except httpx.TransportError as exc:
            raise TransientUpstream(None, str(exc)) from None
        if resp.status_code in TRANSIENT_STATUSES:
            raise TransientUpstream(resp.status_code, resp.text[:200])
        if resp.status_code >= 400:
            raise UpstreamError(resp.status_code, 1, resp.text[:200])
        try:
            choice = resp.json()["choices"][0]
            message = choice["message"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise UpstreamError(resp.status_code, 1, "malformed chat-completion body") from None
        return ChatResponse(
            content=message.get("content"),
            tool_calls=tuple(message.get("tool_calls") or ()),
            finish_reason=choice.get("finish_reason") or "stop",
        )

    def close(self) -> None:
        self._client.close()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class Gateway:
    """Uniform ``complete`` over a live backend or a transcript store.

    live: backend call with bounded, jittered exponential backoff on
    transient failures (429, 5xx, timeouts, connection errors).
    record: live plus transcript persistence. replay: lookup by digest only.
    """

    def __init__(
        self,
        mode: str = "replay",
        backend: Backend | None = None,
        transcripts: "TranscriptStore | str | Path | None" = None,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        backoff_max: float = 8.0,
        jitter_seed: int | None = 0,
        max_in_flight: int = 8,
        requests_per_minute: int | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        if isinstance(transcripts, (str, Path)):
            transcripts = TranscriptStore(transcripts)
        if mode in ("record", "replay") and transcripts is None:
            raise ConfigError(f"{mode} mode needs a transcript directory")
        if mode in ("live", "record") and backend is None:
            raise ConfigError(f"{mode} mode needs a backend")
        self.mode = mode
        self.backend = backend
        self.transcripts = transcripts
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_max = backoff_max
        self._rng = random.Random(jitter_seed)
        self._rng_lock = threading.Lock()
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self.requests_per_minute = requests_per_minute
        self._sent: collections.deque[float] = collections.deque()
        self._rate_lock = threading.Lock()
        self._sleep = sleep
        self._clock = clock

    def complete(self, request: ChatRequest) -> ChatResponse:
        return self.complete_record(request).response

    def complete_record(self, request: ChatRequest) -> TranscriptRecord:
        digest = canonical_digest(request)
        if self.mode == "replay":
            rec = self.transcripts.get(digest)
            if rec is None:
                raise ReplayMiss(digest)
            return rec
        with self._sem:
            start = time.perf_counter()
            response, attempts = self._call_with_retry(request)
            latency = time.perf_counter() - start
        rec = TranscriptRecord(digest, request.to_dict(), response, attempts, round(latency, 6), _now())
        if self.mode == "record":
            self.transcripts.put(rec)
        return rec

    def _backoff(self, attempt: int) -> float:
        delay = min(self.backoff_max, self.backoff_base * 2 ** (attempt - 1))
        with self._rng_lock:
            return delay * (0.5 + 0.5 * self._rng.random())

    def _throttle(self) -> None:
        if not self.requests_per_minute:
            return
        with self._rate_lock:
            now = self._clock()
            while self._sent and now - self._sent[0] >= 60.0:
                self._sent.popleft()
            if len(self._sent) >= self.requests_per_minute:
                self._sleep(60.0 - (now - self._sent[0]))
                self._sent.popleft()
            self._sent.append(self._clock())

    def _call_with_retry(self, request: ChatRequest) -> tuple[ChatResponse, int]:
        last: TransientUpstream | None = None
        for attempt in range(1, self.max_attempts + 1):
            self._throttle()
            try:
                response = self.backend(request)
            except TransientUpstream as exc:
                last = exc
                log.warning("transient upstream failure (status=%s) on attempt %d/%d",
                            exc.status, attempt, self.max_attempts)
                if attempt < self.max_attempts:
                    self._sleep(self._backoff(attempt))
                continue
            except UpstreamError as exc:
                raise UpstreamError(exc.status, attempt, str(exc)) from None
            if attempt > 1:
                log.info("upstream succeeded after attempts=%d", attempt)
            return response, attempt
        assert last is not None
        if last.timeout:
            raise GatewayTimeout(self.max_attempts)
        raise UpstreamError(last.status, self.max_attempts, "retry budget exhausted")


@dataclass
class GatewayConfig:
    mode: str = "replay"
    transcript_dir: str | None = None
    backend: str = "http"  # http | scripted
    base_url: str | None = None
    path: str = "/chat/completions"
    auth_header: str = "Authorization"
    auth_scheme: str | None = "Bearer"
    api_key_env: str = "TUMORBOARD_LLM_API_KEY"
    timeout_s: float = 120.0
    max_attempts: int = 3
    max_in_flight: int = 8
    requests_per_minute: int | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_env(cls, environ: Mapping[str, str] | None = None, **overrides: Any) -> "GatewayConfig":
        env = os.environ if environ is None else environ
        cfg = cls(
            mode=env.get("TUMORBOARD_LLM_MODE", "replay"),
            transcript_dir=env.get("TUMORBOARD_TRANSCRIPT_DIR"),
            backend=env.get("TUMORBOARD_LLM_BACKEND", "http"),
            base_url=env.get("TUMORBOARD_LLM_BASE_URL"),
            path=env.get("TUMORBOARD_LLM_PATH", "/chat/completions"),
            auth_header=env.get("TUMORBOARD_LLM_AUTH_HEADER", "Authorization"),
            api_key_env=env.get("TUMORBOARD_LLM_API_KEY_ENV", "TUMORBOARD_LLM_API_KEY"),
        )
        for k, v in overrides.items():
            if v is not None:
                setattr(cfg, k, v)
        return cfg


def build_gateway(config: GatewayConfig, backend: Backend | None = None,
                  environ: Mapping[str, str] | None = None) -> Gateway:
    env = os.environ if environ is None else environ
    if backend is None and config.mode != "replay":
        if config.backend == "scripted":
            from .scripted import ScriptedModel

            backend = ScriptedModel()
        elif config.backend == "http":
            if not config.base_url:
                raise ConfigError("live/record mode with the http backend needs base_url")
            backend = HttpBackend(
                config.base_url,
                path=config.path,
                api_key=env.get(config.api_key_env),
                auth_header=config.auth_header,
                auth_scheme=config.auth_scheme,
                timeout=config.timeout_s,
            )
        else:
            raise ConfigError(f"unknown backend {config.backend!r}")
    return Gateway(
        mode=config.mode,
        backend=backend,
        transcripts=config.transcript_dir,
        max_attempts=config.max_attempts,
        max_in_flight=config.max_in_flight,
        requests_per_minute=config.requests_per_minute,
    )


def user_message(content: str) -> dict[str, str]:
    return {"role": "user", "content": content}


def system_message(content: str) -> dict[str, str]:
    return {"role": "system", "content": content}


def digest_of_digests(digests: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(digests).encode("ascii")).hexdigest()
