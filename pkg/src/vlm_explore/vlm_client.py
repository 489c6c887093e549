"""Chat-session transport for a remote vision-language model, plus a scripted mock.

Wire format (generic adapter), one HTTP POST per turn::

    {"model": "...",
     "messages": [{"role": "user"|"model",
                   "parts": [{"type": "text", "text": "..."} |
                             {"type": "image", "media_type": "image/png", "data": "<base64>"}]}]}

The endpoint answers ``{"text": "..."}`` (or ``{"message": {"parts": [...]}}``).
HTTP endpoints are stateless, so every request replays the whole session
history.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Union

import httpx

from .errors import BadConfig, Timeout, TransportError

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_MODEL = "gemini-2.5-pro"
MOCK_SCHEME = "mock:"


# ---------------------------------------------------------------------------
# message parts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TextPart:
    text: str

    def to_wire(self) -> dict:
        return {"type": "text", "text": self.text}


@dataclass(frozen=True)
class ImagePart:
    data: bytes
    media_type: str = "image/png"

    def to_wire(self) -> dict:
        return {
            "type": "image",
            "media_type": self.media_type,
            "data": base64.b64encode(self.data).decode("ascii"),
        }


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class ChatTurnRequest:
    parts: tuple[Part, ...]

    def __post_init__(self):
        if not self.parts:
            raise ValueError("a chat turn needs at least one part")


@dataclass(frozen=True)
class ChatTurnReply:
    text: str
    latency: float = 0.0
    attempts: int = 1
    usage: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 2
    backoff: tuple[float, ...] = (1.0, 2.0)

    def delay(self, retry_index: int) -> float:
        if not self.backoff:
            return 0.0
        return self.backoff[min(retry_index, len(self.backoff) - 1)]


@dataclass(frozen=True)
class VLMConfig:
    endpoint: str
    model: str = DEFAULT_MODEL
    api_key: str | None = field(default=None, repr=False)
    timeout: float = DEFAULT_TIMEOUT_S

    @classmethod
    def from_env(cls, environ=None) -> "VLMConfig":
        env = os.environ if environ is None else environ
        endpoint = env.get("VLM_ENDPOINT")
        if not endpoint:
            raise BadConfig("VLM_ENDPOINT is not set")
        try:
            timeout = float(env.get("VLM_TIMEOUT_S", DEFAULT_TIMEOUT_S))
        except ValueError as exc:
            raise BadConfig("VLM_TIMEOUT_S must be a number") from exc
        return cls(endpoint, env.get("VLM_MODEL", DEFAULT_MODEL), env.get("VLM_API_KEY"), timeout)

    def redacted(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "model": self.model,
            "api_key": "***" if self.api_key else None,
            "timeout": self.timeout,
        }


def wire_message(role: str, parts: Iterable[Part]) -> dict:
    return {"role": role, "parts": [p.to_wire() for p in parts]}


def build_payload(model: str, history: list[tuple[str, tuple[Part, ...]]]) -> dict:
    return {"model": model, "messages": [wire_message(role, parts) for role, parts in history]}


def reply_text(body) -> str:
    """Pull the reply text out of a generic-shape response body."""
    if not isinstance(body, dict):
        raise TransportError("response body is not a JSON object")
    if isinstance(body.get("text"), str):
        return body["text"]
    message = body.get("message")
    if isinstance(message, dict) and isinstance(message.get("parts"), list):
        texts = [p.get("text") for p in message["parts"] if isinstance(p, dict) and p.get("type") == "text"]
        if texts and all(isinstance(t, str) for t in texts):
            return "".join(texts)
    raise TransportError("response body has no reply text")


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------


class HttpTransport:
    """Generic JSON-over-HTTP adapter."""

    def __init__(self, endpoint: str, api_key: str | None, timeout: float):
        self.endpoint = endpoint
        self._api_key = api_key
        self.timeout = timeout

    def post(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        try:
            resp = httpx.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        except httpx.TimeoutException as exc:
            raise Timeout(f"no reply within {self.timeout} s") from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError("response is not JSON") from exc


class GeminiTransport(HttpTransport):
    """Adapter for the Gemini ``generateContent`` REST endpoint."""

    def post(self, payload: dict) -> dict:
        contents = []
        for msg in payload["messages"]:
            parts = []
            for p in msg["parts"]:
                if p["type"] == "text":
                    parts.append({"text": p["text"]})
                else:
                    parts.append({"inline_data": {"mime_type": p["media_type"], "data": p["data"]}})
            contents.append({"role": msg["role"], "parts": parts})
        url = f"{self.endpoint.rstrip('/')}/models/{payload['model']}:generateContent"
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["x-goog-api-key"] = self._api_key
        try:
            resp = httpx.post(url, json={"contents": contents}, headers=headers, timeout=self.timeout)
        except httpx.TimeoutException as exc:
            raise Timeout(f"no reply within {self.timeout} s") from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}")
        try:
            data = resp.json()
            parts = data["candidates"][0]["content"]["parts"]
            return {"text": "".join(p.get("text", "") for p in parts), "usage": data.get("usageMetadata", {})}
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError("unexpected Gemini response shape") from exc


# mock behaviors
@dataclass(frozen=True)
class Reply:
    text: str


@dataclass(frozen=True)
class TimeoutBehavior:
    pass


@dataclass(frozen=True)
class Malformed:
    pass


Behavior = Union[Reply, TimeoutBehavior, Malformed]


def parse_behavior(obj) -> Behavior:
    if isinstance(obj, str):
        return Reply(obj)
    if not isinstance(obj, dict):
        raise BadConfig(f"bad mock script entry: {obj!r}")
    if "reply" in obj:
        return Reply(str(obj["reply"]))
    kind = obj.get("behavior") or next((k for k in ("timeout", "malformed") if obj.get(k)), None)
    if kind == "timeout":
        return TimeoutBehavior()
    if kind == "malformed":
        return Malformed()
    raise BadConfig(f"bad mock script entry: {obj!r}")


class MockServer:
    """In-process stand-in for a chat endpoint.

    Behaviors are consumed in order, one per received request.  Once the
    script runs out every request gets a malformed body.  ``cycle=True``
    replays the script forever instead.
    """

    def __init__(self, script: Iterable = (), cycle: bool = False):
        self.script = [b if isinstance(b, (Reply, TimeoutBehavior, Malformed)) else parse_behavior(b)
                       for b in script]
        self.cycle = cycle
        self.requests: list[dict] = []
        self.transcript: list[dict] = []
        self._pos = 0

    @classmethod
    def from_file(cls, path: str | Path, cycle: bool = False) -> "MockServer":
        entries = []
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                entries.append(parse_behavior(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise BadConfig(f"{path}:{line_no}: not JSON") from exc
        return cls(entries, cycle=cycle)

    def _next(self) -> Behavior:
        if self.cycle and self.script:
            b = self.script[self._pos % len(self.script)]
        elif self._pos < len(self.script):
            b = self.script[self._pos]
        else:
            b = Malformed()
        self._pos += 1
        return b

    def post(self, payload: dict) -> dict:
        self.requests.append(payload)
        b = self._next()
        if isinstance(b, TimeoutBehavior):
            self.transcript.append({"request": payload, "reply": {"error": "timeout"}})
            raise Timeout("mock timeout")
        body = {"text": b.text} if isinstance(b, Reply) else {"garbage": True}
        self.transcript.append({"request": payload, "reply": body})
        return body

    def dump_transcript(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for pair in self.transcript:
                fh.write(json.dumps(pair, sort_keys=True) + "\n")


def mock_server(script: Iterable = (), cycle: bool = False) -> MockServer:
    return MockServer(script, cycle=cycle)


# ---------------------------------------------------------------------------
# session
# ---------------------------------------------------------------------------


class ChatSession:
    """Persistent multi-turn conversation; one request in flight at a time."""

    def __init__(self, config: VLMConfig, transport, retry: RetryPolicy = RetryPolicy(),
                 sleep: Callable[[float], None] = time.sleep, clock: Callable[[], float] = time.monotonic):
        self.config = config
        self.transport = transport
        self.retry = retry
        self.history: list[tuple[str, tuple[Part, ...]]] = []
        self._sleep = sleep
        self._clock = clock
        self._busy = False

    @property
    def endpoint(self) -> str:
        return self.config.endpoint

    @property
    def model(self) -> str:
        return self.config.model

    def send(self, request: ChatTurnRequest) -> ChatTurnReply:
        if self._busy:
            raise TransportError("a request is already in flight on this session")
        self._busy = True
        try:
            return self._send(request)
        finally:
            self._busy = False

    def _send(self, request: ChatTurnRequest) -> ChatTurnReply:
        payload = build_payload(self.model, self.history + [("user", tuple(request.parts))])
        t0 = self._clock()
        attempt = 0
        while True:
            attempt += 1
            try:
                body = self.transport.post(payload)
                text = reply_text(body)
                break
            except TransportError as exc:
                retries_done = attempt - 1
                if retries_done >= self.retry.max_retries:
                    log.warning("chat turn failed after %d attempts: %s", attempt, exc)
                    raise
                delay = self.retry.delay(retries_done)
                log.info("chat turn attempt %d failed (%s); retrying in %.1f s", attempt, exc, delay)
                self._sleep(delay)
        self.history.append(("user", tuple(request.parts)))
        self.history.append(("model", (TextPart(text),)))
        usage = body.get("usage", {}) if isinstance(body, dict) else {}
        return ChatTurnReply(text, self._clock() - t0, attempt, usage)


def open_session(config: VLMConfig | None = None, *, mock: MockServer | None = None,
                 retry: RetryPolicy = RetryPolicy(), sleep: Callable[[float], None] = time.sleep) -> ChatSession:
    """Open an empty session for ``config`` (read from the environment when omitted)."""
    if config is None:
        config = VLMConfig.from_env()
    endpoint = config.endpoint
    if endpoint.startswith(MOCK_SCHEME):
        if mock is None:
            script = endpoint[len(MOCK_SCHEME):].strip()
            mock = MockServer.from_file(script) if script else MockServer()
        return ChatSession(config, mock, retry, sleep)
    if not endpoint.startswith(("http://", "https://")):
        raise BadConfig(f"unsupported endpoint scheme: {endpoint!r}")
    if not config.api_key:
        raise BadConfig("VLM_API_KEY is required for remote endpoints")
    if "generativelanguage.googleapis.com" in endpoint:
        transport = GeminiTransport(endpoint, config.api_key, config.timeout)
    else:
        transport = HttpTransport(endpoint, config.api_key, config.timeout)
    return ChatSession(config, transport, retry, sleep)


def send_turn(session: ChatSession, request: ChatTurnRequest) -> ChatTurnReply:
    return session.send(request)
