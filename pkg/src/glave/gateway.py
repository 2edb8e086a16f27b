"""Chat-completion gateway: the single egress point for every model call.

Three transports share one calling convention. `live` talks to an HTTP
chat-completion endpoint with retries and bounded concurrency, `record`
does the same and writes a fixture per request digest, `replay` serves
fixtures only and treats a miss as a hard error. Requests are content
addressed: the digest covers model, message parts (image bytes included),
temperature, and max_tokens, but never the audit tag.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import httpx

from .errors import (
    ConfigError,
    FixtureMissingError,
    SchemaValidationError,
    StructuredOutputError,
    TransportError,
)
from .raster import RasterRef, bounded_resize, load_image, png_bytes

RETRYABLE_STATUS = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    data: bytes  # PNG

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


Part = Union[TextPart, ImagePart]


def image_part(image: RasterRef, max_side: int = 1024) -> ImagePart:
    return ImagePart(data=png_bytes(bounded_resize(load_image(image), max_side)))


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    messages: tuple[Part, ...]
    temperature: float = 0.0
    max_tokens: int = 2048
    tag: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("request needs at least one message part")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def image_count(self) -> int:
        return sum(1 for p in self.messages if isinstance(p, ImagePart))

    def prompt_text(self) -> str:
        return "\n".join(p.text for p in self.messages if isinstance(p, TextPart))


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: dict
    cached: bool
    attempts: int


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    tag: str
    cache_key: str
    transport: str
    cached: bool


def canonical_parts(request: ChatRequest) -> list[dict]:
    """Digest-stable view of the message list; image bytes reduced to their
    own sha256 so fixtures can re-derive the key without the raster."""
    parts = []
    for p in request.messages:
        if isinstance(p, TextPart):
            parts.append({"text": p.text})
        else:
            parts.append({"image_sha256": p.sha256})
    return parts


def cache_key(request: ChatRequest) -> str:
    doc = {
        "model": request.model_name,
        "messages": canonical_parts(request),
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def cache_key_from_canonical(model: str, parts: Sequence[dict],
                             temperature: float, max_tokens: int) -> str:
    doc = {
        "model": model,
        "messages": list(parts),
        "temperature": temperature,
        "max_tokens": max_tokens,
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class GatewayConfig:
    endpoint: str = ""
    api_key: str = ""
    model_name: str = "gpt-4o"
    transport: str = "replay"
    fixtures_dir: Path = Path("fixtures")
    max_retries: int = 3
    max_inflight: int = 4
    max_images_per_request: int = 32
    image_max_side: int = 1024
    timeout_s: float = 120.0
    backoff_base_s: float = 1.0
    backoff_factor: float = 2.0

    def __post_init__(self):
        if self.transport not in ("live", "record", "replay"):
            raise ConfigError(f"unknown transport {self.transport!r}")
        if self.max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1")


class Gateway:
    """Thread-safe; share one instance across stage workers."""

    def __init__(self, config: GatewayConfig,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self._sleep = sleep
        self._rng = random.Random()
        self._semaphore = threading.BoundedSemaphore(config.max_inflight)
        self._lock = threading.Lock()
        self._cache: dict[str, ChatResponse] = {}
        self._audit: list[AuditRecord] = []
        self._seq = 0
        self._client: Optional[httpx.Client] = None

    @property
    def audit(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._audit)

    def _record_audit(self, tag: str, key: str, cached: bool) -> None:
        with self._lock:
            self._seq += 1
            self._audit.append(
                AuditRecord(seq=self._seq, tag=tag, cache_key=key,
                            transport=self.config.transport, cached=cached)
            )

    def _fixture_path(self, key: str) -> Path:
        return Path(self.config.fixtures_dir) / f"{key}.json"

    def complete(self, request: ChatRequest) -> ChatResponse:
        if request.image_count > self.config.max_images_per_request:
            raise ConfigError(
                f"{request.image_count} images exceed the per-request cap "
                f"of {self.config.max_images_per_request}"
            )
        key = cache_key(request)
        transport = self.config.transport

        if transport == "replay":
            path = self._fixture_path(key)
            if not path.exists():
                raise FixtureMissingError(key)
            doc = json.loads(path.read_text())
            response = ChatResponse(
                text=doc["response"]["text"],
                usage=doc["response"].get("usage", {}),
                cached=True,
                attempts=1,
            )
            self._record_audit(request.tag, key, cached=True)
            return response

        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            response = ChatResponse(text=hit.text, usage=hit.usage,
                                    cached=True, attempts=1)
            self._record_audit(request.tag, key, cached=True)
            return response

        with self._semaphore:
            response = self._send_with_retries(request)
        with self._lock:
            self._cache[key] = response
        if transport == "record":
            self._write_fixture(key, request, response)
        self._record_audit(request.tag, key, cached=False)
        return response

    def _send_with_retries(self, request: ChatRequest) -> ChatResponse:
        last_error = None
        for attempt in range(1, self.config.max_retries + 2):
            try:
                text, usage = self._send(request)
                return ChatResponse(text=text, usage=usage,
                                    cached=False, attempts=attempt)
            except TransportError as err:
                last_error = err
                if not err.retryable or attempt > self.config.max_retries:
                    break
                delay = self.config.backoff_base_s * (
                    self.config.backoff_factor ** (attempt - 1)
                )
                self._sleep(delay + self._rng.uniform(0, delay * 0.1))
        raise TransportError(
            f"gave up after {self.config.max_retries + 1} attempts: {last_error}",
            retryable=False,
        )

    def _send(self, request: ChatRequest) -> tuple[str, dict]:
        content = []
        for part in request.messages:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                b64 = base64.b64encode(part.data).decode("ascii")
                content.append({
                    "type": "image_url",
                    "image_url": {"url": f"data:image/png;base64,{b64}"},
                })
        payload = {
            "model": request.model_name,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        if self._client is None:
            self._client = httpx.Client(timeout=self.config.timeout_s)
        try:
            reply = self._client.post(self.config.endpoint, json=payload,
                                      headers=headers)
        except httpx.HTTPError as err:
            raise TransportError(str(err), retryable=True) from err
        if reply.status_code != 200:
            raise TransportError(
                f"endpoint returned {reply.status_code}",
                retryable=reply.status_code in RETRYABLE_STATUS,
            )
        doc = reply.json()
        try:
            text = doc["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as err:
            raise TransportError(f"malformed completion body: {err}",
                                 retryable=False) from err
        return text, doc.get("usage", {})

    def _write_fixture(self, key: str, request: ChatRequest,
                       response: ChatResponse) -> None:
        doc = {
            "cache_key": key,
            "request": {
                "model": request.model_name,
                "messages": canonical_parts(request),
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
                "tag": request.tag,
            },
            "response": {"text": response.text, "usage": response.usage},
        }
        directory = Path(self.config.fixtures_dir)
        directory.mkdir(parents=True, exist_ok=True)
        path = self._fixture_path(key)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        tmp.replace(path)

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None


def verify_fixtures(fixtures_dir: Path) -> list[str]:
    """Return the cache keys of fixtures whose stored request no longer
    hashes to their filename."""
    bad = []
    for path in sorted(Path(fixtures_dir).glob("*.json")):
        doc = json.loads(path.read_text())
        req = doc["request"]
        key = cache_key_from_canonical(
            req["model"], req["messages"], req["temperature"], req["max_tokens"]
        )
        if key != path.stem or key != doc.get("cache_key"):
            bad.append(path.stem)
    return bad


# --- structured-output extraction -------------------------------------------

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)

_TYPE_NAMES = {
    "str": str,
    "int": int,
    "float": (int, float),
    "bool": bool,
    "list": list,
    "dict": dict,
}


def _first_json_value(text: str):
    for fenced in _FENCE_RE.findall(text):
        try:
            return json.loads(fenced.strip())
        except json.JSONDecodeError:
            continue
    decoder = json.JSONDecoder()
    for match in re.finditer(r"[{\[]", text):
        try:
            value, _ = decoder.raw_decode(text, match.start())
            return value
        except json.JSONDecodeError:
            continue
    raise StructuredOutputError("no JSON value found in model output")


def extract_structured(text: str, expected_shape: dict) -> dict:
    """Pull the first JSON object out of `text` and check that every field
    named in `expected_shape` (field -> type name) is present and typed."""
    value = _first_json_value(text)
    if not isinstance(value, dict):
        raise SchemaValidationError(f"expected an object, got {type(value).__name__}")
    for fname, tname in expected_shape.items():
        if fname not in value:
            raise SchemaValidationError(f"missing required field {fname!r}")
        expected = _TYPE_NAMES[tname]
        if not isinstance(value[fname], expected) or (
            tname in ("int", "float") and isinstance(value[fname], bool)
        ):
            raise SchemaValidationError(
                f"field {fname!r} is {type(value[fname]).__name__}, wanted {tname}"
            )
    return value


REPAIR_NOTE = (
    "Your previous reply could not be parsed. Reply again with ONLY a JSON "
    "object containing the required fields: "
)


def request_structured(
    gateway: Gateway,
    request: ChatRequest,
    expected_shape: dict,
    validate: Optional[Callable[[dict], None]] = None,
) -> tuple[dict, ChatResponse]:
    """complete() then parse; on a malformed reply, re-prompt once with a
    repair instruction before giving up.

    `validate` may apply stage-specific semantic checks by raising
    StructuredOutputError; it shares the single repair attempt.
    """

    def attempt(response: ChatResponse) -> dict:
        doc = extract_structured(response.text, expected_shape)
        if validate is not None:
            validate(doc)
        return doc

    response = gateway.complete(request)
    try:
        return attempt(response), response
    except StructuredOutputError:
        pass
    fields = ", ".join(f"{k} ({v})" for k, v in sorted(expected_shape.items()))
    repair = ChatRequest(
        model_name=request.model_name,
        messages=request.messages + (
            TextPart(f"Previous reply:\n{response.text}\n\n{REPAIR_NOTE}{fields}."),
        ),
        temperature=request.temperature,
        max_tokens=request.max_tokens,
        tag=request.tag + "/repair" if request.tag else "repair",
    )
    response = gateway.complete(repair)
    return attempt(response), response
