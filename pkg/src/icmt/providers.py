"""Caption providers, an append-only caption cache, and batch collection.

A provider is anything with an ``id`` attribute and a ``fetch(request)``
method returning the raw caption string. :func:`caption` adds caching,
retries and normalisation on top.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

import httpx

from .exceptions import AuthError, InputError, ParseError, ProviderError, RateLimited

logger = logging.getLogger(__name__)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
RETRY_STATUSES = (429, 500, 502, 503, 504)
MAX_ATTEMPTS = 3


@dataclass(frozen=True)
class CaptionRequest:
    image_id: str
    image_bytes: bytes
    provider_id: str = ""

    def __post_init__(self):
        if not self.image_bytes:
            raise ValueError(f"empty image bytes for {self.image_id}")
        if not self.image_bytes.startswith(PNG_MAGIC):
            raise ValueError(f"{self.image_id}: image bytes are not a PNG")

    @property
    def content_hash(self) -> str:
        return hashlib.sha256(self.image_bytes).hexdigest()

    @classmethod
    def from_path(cls, path, image_id: Optional[str] = None, provider_id: str = "") -> "CaptionRequest":
        path = Path(path)
        return cls(image_id=image_id or path.stem, image_bytes=path.read_bytes(), provider_id=provider_id)


@dataclass(frozen=True)
class CaptionResult:
    image_id: str
    provider_id: str
    caption: str
    latency_ms: float
    retrieved_at: str
    content_hash: str = ""
    cached: bool = False


@dataclass(frozen=True)
class CaptionFailure:
    image_id: str
    provider_id: str
    error: Exception


class Provider(Protocol):
    id: str

    def fetch(self, request: CaptionRequest) -> str: ...


def normalize_caption(text: str) -> str:
    return " ".join(text.strip().lower().split())


class MockProvider:
    """Offline provider answering from a fixture map.

    Keys may be content hashes or image ids; the hash wins when both match.
    Unknown images raise ``ProviderError(404)``. Every call is appended to
    ``calls`` as ``(event, image_id, monotonic_time)`` for inspection.
    """

    def __init__(self, captions: dict, provider_id: str = "mock", delay: float = 0.0,
                 failures: Optional[dict] = None):
        self.id = provider_id
        self.captions = dict(captions)
        self.delay = delay
        self.failures = dict(failures or {})
        self.calls: list[tuple[str, str, float]] = []
        self._lock = threading.Lock()

    @property
    def n_requests(self) -> int:
        return sum(1 for c in self.calls if c[0] == "start")

    def fetch(self, request: CaptionRequest) -> str:
        with self._lock:
            self.calls.append(("start", request.image_id, time.monotonic()))
        try:
            if self.delay:
                time.sleep(self.delay)
            for key in (request.content_hash, request.image_id):
                if key in self.failures:
                    status = self.failures[key]
                    if status in (401, 403):
                        raise AuthError(f"mock auth failure for {request.image_id}", status)
                    raise ProviderError(status, "mock failure")
            for key in (request.content_hash, request.image_id):
                if key in self.captions:
                    return self.captions[key]
            raise ProviderError(404, f"no fixture caption for {request.image_id}")
        finally:
            with self._lock:
                self.calls.append(("end", request.image_id, time.monotonic()))

    @classmethod
    def from_file(cls, path, provider_id: str = "mock") -> "MockProvider":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        captions = data.get("captions", data) if isinstance(data, dict) else {}
        return cls(captions, provider_id=provider_id)


def resolve_json_pointer(doc, pointer: str):
    """Resolve an RFC 6901 JSON pointer such as ``/description/captions/0/text``."""
    if pointer in ("", "/"):
        return doc
    cur = doc
    for raw in pointer.lstrip("/").split("/"):
        token = raw.replace("~1", "/").replace("~0", "~")
        if isinstance(cur, list):
            cur = cur[int(token)]
        else:
            cur = cur[token]
    return cur


@dataclass
class ProviderConfig:
    id: str
    kind: str = "http"
    endpoint: str = ""
    auth_header: str = "Authorization"
    credential_env: str = ""
    request_format: str = "multipart"
    response_pointer: str = "/caption"
    fixtures: str = ""
    timeout: float = 30.0

    @classmethod
    def load(cls, path) -> "ProviderConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise InputError(f"provider config not found: {path}") from exc
        try:
            if path.suffix.lower() == ".toml":
                try:
                    import tomllib
                except ModuleNotFoundError:  # Python < 3.11
                    import tomli as tomllib
                data = tomllib.loads(text)
            else:
                data = json.loads(text)
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if "id" not in known:
            raise ParseError(f"{path}: provider config needs an 'id'")
        cfg = cls(**known)
        if cfg.kind == "mock" and cfg.fixtures and not Path(cfg.fixtures).is_absolute():
            cfg.fixtures = str(path.parent / cfg.fixtures)
        if cfg.request_format not in ("multipart", "base64-json"):
            raise ParseError(f"{path}: unknown request_format {cfg.request_format!r}")
        return cfg

    def build(self, client: Optional[httpx.Client] = None):
        if self.kind == "mock":
            return MockProvider.from_file(self.fixtures, provider_id=self.id)
        if self.kind == "http":
            return HttpProvider(self, client=client)
        raise InputError(f"unknown provider kind {self.kind!r}")


class HttpProvider:
    """Caption provider backed by a remote HTTP endpoint.

    The credential is read from the environment variable named in the config
    at construction and never persisted.
    """

    def __init__(self, config: ProviderConfig, client: Optional[httpx.Client] = None):
        self.id = config.id
        self.config = config
        if not config.endpoint:
            raise InputError(f"provider {config.id}: no endpoint configured")
        self._credential = None
        if config.credential_env:
            self._credential = os.environ.get(config.credential_env)
            if not self._credential:
                raise AuthError(f"environment variable {config.credential_env} is not set")
        self._client = client or httpx.Client(timeout=config.timeout)

    def fetch(self, request: CaptionRequest) -> str:
        headers = {}
        if self._credential:
            headers[self.config.auth_header] = self._credential
        if self.config.request_format == "multipart":
            resp = self._client.post(self.config.endpoint, headers=headers,
                                     files={"image": (f"{request.image_id}.png", request.image_bytes,
                                                      "image/png")})
        else:
            payload = {"image_id": request.image_id,
                       "image": base64.b64encode(request.image_bytes).decode("ascii")}
            resp = self._client.post(self.config.endpoint, headers=headers, json=payload)
        if resp.status_code in (401, 403):
            raise AuthError(f"provider {self.id} rejected credentials", resp.status_code)
        if resp.status_code == 429:
            raise RateLimited(429, resp.text)
        if resp.status_code >= 400:
            raise ProviderError(resp.status_code, resp.text)
        try:
            caption = resolve_json_pointer(resp.json(), self.config.response_pointer)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(resp.status_code, f"caption not found at {self.config.response_pointer}") from exc
        if not isinstance(caption, str) or not caption.strip():
            raise ProviderError(resp.status_code, "empty caption")
        return caption


class CaptionCache:
    """Append-only JSONL caption store for one provider, indexed by content hash.

    Writes go through a single lock; lookups read the in-memory index.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._index: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        row = json.loads(line)
                    except json.JSONDecodeError:
                        # a torn final line from a crash is skipped, not fatal
                        logger.warning("%s:%d: skipping unreadable cache line", self.path, lineno)
                        continue
                    self._index.setdefault(row["hash"], row)

    @classmethod
    def for_provider(cls, cache_dir, provider_id: str) -> "CaptionCache":
        return cls(Path(cache_dir) / f"{provider_id}.jsonl")

    def __len__(self):
        return len(self._index)

    def __contains__(self, content_hash: str) -> bool:
        return content_hash in self._index

    def get(self, content_hash: str) -> Optional[dict]:
        return self._index.get(content_hash)

    def put(self, content_hash: str, image_id: str, caption: str, ts: str, latency_ms: float) -> dict:
        with self._lock:
            if content_hash in self._index:
                return self._index[content_hash]
            row = {"hash": content_hash, "image_id": image_id, "caption": caption,
                   "ts": ts, "latency_ms": round(latency_ms, 3)}
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            self._index[content_hash] = row
            return row


def caption(provider: Provider, req: CaptionRequest, cache: Optional[CaptionCache] = None,
            attempts: int = MAX_ATTEMPTS, backoff: float = 0.5,
            sleep: Callable[[float], None] = time.sleep) -> CaptionResult:
    """Caption one image, serving from ``cache`` when possible.

    Transient failures (429 and 5xx) are retried with exponential backoff;
    after the last attempt a 429 surfaces as :class:`RateLimited` and other
    statuses as :class:`ProviderError`. Auth failures are never retried.
    """
    digest = req.content_hash
    if cache is not None:
        row = cache.get(digest)
        if row is not None:
            return CaptionResult(req.image_id, provider.id, row["caption"], row.get("latency_ms", 0.0),
                                 row.get("ts", ""), digest, cached=True)
    for attempt in range(attempts):
        t0 = time.perf_counter()
        try:
            raw = provider.fetch(req)
        except AuthError:
            raise
        except ProviderError as exc:
            if exc.status not in RETRY_STATUSES or attempt == attempts - 1:
                raise
            logger.info("provider %s: status %s for %s, retrying", provider.id, exc.status, req.image_id)
            sleep(backoff * (2 ** attempt))
            continue
        except httpx.TransportError as exc:
            if attempt == attempts - 1:
                raise ProviderError(0, str(exc)) from exc
            sleep(backoff * (2 ** attempt))
            continue
        latency = (time.perf_counter() - t0) * 1000.0
        text = normalize_caption(raw)
        if not text:
            raise ProviderError(200, "empty caption")
        ts = datetime.now(timezone.utc).isoformat(timespec="seconds")
        if cache is not None:
            row = cache.put(digest, req.image_id, text, ts, latency)
            text = row["caption"]
        return CaptionResult(req.image_id, provider.id, text, latency, ts, digest)
    raise AssertionError("unreachable")


def caption_batch(provider: Provider, reqs: Sequence[CaptionRequest], max_in_flight: int = 4,
                  cache: Optional[CaptionCache] = None,
                  **kwargs) -> list[Union[CaptionResult, CaptionFailure]]:
    """Caption many images with bounded concurrency, preserving input order.

    Per-item errors come back as :class:`CaptionFailure` entries instead of
    aborting the batch.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")

    def one(req):
        try:
            return caption(provider, req, cache=cache, **kwargs)
        except ProviderError as exc:
            return CaptionFailure(req.image_id, provider.id, exc)

    if max_in_flight == 1:
        return [one(r) for r in reqs]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(one, reqs))
