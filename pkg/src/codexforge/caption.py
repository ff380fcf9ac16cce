"""Caption generation for cropped illustrations via an external
vision-language inference service.

The model runs out-of-process behind a small HTTP contract (JSON: base64
image + prompt in, text out) so it can be swapped as better models appear.
A content-addressed cache keyed by crop bytes + prompt + model makes every
re-run free and the whole stage resumable.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .catalog import IllustrationRecord
from .ratelimit import TokenBucket, backoff_delay

DEFAULT_PROMPT = (
    "Describe this illustration from a historical manuscript, naming the "
    "figures, objects, animals, actions, and colors you see."
)
DEFAULT_MAX_CAPTION_CHARS = 2000

ENDPOINT_ENV = "CODEXFORGE_CAPTION_URL"
TOKEN_ENV = "CODEXFORGE_CAPTION_TOKEN"


class CaptionError(Exception):
    pass


class ServiceUnavailable(CaptionError):
    pass


class EmptyCaption(CaptionError):
    pass


@dataclass(frozen=True)
class CaptionRequest:
    record_id: str
    image_bytes: bytes
    prompt: str = DEFAULT_PROMPT
    model_name: str = "llava"
    max_tokens: int = 256

    def __post_init__(self) -> None:
        if not self.image_bytes:
            raise CaptionError(f"{self.record_id}: empty image")
        if not self.prompt:
            raise CaptionError(f"{self.record_id}: empty prompt")

    def cache_key(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.image_bytes)
        digest.update(b"\x00")
        digest.update(self.prompt.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(self.model_name.encode("utf-8"))
        return digest.hexdigest()


@dataclass(frozen=True)
class CaptionResult:
    record_id: str
    caption: str
    model_name: str
    latency_ms: float
    attempt_count: int
    truncated: bool = False
    from_cache: bool = False


class CaptionTransport(Protocol):
    def complete(self, request: CaptionRequest) -> str: ...


class HttpCaptionTransport:
    """POSTs {image_b64, prompt, model, max_tokens} and expects {caption}."""

    def __init__(self, endpoint: str | None = None, auth_token: str | None = None,
                 timeout: float = 120.0):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not self.endpoint:
            raise CaptionError(f"no caption endpoint configured (set {ENDPOINT_ENV})")
        self.auth_token = auth_token or os.environ.get(TOKEN_ENV)
        self.timeout = timeout

    def complete(self, request: CaptionRequest) -> str:
        import requests

        headers = {}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        try:
            response = requests.post(
                self.endpoint,
                json={
                    "image_b64": base64.b64encode(request.image_bytes).decode("ascii"),
                    "prompt": request.prompt,
                    "model": request.model_name,
                    "max_tokens": request.max_tokens,
                },
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ServiceUnavailable(str(exc)) from exc
        if response.status_code != 200:
            raise ServiceUnavailable(f"HTTP {response.status_code}")
        try:
            return str(response.json()["caption"])
        except (ValueError, KeyError) as exc:
            raise ServiceUnavailable(f"malformed caption response: {exc}") from exc


class StubCaptionTransport:
    """Deterministic offline captioner for tests and fixture corpora.

    Optionally backed by a JSON sidecar: {"captions": {record_id: text},
    "default_template": "..."} with {record_id} interpolation.
    """

    def __init__(self, sidecar_path: str | Path | None = None):
        self.captions: dict[str, str] = {}
        self.default_template = "an illustration ({record_id})"
        if sidecar_path:
            spec = json.loads(Path(sidecar_path).read_text())
            self.captions = dict(spec.get("captions", {}))
            self.default_template = spec.get("default_template", self.default_template)

    def complete(self, request: CaptionRequest) -> str:
        if request.record_id in self.captions:
            return self.captions[request.record_id]
        return self.default_template.format(record_id=request.record_id)


def make_transport(endpoint: str | None, auth_token: str | None = None) -> CaptionTransport:
    """stub: endpoints resolve to the offline captioner; anything else is HTTP."""
    if endpoint and endpoint.startswith("stub:"):
        sidecar = endpoint[len("stub:"):] or None
        return StubCaptionTransport(sidecar)
    return HttpCaptionTransport(endpoint, auth_token)


class CaptionCache:
    """Content-addressed directory of JSON files; one writer at a time."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def get(self, request: CaptionRequest) -> CaptionResult | None:
        path = self._path(request.cache_key())
        if not path.exists():
            return None
        try:
            data = json.loads(path.read_text())
        except ValueError:
            return None
        return CaptionResult(
            record_id=request.record_id,
            caption=data["caption"],
            model_name=data["model_name"],
            latency_ms=data.get("latency_ms", 0.0),
            attempt_count=data.get("attempt_count", 1),
            truncated=data.get("truncated", False),
            from_cache=True,
        )

    def put(self, request: CaptionRequest, result: CaptionResult) -> None:
        path = self._path(request.cache_key())
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            payload = {
                "caption": result.caption,
                "model_name": result.model_name,
                "latency_ms": result.latency_ms,
                "attempt_count": result.attempt_count,
                "truncated": result.truncated,
            }
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True))
            os.replace(tmp, path)


def generate_caption(
    request: CaptionRequest,
    transport: CaptionTransport,
    cache: CaptionCache | None = None,
    max_attempts: int = 5,
    max_caption_chars: int = DEFAULT_MAX_CAPTION_CHARS,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> CaptionResult:
    """First successful completion for the request.

    Service failures back off and retry up to max_attempts before raising
    ServiceUnavailable. An empty caption is retried once, then raises
    EmptyCaption. Captions are stored exactly as returned up to
    max_caption_chars; longer ones are cut and flagged truncated.
    """
    if cache is not None:
        hit = cache.get(request)
        if hit is not None:
            return hit
    rng = rng or random.Random()
    started = time.monotonic()
    empty_retries = 0
    attempt = 0
    while attempt < max_attempts:
        attempt += 1
        try:
            text = transport.complete(request)
        except ServiceUnavailable:
            if attempt >= max_attempts:
                raise
            sleep(backoff_delay(attempt, rng=rng))
            continue
        if not text.strip():
            if empty_retries == 0:
                empty_retries = 1
                continue
            raise EmptyCaption(request.record_id)
        truncated = len(text) > max_caption_chars
        result = CaptionResult(
            record_id=request.record_id,
            caption=text[:max_caption_chars],
            model_name=request.model_name,
            latency_ms=(time.monotonic() - started) * 1000,
            attempt_count=attempt,
            truncated=truncated,
        )
        if cache is not None:
            cache.put(request, result)
        return result
    raise ServiceUnavailable(f"{request.record_id}: no attempts left")


@dataclass
class CaptionRunReport:
    ok: int = 0
    failed: int = 0
    skipped: int = 0
    from_cache: int = 0
    truncated_ids: list[str] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "failed": self.failed,
            "skipped": self.skipped,
            "from_cache": self.from_cache,
            "truncated_ids": sorted(self.truncated_ids),
            "failures": sorted([list(f) for f in self.failures]),
        }


def caption_corpus(
    records: list[IllustrationRecord],
    crop_loader: Callable[[IllustrationRecord], bytes],
    transport: CaptionTransport,
    cache: CaptionCache | None = None,
    model_name: str = "llava",
    prompt: str = DEFAULT_PROMPT,
    parallelism: int = 4,
    rps: float = 2.0,
    max_caption_chars: int = DEFAULT_MAX_CAPTION_CHARS,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> tuple[list[IllustrationRecord], CaptionRunReport]:
    """Caption every record lacking one.

    Failures are aggregated per record, never fatal; records that already
    carry a caption are skipped, so the run is resumable (and the cache
    makes resumed service calls free). Returns updated records in input
    order plus the run report.
    """
    report = CaptionRunReport()
    bucket = TokenBucket(rate=rps, sleep=sleep)
    lock = threading.Lock()
    updated: dict[str, IllustrationRecord] = {}

    def work(record: IllustrationRecord) -> None:
        try:
            request = CaptionRequest(
                record_id=record.record_id,
                image_bytes=crop_loader(record),
                prompt=prompt,
                model_name=model_name,
            )
            if cache is not None:
                hit = cache.get(request)
                if hit is not None:
                    with lock:
                        report.ok += 1
                        report.from_cache += 1
                        if hit.truncated:
                            report.truncated_ids.append(record.record_id)
                        updated[record.record_id] = replace(
                            record, caption=hit.caption, caption_model=hit.model_name
                        )
                    return
            bucket.acquire()
            result = generate_caption(
                request, transport, cache,
                max_caption_chars=max_caption_chars, sleep=sleep, rng=rng,
            )
            with lock:
                report.ok += 1
                if result.truncated:
                    report.truncated_ids.append(record.record_id)
                updated[record.record_id] = replace(
                    record, caption=result.caption, caption_model=result.model_name
                )
        except (CaptionError, OSError) as exc:
            with lock:
                report.failed += 1
                report.failures.append((record.record_id, str(exc)))

    todo = []
    for record in records:
        if record.caption:
            report.skipped += 1
        else:
            todo.append(record)
    if todo:
        with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
            list(pool.map(work, todo))
    out = [updated.get(r.record_id, r) for r in records]
    return out, report
