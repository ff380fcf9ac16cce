"""Harvest page images from IIIF endpoints: manifest parsing (Presentation
v2 and v3), download planning with resume, and bounded-concurrency
fetching with per-host rate limits, retries, and atomic writes.

A multi-thousand-volume run must survive individual bad pages, so every
failure is captured per job and surfaces in the ingest report instead of
aborting the run.
"""

from __future__ import annotations

import json
import os
import random
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable
from urllib.parse import urlsplit

from .catalog import DataLayout, PageRef, image_url_from_service, slugify_id
from .ratelimit import TokenBucket, backoff_delay


class IngestError(Exception):
    pass


class UnsupportedManifestVersion(IngestError):
    pass


class MalformedManifest(IngestError):
    pass


class FetchError(IngestError):
    def __init__(self, message: str, status: int | None = None, retryable: bool = True):
        super().__init__(message)
        self.status = status
        self.retryable = retryable


@dataclass(frozen=True)
class CanvasEntry:
    canvas_id: str
    image_service_base: str | None
    width: int | None
    height: int | None
    label: str | None
    direct_image_url: str | None = None

    def image_url(self, size_token: str = "full") -> str:
        if self.image_service_base:
            return image_url_from_service(self.image_service_base, size_token)
        if self.direct_image_url:
            return self.direct_image_url
        raise MalformedManifest(f"canvas {self.canvas_id} carries no image source")


@dataclass(frozen=True)
class CollectionManifest:
    volume_id: str
    canvases: tuple[CanvasEntry, ...]


def _context_version(doc: dict) -> int | None:
    context = doc.get("@context", "")
    contexts = context if isinstance(context, list) else [context]
    for c in contexts:
        if isinstance(c, str) and "iiif.io/api/presentation" in c:
            if "/2/" in c or c.endswith("/2") or "presentation/2" in c:
                return 2
            if "/3/" in c or c.endswith("/3") or "presentation/3" in c:
                return 3
            return 0  # a presentation context we do not speak
    return None


def _first_label(value) -> str | None:
    # v2 labels are strings, v3 labels are {lang: [values]}
    if isinstance(value, str):
        return value
    if isinstance(value, dict):
        for entries in value.values():
            if isinstance(entries, list) and entries:
                return str(entries[0])
    if isinstance(value, list) and value:
        return _first_label(value[0])
    return None


def _service_base(service) -> str | None:
    if isinstance(service, list):
        service = service[0] if service else None
    if isinstance(service, dict):
        return service.get("@id") or service.get("id")
    if isinstance(service, str):
        return service
    return None


def _volume_id_from(doc: dict) -> str:
    raw = doc.get("@id") or doc.get("id") or "volume"
    path = urlsplit(str(raw)).path or str(raw)
    segments = [s for s in path.split("/") if s and not s.startswith("manifest")]
    return segments[-1] if segments else "volume"


def _parse_v2_canvases(doc: dict) -> list[CanvasEntry]:
    sequences = doc.get("sequences")
    if not isinstance(sequences, list) or not sequences:
        raise MalformedManifest("v2 manifest has no sequences")
    canvases = sequences[0].get("canvases")
    if not isinstance(canvases, list) or not canvases:
        raise MalformedManifest("v2 manifest has no canvases")
    entries = []
    for canvas in canvases:
        images = canvas.get("images") or []
        resource = images[0].get("resource", {}) if images else {}
        entries.append(
            CanvasEntry(
                canvas_id=str(canvas.get("@id", "")),
                image_service_base=_service_base(resource.get("service")),
                width=canvas.get("width"),
                height=canvas.get("height"),
                label=_first_label(canvas.get("label")),
                direct_image_url=resource.get("@id"),
            )
        )
    return entries


def _parse_v3_canvases(doc: dict) -> list[CanvasEntry]:
    items = [i for i in doc.get("items", []) if isinstance(i, dict) and i.get("type") == "Canvas"]
    if not items:
        raise MalformedManifest("v3 manifest has no canvases")
    entries = []
    for canvas in items:
        body = {}
        pages = canvas.get("items") or []
        if pages and isinstance(pages[0], dict):
            annotations = pages[0].get("items") or []
            if annotations and isinstance(annotations[0], dict):
                body = annotations[0].get("body") or {}
        if isinstance(body, list):
            body = body[0] if body else {}
        entries.append(
            CanvasEntry(
                canvas_id=str(canvas.get("id", "")),
                image_service_base=_service_base(body.get("service")),
                width=canvas.get("width"),
                height=canvas.get("height"),
                label=_first_label(canvas.get("label")),
                direct_image_url=body.get("id"),
            )
        )
    return entries


def parse_manifest(document: dict) -> CollectionManifest:
    """One CanvasEntry per canvas, in manifest order."""
    if not isinstance(document, dict):
        raise MalformedManifest("manifest must be a JSON object")
    version = _context_version(document)
    if version == 0:
        raise UnsupportedManifestVersion(str(document.get("@context")))
    if version == 2 or (version is None and "sequences" in document):
        canvases = _parse_v2_canvases(document)
    elif version == 3 or (version is None and "items" in document):
        canvases = _parse_v3_canvases(document)
    else:
        raise MalformedManifest("document has neither `sequences` (v2) nor `items` (v3)")
    for entry in canvases:
        for dim in (entry.width, entry.height):
            if dim is not None and dim <= 0:
                raise MalformedManifest(f"canvas {entry.canvas_id} has non-positive size")
    return CollectionManifest(volume_id=_volume_id_from(document), canvases=tuple(canvases))


@dataclass(frozen=True)
class DownloadJob:
    page: PageRef
    url: str
    target: Path


@dataclass
class DownloadPlan:
    jobs: list[DownloadJob]
    completed: set[PageRef] = field(default_factory=set)

    @property
    def remaining(self) -> list[DownloadJob]:
        return [j for j in self.jobs if j.page not in self.completed]


def plan_downloads(
    manifest: CollectionManifest,
    layout: DataLayout,
    library_id: str,
    collection_id: str,
    resume: bool = False,
    size_token: str = "full",
) -> DownloadPlan:
    """Build the page-fetch job list; with resume, pages already on disk
    with nonzero size count as completed."""
    volume_id = slugify_id(manifest.volume_id)
    jobs: list[DownloadJob] = []
    completed: set[PageRef] = set()
    targets_seen: set[Path] = set()
    for index, canvas in enumerate(manifest.canvases, start=1):
        page = PageRef(library_id, collection_id, volume_id, index, canvas_id=canvas.canvas_id or None)
        target = layout.page_path(page)
        if target in targets_seen:
            raise IngestError(f"duplicate target path {target}")
        targets_seen.add(target)
        jobs.append(DownloadJob(page=page, url=canvas.image_url(size_token), target=target))
        if resume and target.exists() and target.stat().st_size > 0:
            completed.add(page)
    return DownloadPlan(jobs=jobs, completed=completed)


def write_manifest_index(manifest: CollectionManifest, plan: DownloadPlan, layout: DataLayout) -> None:
    """Per-volume canvas metadata so later stages can build IIIF back-links."""
    if not plan.jobs:
        return
    first = plan.jobs[0].page
    entries = {}
    for job, canvas in zip(plan.jobs, manifest.canvases):
        entries[str(job.page.page_index)] = {
            "canvas_id": canvas.canvas_id,
            "image_service_base": canvas.image_service_base,
            "direct_image_url": canvas.direct_image_url,
            "label": canvas.label,
        }
    path = layout.manifest_index_path(first.library_id, first.collection_id, first.volume_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"volume_id": first.volume_id, "pages": entries},
                               sort_keys=True, ensure_ascii=False) + "\n")


@dataclass
class JobFailure:
    page_id: str
    url: str
    error: str
    attempts: int


@dataclass
class IngestReport:
    ok: int = 0
    failed: int = 0
    skipped: int = 0
    failures: list[JobFailure] = field(default_factory=list)
    duration_s: float = 0.0

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "failed": self.failed,
            "skipped": self.skipped,
            "duration_s": round(self.duration_s, 3),
            "failures": [vars(f) for f in self.failures],
        }


def requests_fetcher(timeout: float = 60.0) -> Callable[[str], bytes]:
    import requests

    session = requests.Session()
    session.headers["User-Agent"] = "codexforge/0.1"

    def fetch(url: str) -> bytes:
        try:
            response = session.get(url, timeout=timeout)
        except requests.RequestException as exc:
            raise FetchError(str(exc), retryable=True) from exc
        if response.status_code != 200:
            retryable = response.status_code >= 500 or response.status_code == 429
            raise FetchError(
                f"HTTP {response.status_code}", status=response.status_code, retryable=retryable
            )
        return response.content

    return fetch


def _atomic_write(target: Path, data: bytes) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=target.name, suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fetch_pages(
    plan: DownloadPlan,
    max_in_flight: int = 8,
    per_host_rps: float = 4.0,
    fetcher: Callable[[str], bytes] | None = None,
    max_attempts: int = 5,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
    attempt_log: list[tuple[str, int]] | None = None,
) -> IngestReport:
    """Run the remaining jobs of a plan.

    Each job either lands atomically on disk (temp file + rename, so a
    present page file is always a complete download) or is recorded as a
    failure; network errors never abort the run. Retries back off
    exponentially with jitter up to max_attempts.
    """
    if max_in_flight < 1:
        raise IngestError("max_in_flight must be >= 1")
    if per_host_rps <= 0:
        raise IngestError("per_host_rps must be positive")
    fetch = fetcher or requests_fetcher()
    rng = rng or random.Random()
    report = IngestReport(skipped=len(plan.completed))
    buckets: dict[str, TokenBucket] = {}
    buckets_lock = threading.Lock()
    report_lock = threading.Lock()
    started = time.monotonic()

    def bucket_for(url: str) -> TokenBucket:
        host = urlsplit(url).netloc
        with buckets_lock:
            if host not in buckets:
                buckets[host] = TokenBucket(rate=per_host_rps, sleep=sleep)
            return buckets[host]

    def run_job(job: DownloadJob) -> None:
        bucket = bucket_for(job.url)
        last_error = "unknown"
        for attempt in range(1, max_attempts + 1):
            bucket.acquire()
            try:
                data = fetch(job.url)
                _atomic_write(job.target, data)
                with report_lock:
                    report.ok += 1
                    if attempt_log is not None:
                        attempt_log.append((str(job.page), attempt))
                return
            except FetchError as exc:
                last_error = str(exc)
                if not exc.retryable:
                    break
            except OSError as exc:
                last_error = str(exc)
                break
            if attempt < max_attempts:
                sleep(backoff_delay(attempt, rng=rng))
        with report_lock:
            report.failed += 1
            report.failures.append(
                JobFailure(
                    page_id=f"{job.page.volume_id}/p{job.page.page_index:05d}",
                    url=job.url,
                    error=last_error,
                    attempts=min(attempt, max_attempts),
                )
            )
            if attempt_log is not None:
                attempt_log.append((str(job.page), attempt))

    remaining = plan.remaining
    if remaining:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            list(pool.map(run_job, remaining))
    report.duration_s = time.monotonic() - started
    report.failures.sort(key=lambda f: f.page_id)
    return report
