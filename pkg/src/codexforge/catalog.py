"""Canonical identifiers, record types, and the on-disk layout that ties
every artifact (page image, crop, caption, vector) back to its source
volume and page.

Everything downstream depends on two guarantees made here: record ids are
deterministic functions of their provenance, and the record store
round-trips losslessly.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator


class CatalogError(Exception):
    pass


class InvalidSizeToken(CatalogError):
    """Size token not in the accepted IIIF Image API grammar."""


class InvalidIdentifier(CatalogError):
    """Component id violates the id grammar (lowercase alnum, '.', '-')."""


# Component ids must not contain '_' so that record ids (which join
# components with '_') stay injective and parseable.
_ID_RE = re.compile(r"[a-z0-9][a-z0-9.\-]*\Z")

_SIZE_TOKEN_RE = re.compile(r"(full|max|pct:\d+(\.\d+)?|\d+,)\Z")


def slugify_id(raw: str) -> str:
    """Map an arbitrary external identifier onto the id grammar.

    Lowercases and replaces every run of disallowed characters with '-'.
    Not injective in general; collisions are an ingestion-time concern.
    """
    slug = re.sub(r"[^a-z0-9.\-]+", "-", raw.lower()).strip("-")
    if not slug:
        raise InvalidIdentifier(f"cannot derive an id from {raw!r}")
    return slug


def _check_id(name: str, value: str) -> None:
    if not _ID_RE.match(value):
        raise InvalidIdentifier(f"{name} {value!r} does not match {_ID_RE.pattern}")


class PageLabel(str, Enum):
    ART = "art"
    NO_ART = "no_art"


@dataclass(frozen=True, order=True)
class PageRef:
    """Globally unique reference to one page of one digitized volume."""

    library_id: str
    collection_id: str
    volume_id: str
    page_index: int  # 1-based, contiguous within a volume after ingest
    canvas_id: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        _check_id("library_id", self.library_id)
        _check_id("collection_id", self.collection_id)
        _check_id("volume_id", self.volume_id)
        if not isinstance(self.page_index, int) or self.page_index < 1:
            raise CatalogError(f"page_index must be an integer >= 1, got {self.page_index!r}")

    def to_json(self) -> dict:
        d = {
            "library_id": self.library_id,
            "collection_id": self.collection_id,
            "volume_id": self.volume_id,
            "page_index": self.page_index,
        }
        if self.canvas_id is not None:
            d["canvas_id"] = self.canvas_id
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PageRef":
        return cls(
            library_id=d["library_id"],
            collection_id=d["collection_id"],
            volume_id=d["volume_id"],
            page_index=d["page_index"],
            canvas_id=d.get("canvas_id"),
        )


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle in original-page pixel space.

    Coordinates are continuous: a pixel at row r, column c occupies
    [c, c+1) x [r, r+1), so a full cover of a WxH page is (0, 0, W, H).
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise CatalogError(
                f"degenerate box ({self.x_min},{self.y_min},{self.x_max},{self.y_max})"
            )
        if not 0.0 <= self.confidence <= 1.0:
            raise CatalogError(f"confidence {self.confidence} outside [0,1]")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def clamped(self, page_width: float, page_height: float) -> "BoundingBox | None":
        """Clamp to page bounds; None if nothing of the box remains."""
        x0 = min(max(self.x_min, 0.0), page_width)
        y0 = min(max(self.y_min, 0.0), page_height)
        x1 = min(max(self.x_max, 0.0), page_width)
        y1 = min(max(self.y_max, 0.0), page_height)
        if x0 >= x1 or y0 >= y1:
            return None
        return replace(self, x_min=x0, y_min=y0, x_max=x1, y_max=y1)

    def to_json(self) -> dict:
        return {
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
            "confidence": self.confidence,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BoundingBox":
        return cls(d["x_min"], d["y_min"], d["x_max"], d["y_max"], d.get("confidence", 1.0))


def make_page_id(page: PageRef) -> str:
    return f"{page.library_id}_{page.collection_id}_{page.volume_id}_p{page.page_index:05d}"


def parse_page_id(page_id: str) -> PageRef:
    parts = page_id.split("_")
    if len(parts) != 4 or not re.match(r"p\d{5,}\Z", parts[3]):
        raise CatalogError(f"malformed page id {page_id!r}")
    return PageRef(parts[0], parts[1], parts[2], int(parts[3][1:]))


def make_record_id(page: PageRef, box_index: int) -> str:
    """Deterministic id for the box_index-th illustration of a page.

    Zero-padded indices make lexicographic order equal pipeline order.
    """
    if box_index < 0:
        raise CatalogError(f"box_index must be >= 0, got {box_index}")
    return f"{make_page_id(page)}_b{box_index:02d}"


def build_iiif_image_url(base: str, identifier: str, size_token: str = "full") -> str:
    """IIIF Image API URL for the full region of an image at the given size."""
    if not base.startswith(("http://", "https://")):
        raise CatalogError(f"base must be an http(s) URL, got {base!r}")
    return image_url_from_service(f"{base.rstrip('/')}/{identifier}", size_token)


def image_url_from_service(service_base: str, size_token: str = "full") -> str:
    if not _SIZE_TOKEN_RE.match(size_token):
        raise InvalidSizeToken(f"size token {size_token!r} not in (full|max|pct:NN|WW,)")
    return f"{service_base.rstrip('/')}/full/{size_token}/0/default.jpg"


@dataclass
class IllustrationRecord:
    """One cropped illustration: the unit of search and graph nodes."""

    record_id: str
    page: PageRef
    box: BoundingBox
    crop_path: str  # relative to the data root
    iiif_url: str  # resolves to the full page image, not the crop
    caption: str | None = None
    caption_model: str | None = None
    embedding_id: str | None = None

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "page": self.page.to_json(),
            "box": self.box.to_json(),
            "crop_path": self.crop_path,
            "iiif_url": self.iiif_url,
            "caption": self.caption,
            "caption_model": self.caption_model,
            "embedding_id": self.embedding_id,
        }

    @classmethod
    def from_json(cls, d: dict) -> "IllustrationRecord":
        return cls(
            record_id=d["record_id"],
            page=PageRef.from_json(d["page"]),
            box=BoundingBox.from_json(d["box"]),
            crop_path=d["crop_path"],
            iiif_url=d["iiif_url"],
            caption=d.get("caption"),
            caption_model=d.get("caption_model"),
            embedding_id=d.get("embedding_id"),
        )


@dataclass(frozen=True)
class CorruptRecord:
    """A malformed record-store line: reported, never fatal."""

    line_number: int
    reason: str
    raw: str


def record_to_line(record: IllustrationRecord) -> str:
    return json.dumps(record.to_json(), ensure_ascii=False, sort_keys=True)


def append_records(path: Path | str, records: Iterable[IllustrationRecord]) -> int:
    """Append records to a JSON-lines store; returns the count written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "a", encoding="utf-8") as fh:
        for record in records:
            fh.write(record_to_line(record) + "\n")
            n += 1
    return n


def write_records(path: Path | str, records: Iterable[IllustrationRecord]) -> int:
    """Replace the store atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(record_to_line(record) + "\n")
                n += 1
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return n


def load_records(
    path: Path | str,
    on_corrupt: Callable[[CorruptRecord], None] | None = None,
) -> Iterator[IllustrationRecord]:
    """Stream records from a JSON-lines store.

    Malformed lines are skipped and reported through on_corrupt; the
    stream itself never aborts. A missing file yields nothing.
    """
    path = Path(path)
    if not path.exists():
        return
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield IllustrationRecord.from_json(json.loads(line))
            except Exception as exc:  # noqa: BLE001 - any bad line is non-fatal
                if on_corrupt is not None:
                    on_corrupt(CorruptRecord(line_number, str(exc), line[:200]))


def read_records(path: Path | str) -> tuple[list[IllustrationRecord], list[CorruptRecord]]:
    corrupt: list[CorruptRecord] = []
    records = list(load_records(path, corrupt.append))
    return records, corrupt


@dataclass(frozen=True)
class DataLayout:
    """Paths for every pipeline artifact, relative to one data root.

    data/{library}/{collection}/{volume}/pages/pNNNNN.jpg
                                         crops/{record_id}.jpg
                                         records.jsonl
                                         vectors.f32 + vectors.idx
    """

    root: Path

    def volume_dir(self, library_id: str, collection_id: str, volume_id: str) -> Path:
        return self.root / library_id / collection_id / volume_id

    def volume_dir_for(self, page: PageRef) -> Path:
        return self.volume_dir(page.library_id, page.collection_id, page.volume_id)

    def page_path(self, page: PageRef) -> Path:
        return self.volume_dir_for(page) / "pages" / f"p{page.page_index:05d}.jpg"

    def crop_path(self, page: PageRef, record_id: str) -> Path:
        return self.volume_dir_for(page) / "crops" / f"{record_id}.jpg"

    def records_path(self, library_id: str, collection_id: str, volume_id: str) -> Path:
        return self.volume_dir(library_id, collection_id, volume_id) / "records.jsonl"

    def classifications_path(self, library_id: str, collection_id: str, volume_id: str) -> Path:
        return self.volume_dir(library_id, collection_id, volume_id) / "classifications.jsonl"

    def detections_path(self, library_id: str, collection_id: str, volume_id: str) -> Path:
        return self.volume_dir(library_id, collection_id, volume_id) / "detections.jsonl"

    def manifest_index_path(self, library_id: str, collection_id: str, volume_id: str) -> Path:
        return self.volume_dir(library_id, collection_id, volume_id) / "manifest_index.json"

    def vectors_path(self, library_id: str, collection_id: str, volume_id: str) -> Path:
        return self.volume_dir(library_id, collection_id, volume_id) / "vectors.f32"

    def vectors_index_path(self, library_id: str, collection_id: str, volume_id: str) -> Path:
        return self.volume_dir(library_id, collection_id, volume_id) / "vectors.idx"

    def index_path(self) -> Path:
        return self.root / "index.bin"

    def graph_path(self) -> Path:
        return self.root / "graph.json"

    def reports_dir(self) -> Path:
        return self.root / "reports"

    def volumes(self) -> list[tuple[str, str, str]]:
        """All (library, collection, volume) triples present under the root."""
        out = []
        if not self.root.exists():
            return out
        for lib in sorted(p for p in self.root.iterdir() if p.is_dir()):
            if lib.name == "reports":
                continue
            for coll in sorted(p for p in lib.iterdir() if p.is_dir()):
                for vol in sorted(p for p in coll.iterdir() if p.is_dir()):
                    if (vol / "pages").is_dir() or (vol / "records.jsonl").exists():
                        out.append((lib.name, coll.name, vol.name))
        return out

    def page_refs(self, library_id: str, collection_id: str, volume_id: str) -> list[PageRef]:
        """PageRefs for every page image on disk, in page order."""
        pages_dir = self.volume_dir(library_id, collection_id, volume_id) / "pages"
        refs = []
        if not pages_dir.is_dir():
            return refs
        for f in sorted(pages_dir.glob("p*.jpg")):
            m = re.match(r"p(\d{5,})\.jpg\Z", f.name)
            if m:
                refs.append(PageRef(library_id, collection_id, volume_id, int(m.group(1))))
        return refs
