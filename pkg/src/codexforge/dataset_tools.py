"""Labeled-dataset management: label manifests, class-imbalance
downsampling, stratified splits, and YOLO-format annotation I/O."""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .catalog import BoundingBox, PageLabel, PageRef, make_page_id, parse_page_id


class DatasetError(Exception):
    pass


class NotEnoughNegatives(DatasetError):
    pass


class BadFractions(DatasetError):
    pass


class MalformedAnnotationLine(DatasetError):
    def __init__(self, path, line_number: int, reason: str):
        super().__init__(f"{path}:{line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


@dataclass(frozen=True)
class LabeledPage:
    page: PageRef
    label: PageLabel
    source: str = "manual"  # manual | model_assisted_corrected


@dataclass(frozen=True)
class BoxAnnotation:
    """One normalized box: class id plus center/size relative to the image."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    _EPS = 1e-9

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise DatasetError(f"class_id must be >= 0, got {self.class_id}")
        if not (0 < self.w <= 1 + self._EPS and 0 < self.h <= 1 + self._EPS):
            raise DatasetError(f"w,h must be in (0,1], got ({self.w},{self.h})")
        if not (0 <= self.cx <= 1 and 0 <= self.cy <= 1):
            raise DatasetError(f"cx,cy must be in [0,1], got ({self.cx},{self.cy})")
        for corner in (self.cx - self.w / 2, self.cy - self.h / 2):
            if corner < -1e-6:
                raise DatasetError("box extends past the unit square")
        for corner in (self.cx + self.w / 2, self.cy + self.h / 2):
            if corner > 1 + 1e-6:
                raise DatasetError("box extends past the unit square")

    def to_pixel_box(self, image_width: float, image_height: float) -> BoundingBox:
        return BoundingBox(
            x_min=max(0.0, (self.cx - self.w / 2) * image_width),
            y_min=max(0.0, (self.cy - self.h / 2) * image_height),
            x_max=min(float(image_width), (self.cx + self.w / 2) * image_width),
            y_max=min(float(image_height), (self.cy + self.h / 2) * image_height),
        )

    @classmethod
    def from_pixel_box(
        cls, box: BoundingBox, image_width: float, image_height: float, class_id: int = 0
    ) -> "BoxAnnotation":
        return cls(
            class_id=class_id,
            cx=(box.x_min + box.x_max) / 2 / image_width,
            cy=(box.y_min + box.y_max) / 2 / image_height,
            w=box.width / image_width,
            h=box.height / image_height,
        )


@dataclass(frozen=True)
class SplitAssignment:
    train: frozenset[PageRef]
    val: frozenset[PageRef]
    test: frozenset[PageRef]
    seed: int
    fractions: tuple[float, float, float]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "fractions": list(self.fractions),
            "train": sorted(make_page_id(p) for p in self.train),
            "val": sorted(make_page_id(p) for p in self.val),
            "test": sorted(make_page_id(p) for p in self.test),
        }

    @classmethod
    def from_json(cls, d: dict) -> "SplitAssignment":
        return cls(
            train=frozenset(parse_page_id(p) for p in d["train"]),
            val=frozenset(parse_page_id(p) for p in d["val"]),
            test=frozenset(parse_page_id(p) for p in d["test"]),
            seed=d["seed"],
            fractions=tuple(d["fractions"]),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def rebalance(pages: Sequence[LabeledPage], drop_negatives: int, seed: int) -> list[LabeledPage]:
    """Downsample the negative class, keeping every positive.

    Exactly drop_negatives no_art pages are removed uniformly at random
    under the given seed; relative order of survivors is preserved.
    Downsampling only: oversampling and synthesis distort the corpus.
    """
    negative_positions = [i for i, p in enumerate(pages) if p.label == PageLabel.NO_ART]
    if drop_negatives > len(negative_positions):
        raise NotEnoughNegatives(
            f"asked to drop {drop_negatives} negatives but only {len(negative_positions)} exist"
        )
    if drop_negatives < 0:
        raise DatasetError("drop_negatives must be >= 0")
    dropped = set(random.Random(seed).sample(negative_positions, drop_negatives))
    return [p for i, p in enumerate(pages) if i not in dropped]


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of n items across fractions."""
    raw = [f * n for f in fractions]
    counts = [int(x) for x in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def split(
    pages: Sequence[LabeledPage],
    fractions: tuple[float, float, float] = (0.70, 0.20, 0.10),
    stratified: bool = True,
    seed: int = 0,
) -> SplitAssignment:
    """Partition pages into train/val/test.

    Stratified mode allocates per class, keeping per-class counts within
    one of the exact fraction. Deterministic for a given seed.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise BadFractions(f"need three non-negative fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must sum to 1, got {sum(fractions)}")
    rng = random.Random(seed)
    buckets: tuple[list[PageRef], list[PageRef], list[PageRef]] = ([], [], [])
    if stratified:
        groups = [
            [p for p in pages if p.label == PageLabel.ART],
            [p for p in pages if p.label == PageLabel.NO_ART],
        ]
    else:
        groups = [list(pages)]
    for group in groups:
        shuffled = list(group)
        rng.shuffle(shuffled)
        counts = _allocate(len(shuffled), fractions)
        start = 0
        for bucket, count in zip(buckets, counts):
            bucket.extend(p.page for p in shuffled[start : start + count])
            start += count
    return SplitAssignment(
        train=frozenset(buckets[0]),
        val=frozenset(buckets[1]),
        test=frozenset(buckets[2]),
        seed=seed,
        fractions=tuple(fractions),
    )


def write_yolo_annotations(path: Path | str, annotations: Iterable[BoxAnnotation]) -> None:
    lines = [f"{a.class_id} {a.cx:.6f} {a.cy:.6f} {a.w:.6f} {a.h:.6f}" for a in annotations]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_yolo_annotations(path: Path | str) -> list[BoxAnnotation]:
    """Parse one 'class cx cy w h' line per box; bad lines carry their number."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 5:
                raise MalformedAnnotationLine(path, line_number, f"expected 5 fields, got {len(fields)}")
            try:
                class_id = int(fields[0])
                cx, cy, w, h = (float(v) for v in fields[1:])
            except ValueError as exc:
                raise MalformedAnnotationLine(path, line_number, str(exc)) from exc
            try:
                out.append(BoxAnnotation(class_id, cx, cy, w, h))
            except DatasetError as exc:
                raise MalformedAnnotationLine(path, line_number, str(exc)) from exc
    return out


def write_label_manifest(path: Path | str, pages: Iterable[LabeledPage]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["page_id", "label", "source"])
        for p in pages:
            writer.writerow([make_page_id(p.page), p.label.value, p.source])


def read_label_manifest(path: Path | str) -> list[LabeledPage]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                LabeledPage(
                    page=parse_page_id(row["page_id"]),
                    label=PageLabel(row["label"]),
                    source=row.get("source") or "manual",
                )
            )
    return out
