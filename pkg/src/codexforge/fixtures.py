"""Synthetic fixture corpora: deterministic page images, stub model
sidecars, and caption sidecars. Used by the test suite, the benchmark,
and demo runs; nothing here touches the network."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .catalog import DataLayout, PageRef, make_page_id, make_record_id
from .inference import letterbox
from .pipeline import PipelineConfig

CAPTION_BANK = [
    "a dragon breathing fire above a castle",
    "a winged horse flying over mountains",
    "a crowned figure holding a scepter",
    "an angel holding a sword",
    "a floral border with golden leaves",
    "a medieval battle scene with knights",
    "a lion beneath an ornate initial",
    "a ship sailing on a stormy sea",
    "a saint reading an open book",
    "two birds perched on a vine",
    "a hunting scene with hounds and a stag",
    "an astronomer pointing at the stars",
]


def synth_page(
    width: int,
    height: int,
    seed: int,
    illustration_boxes: list[tuple[int, int, int, int]] | None = None,
) -> np.ndarray:
    """Parchment-toned page with text-like strokes and optional filled
    illustration rectangles; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    page = np.full((height, width, 3), 214, np.uint8)
    gradient = np.linspace(0, 16, height).astype(np.uint8)[:, None, None]
    page = (page - gradient).astype(np.uint8)
    # text block
    margin_x = width // 10
    for y in range(height // 12, height - height // 12, max(18, height // 45)):
        x = margin_x
        while x < width - margin_x:
            stroke = int(rng.integers(width // 60, width // 16))
            cv2.line(page, (x, y), (min(x + stroke, width - margin_x), y), (52, 44, 36), 2)
            x += stroke + int(rng.integers(6, 20))
    for box in illustration_boxes or []:
        x, y, w, h = box
        color = tuple(int(c) for c in rng.integers(40, 200, 3))
        cv2.rectangle(page, (x, y), (x + w, y + h), color, -1)
        cv2.rectangle(page, (x, y), (x + w, y + h), (30, 25, 20), 3)
        cv2.circle(page, (x + w // 2, y + h // 2), min(w, h) // 4,
                   tuple(int(c) for c in rng.integers(40, 200, 3)), -1)
    return page


@dataclass
class FixtureCorpus:
    root: Path
    config: PipelineConfig
    config_path: Path
    art_pages: list[PageRef]
    planted_boxes: dict[str, list[tuple[int, int, int, int]]]  # page_id -> boxes
    expected_record_ids: list[str]


def build_fixture_corpus(
    root: Path | str,
    pages_per_volume: int = 12,
    volumes: int = 2,
    page_size: tuple[int, int] = (600, 800),
    seed: int = 7,
) -> FixtureCorpus:
    """A small, fully offline corpus: every other page carries one or two
    planted illustrations; stub sidecars reproduce them exactly."""
    root = Path(root)
    data_root = root / "data"
    models_dir = root / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    layout = DataLayout(data_root)
    width, height = page_size

    classifier_outputs: dict[str, float] = {}
    detector_outputs: dict[str, list[list[float]]] = {}
    encoder_outputs: dict[str, list[float]] = {}
    captions: dict[str, str] = {}
    art_pages: list[PageRef] = []
    planted: dict[str, list[tuple[int, int, int, int]]] = {}
    expected_record_ids: list[str] = []
    dim = 16

    caption_cursor = 0
    for volume_index in range(1, volumes + 1):
        volume = f"ms{volume_index:03d}"
        for page_index in range(1, pages_per_volume + 1):
            page = PageRef("vlib", "lat", volume, page_index)
            page_id = make_page_id(page)
            is_art = page_index % 2 == 1
            boxes: list[tuple[int, int, int, int]] = []
            if is_art:
                boxes.append((width // 6, height // 5, width // 3, height // 4))
                if page_index % 4 == 1:
                    boxes.append((width // 2, int(height * 0.55), width // 4, height // 5))
            image = synth_page(width, height, seed * 1000 + volume_index * 100 + page_index, boxes)
            target = layout.page_path(page)
            target.parent.mkdir(parents=True, exist_ok=True)
            cv2.imwrite(str(target), cv2.cvtColor(image, cv2.COLOR_RGB2BGR),
                        [cv2.IMWRITE_JPEG_QUALITY, 90])
            classifier_outputs[page_id] = 0.92 if is_art else 0.04
            if not is_art:
                continue
            art_pages.append(page)
            planted[page_id] = boxes
            _, transform = letterbox(image, 640)
            rows = []
            for box_number, (x, y, w, h) in enumerate(boxes):
                cx, cy = transform.apply_point(x + w / 2, y + h / 2)
                rows.append([cx, cy, w * transform.scale, h * transform.scale,
                             0.9 - 0.05 * box_number])
            detector_outputs[page_id] = rows
            for box_number in range(len(boxes)):
                record_id = make_record_id(page, box_number)
                expected_record_ids.append(record_id)
                captions[record_id] = CAPTION_BANK[caption_cursor % len(CAPTION_BANK)]
                caption_cursor += 1
                # two embedding clusters, one per volume, with small jitter
                base = np.zeros(dim)
                base[0 if volume_index % 2 == 1 else 1] = 1.0
                jitter_rng = np.random.default_rng(abs(hash(record_id)) % (2**32))
                vector = base + jitter_rng.normal(0, 0.05, dim)
                encoder_outputs[record_id] = [round(float(v), 6) for v in vector]

    (models_dir / "classifier.json").write_text(json.dumps({
        "kind": "classifier", "output_kind": "probability",
        "outputs": classifier_outputs, "default": 0.04,
    }, indent=2, sort_keys=True))
    (models_dir / "detector.json").write_text(json.dumps({
        "kind": "detector", "outputs": detector_outputs, "default": [],
    }, indent=2, sort_keys=True))
    (models_dir / "encoder.json").write_text(json.dumps({
        "kind": "encoder", "outputs": encoder_outputs,
    }, indent=2, sort_keys=True))
    captions_path = root / "captions.json"
    captions_path.write_text(json.dumps({
        "captions": captions,
        "default_template": "an illustration ({record_id})",
    }, indent=2, sort_keys=True))

    config = PipelineConfig(
        data_root=str(data_root),
        library_id="vlib",
        collection_id="lat",
        classifier_model=str(models_dir / "classifier.json"),
        detector_model=str(models_dir / "detector.json"),
        encoder_model=str(models_dir / "encoder.json"),
        caption_endpoint=f"stub:{captions_path}",
        caption_rps=1e6,  # stub transport needs no throttling
        caption_parallelism=8,
        graph_k=8,
        graph_seed=7,
    )
    config_path = root / "pipeline.json"
    config_path.write_text(json.dumps(config.to_json(), indent=2, sort_keys=True) + "\n")
    return FixtureCorpus(
        root=root,
        config=config,
        config_path=config_path,
        art_pages=art_pages,
        planted_boxes=planted,
        expected_record_ids=expected_record_ids,
    )


def build_bench_pages(
    directory: Path | str,
    n_pages: int = 1000,
    width: int = 1500,
    height: int = 2000,
    art_fraction: float = 0.3,
    seed: int = 11,
) -> tuple[Path, Path]:
    """Pages plus classifier/detector sidecars for the throughput bench.

    Returns (classifier_sidecar, detector_sidecar). Roughly art_fraction
    of pages carry an illustration and a matching stub detection.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    classifier_outputs: dict[str, float] = {}
    detector_outputs: dict[str, list[list[float]]] = {}
    stride = max(1, round(1 / art_fraction)) if art_fraction > 0 else n_pages + 1
    for i in range(1, n_pages + 1):
        is_art = i % stride == 0
        boxes = [(width // 5, height // 4, width // 3, height // 4)] if is_art else []
        image = synth_page(width, height, seed * 100000 + i, boxes)
        name = f"p{i:05d}"
        cv2.imwrite(str(directory / f"{name}.jpg"), cv2.cvtColor(image, cv2.COLOR_RGB2BGR),
                    [cv2.IMWRITE_JPEG_QUALITY, 90])
        classifier_outputs[name] = 0.9 if is_art else 0.05
        if is_art:
            _, transform = letterbox(image, 640)
            x, y, w, h = boxes[0]
            cx, cy = transform.apply_point(x + w / 2, y + h / 2)
            detector_outputs[name] = [[cx, cy, w * transform.scale, h * transform.scale, 0.9]]
    classifier_path = directory / "classifier.json"
    classifier_path.write_text(json.dumps({
        "kind": "classifier", "output_kind": "probability",
        "outputs": classifier_outputs, "default": 0.05,
    }, sort_keys=True))
    detector_path = directory / "detector.json"
    detector_path.write_text(json.dumps({
        "kind": "detector", "outputs": detector_outputs, "default": [],
    }, sort_keys=True))
    return classifier_path, detector_path
