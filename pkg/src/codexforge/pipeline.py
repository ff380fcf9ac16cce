"""Stage orchestration: each pipeline stage reads its predecessor's files
and writes its own, so stages can run independently, resume, and be
re-executed without changing data artifacts (reports are run logs and
carry timestamps; data files are deterministic).

Stage order: ingest -> classify -> detect -> crop -> caption -> embed ->
graph -> index (-> serve). `all` composes them, stopping at the first
hard failure.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import caption as caption_mod
from . import catalog, evalkit, iiif_ingest, simgraph, textsearch
from .backends import load_backend
from .catalog import (
    BoundingBox,
    DataLayout,
    IllustrationRecord,
    PageLabel,
    PageRef,
    image_url_from_service,
    make_page_id,
    make_record_id,
    parse_page_id,
)
from .inference import (
    InferenceConfig,
    classify_page,
    crop_illustrations,
    decode_detections,
    decode_image,
    letterbox,
    save_crop,
)

log = logging.getLogger("codexforge")

STAGES = (
    "ingest", "classify", "detect", "crop", "caption",
    "embed", "graph", "index", "serve", "eval", "all",
)


class PipelineError(Exception):
    pass


class ConfigError(PipelineError):
    pass


class MissingPrerequisite(PipelineError):
    def __init__(self, artifact: str):
        super().__init__(f"missing prerequisite: {artifact}")
        self.artifact = artifact


@dataclass
class PipelineConfig:
    data_root: str
    library_id: str = "lib"
    collection_id: str = "col"
    manifest: str | None = None
    classifier_model: str | None = None
    detector_model: str | None = None
    encoder_model: str | None = None
    caption_endpoint: str | None = None
    caption_model: str = "llava"
    caption_prompt: str = caption_mod.DEFAULT_PROMPT
    caption_parallelism: int = 4
    caption_rps: float = 2.0
    caption_cache_dir: str | None = None
    graph_k: int = 50
    graph_mutual: bool = False
    graph_seed: int = 7
    split_seed: int = 13
    rebalance_seed: int = 29
    recall_mode: bool = False
    ingest_max_in_flight: int = 8
    ingest_rps: float = 4.0
    ingest_size_token: str = "full"
    ingest_resume: bool = True
    iiif_service_template: str = "https://iiif.example.org/{library}/{collection}/{volume}/p{page:05d}"
    reduced_decode: bool = True
    serve_host: str = "127.0.0.1"
    serve_port: int = 8077
    bench_target_s_per_page: float = 0.06
    eval_spec: dict | None = None
    inference: InferenceConfig = field(default_factory=InferenceConfig)

    def __post_init__(self) -> None:
        if not self.data_root:
            raise ConfigError("data_root is required")

    @property
    def layout(self) -> DataLayout:
        return DataLayout(Path(self.data_root))

    @property
    def class_threshold(self) -> float:
        if self.recall_mode:
            return self.inference.recall_mode_threshold
        return self.inference.class_threshold

    @property
    def seeds(self) -> dict:
        return {
            "graph_seed": self.graph_seed,
            "split_seed": self.split_seed,
            "rebalance_seed": self.rebalance_seed,
        }

    def to_json(self) -> dict:
        payload = dataclasses.asdict(self)
        payload["inference"] = dataclasses.asdict(self.inference)
        return payload

    @classmethod
    def from_json(cls, payload: dict) -> "PipelineConfig":
        payload = dict(payload)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "inference" in payload and isinstance(payload["inference"], dict):
            inf = dict(payload["inference"])
            for key in ("norm_mean", "norm_std"):
                if key in inf:
                    inf[key] = tuple(inf[key])
            payload["inference"] = InferenceConfig(**inf)
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "PipelineConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        payload.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_json(payload)


@dataclass
class StageReport:
    stage: str
    started_at: str
    duration_s: float = 0.0
    exit_code: int = 0
    counts: dict = field(default_factory=dict)
    timings_ms: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, reports_dir: Path) -> Path:
        reports_dir.mkdir(parents=True, exist_ok=True)
        stamp = self.started_at.replace(":", "").replace("-", "").replace(".", "")
        path = reports_dir / f"{self.stage}-{stamp}.json"
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return path


def _new_report(stage: str, config: PipelineConfig) -> StageReport:
    return StageReport(
        stage=stage,
        started_at=datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ"),
        seeds=config.seeds,
    )


def _percentiles(samples: list[float]) -> dict:
    if not samples:
        return {}
    arr = np.asarray(samples)
    return {
        "median": float(np.median(arr)),
        "p95": float(np.percentile(arr, 95)),
        "mean": float(arr.mean()),
    }


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _require_model(path: str | None, which: str) -> str:
    if not path:
        raise ConfigError(f"{which} model not configured")
    if not Path(path).exists():
        raise ConfigError(f"{which} model file {path} does not exist")
    return path


# --------------------------------------------------------------- stages


def run_ingest(config: PipelineConfig) -> StageReport:
    report = _new_report("ingest", config)
    started = time.perf_counter()
    if not config.manifest:
        raise ConfigError("ingest needs a manifest URL or file path")
    if config.manifest.startswith(("http://", "https://")):
        import requests

        document = requests.get(config.manifest, timeout=60).json()
    else:
        document = json.loads(Path(config.manifest).read_text())
    manifest = iiif_ingest.parse_manifest(document)
    plan = iiif_ingest.plan_downloads(
        manifest, config.layout, config.library_id, config.collection_id,
        resume=config.ingest_resume, size_token=config.ingest_size_token,
    )
    iiif_ingest.write_manifest_index(manifest, plan, config.layout)
    ingest_report = iiif_ingest.fetch_pages(
        plan, max_in_flight=config.ingest_max_in_flight, per_host_rps=config.ingest_rps,
    )
    if plan.jobs:
        first = plan.jobs[0].page
        volume_dir = config.layout.volume_dir_for(first)
        volume_dir.mkdir(parents=True, exist_ok=True)
        (volume_dir / "ingest_report.json").write_text(
            json.dumps(ingest_report.to_json(), indent=2, sort_keys=True) + "\n"
        )
    report.counts = {
        "pages_ok": ingest_report.ok,
        "pages_failed": ingest_report.failed,
        "pages_skipped": ingest_report.skipped,
    }
    report.failures = [vars(f) for f in ingest_report.failures]
    report.exit_code = 2 if ingest_report.failed else 0
    report.duration_s = time.perf_counter() - started
    return report


def _volumes_or_fail(config: PipelineConfig) -> list[tuple[str, str, str]]:
    volumes = config.layout.volumes()
    if not volumes:
        raise MissingPrerequisite("page images under the data root")
    return volumes


def run_classify(config: PipelineConfig) -> StageReport:
    report = _new_report("classify", config)
    started = time.perf_counter()
    backend = load_backend(_require_model(config.classifier_model, "classifier"), "classifier")
    layout = config.layout
    threshold = config.class_threshold
    min_side = config.inference.classifier_input if config.reduced_decode else None
    decode_ms: list[float] = []
    infer_ms: list[float] = []
    n_pages = n_art = 0
    for library, collection, volume in _volumes_or_fail(config):
        rows = []
        for page in layout.page_refs(library, collection, volume):
            t0 = time.perf_counter()
            image = decode_image(layout.page_path(page), min_side=min_side)
            t1 = time.perf_counter()
            result = classify_page(backend, page, image, config.inference, threshold)
            t2 = time.perf_counter()
            decode_ms.append((t1 - t0) * 1000)
            infer_ms.append((t2 - t1) * 1000)
            rows.append(result)
            n_pages += 1
            n_art += result.label == PageLabel.ART
        lines = [
            json.dumps(
                {"page_id": make_page_id(r.page), "prob_art": r.prob_art,
                 "label": r.label.value, "threshold_used": r.threshold_used},
                sort_keys=True,
            )
            for r in rows
        ]
        _atomic_write_text(layout.classifications_path(library, collection, volume),
                           "\n".join(lines) + ("\n" if lines else ""))
    if n_pages == 0:
        raise MissingPrerequisite("page images under the data root")
    report.counts = {"pages": n_pages, "art": n_art, "no_art": n_pages - n_art,
                     "filtered_fraction": round(1 - n_art / n_pages, 4)}
    report.timings_ms = {"decode": _percentiles(decode_ms), "classify": _percentiles(infer_ms)}
    report.duration_s = time.perf_counter() - started
    log.info("classify: %d pages, %d art", n_pages, n_art)
    return report


def _load_classifications(layout: DataLayout, library: str, collection: str, volume: str):
    path = layout.classifications_path(library, collection, volume)
    if not path.exists():
        raise MissingPrerequisite("page classifications")
    rows = []
    for line in path.read_text().splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def run_detect(config: PipelineConfig) -> StageReport:
    report = _new_report("detect", config)
    started = time.perf_counter()
    backend = load_backend(_require_model(config.detector_model, "detector"), "detector")
    layout = config.layout
    inference = config.inference
    min_side = inference.detector_input if config.reduced_decode else None
    decode_ms: list[float] = []
    detect_ms: list[float] = []
    n_pages = n_boxes = n_skipped = 0
    for library, collection, volume in _volumes_or_fail(config):
        rows = []
        for entry in _load_classifications(layout, library, collection, volume):
            page = parse_page_id(entry["page_id"])
            if entry["label"] != PageLabel.ART.value:
                n_skipped += 1
                continue
            t0 = time.perf_counter()
            image = decode_image(layout.page_path(page), min_side=min_side)
            t1 = time.perf_counter()
            tensor, transform = letterbox(image, inference.detector_input)
            (raw,) = backend.run(tensor[None, ...], keys=[entry["page_id"]])
            boxes = decode_detections(raw, transform, inference.conf_threshold, inference.nms_iou)
            if min_side is not None:
                boxes = _rescale_boxes_to_full(boxes, layout.page_path(page), transform)
            t2 = time.perf_counter()
            decode_ms.append((t1 - t0) * 1000)
            detect_ms.append((t2 - t1) * 1000)
            rows.append({
                "page_id": entry["page_id"],
                "boxes": [[b.x_min, b.y_min, b.x_max, b.y_max, b.confidence] for b in boxes],
            })
            n_pages += 1
            n_boxes += len(boxes)
        lines = [json.dumps(r, sort_keys=True) for r in rows]
        _atomic_write_text(layout.detections_path(library, collection, volume),
                           "\n".join(lines) + ("\n" if lines else ""))
    report.counts = {"pages_detected": n_pages, "pages_skipped_no_art": n_skipped,
                     "boxes": n_boxes}
    report.timings_ms = {"decode": _percentiles(decode_ms), "detect": _percentiles(detect_ms)}
    report.duration_s = time.perf_counter() - started
    log.info("detect: %d art pages, %d boxes", n_pages, n_boxes)
    return report


def _rescale_boxes_to_full(boxes, page_path: Path, transform) -> list[BoundingBox]:
    """Detections computed on a reduced decode are mapped back to the
    original page resolution so crops and IIIF links agree."""
    from PIL import Image

    with Image.open(page_path) as im:
        full_w, full_h = im.size
    if transform.orig_width == full_w and transform.orig_height == full_h:
        return list(boxes)
    sx = full_w / transform.orig_width
    sy = full_h / transform.orig_height
    rescaled = []
    for b in boxes:
        grown = BoundingBox(b.x_min * sx, b.y_min * sy, b.x_max * sx, b.y_max * sy, b.confidence)
        clamped = grown.clamped(full_w, full_h)
        if clamped is not None:
            rescaled.append(clamped)
    return rescaled


def _service_base_for(config: PipelineConfig, layout: DataLayout, page: PageRef,
                      manifest_pages: dict | None) -> str:
    if manifest_pages:
        entry = manifest_pages.get(str(page.page_index))
        if entry and entry.get("image_service_base"):
            return entry["image_service_base"]
    return config.iiif_service_template.format(
        library=page.library_id, collection=page.collection_id,
        volume=page.volume_id, page=page.page_index,
    )


def run_crop(config: PipelineConfig) -> StageReport:
    report = _new_report("crop", config)
    started = time.perf_counter()
    layout = config.layout
    n_crops = n_pages = 0
    for library, collection, volume in _volumes_or_fail(config):
        detections_path = layout.detections_path(library, collection, volume)
        if not detections_path.exists():
            raise MissingPrerequisite("detections")
        manifest_pages = None
        manifest_index = layout.manifest_index_path(library, collection, volume)
        if manifest_index.exists():
            manifest_pages = json.loads(manifest_index.read_text()).get("pages", {})
        previous = {
            r.record_id: r
            for r in catalog.load_records(layout.records_path(library, collection, volume))
        }
        records: list[IllustrationRecord] = []
        for line in detections_path.read_text().splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            page = parse_page_id(entry["page_id"])
            boxes = [BoundingBox(*b[:4], confidence=b[4]) for b in entry["boxes"]]
            if not boxes:
                continue
            image = decode_image(layout.page_path(page))
            n_pages += 1
            for box_index, (crop, box) in enumerate(crop_illustrations(image, boxes)):
                record_id = make_record_id(page, box_index)
                crop_path = layout.crop_path(page, record_id)
                save_crop(crop_path, crop)
                service_base = _service_base_for(config, layout, page, manifest_pages)
                record = IllustrationRecord(
                    record_id=record_id,
                    page=page,
                    box=box,
                    crop_path=str(crop_path.relative_to(layout.root)),
                    iiif_url=image_url_from_service(service_base, "full"),
                )
                old = previous.get(record_id)
                if old is not None:
                    record.caption = old.caption
                    record.caption_model = old.caption_model
                    record.embedding_id = old.embedding_id
                records.append(record)
                n_crops += 1
        catalog.write_records(layout.records_path(library, collection, volume), records)
    report.counts = {"pages_cropped": n_pages, "crops": n_crops}
    report.duration_s = time.perf_counter() - started
    log.info("crop: %d crops from %d pages", n_crops, n_pages)
    return report


def run_caption(config: PipelineConfig) -> StageReport:
    report = _new_report("caption", config)
    started = time.perf_counter()
    if not config.caption_endpoint:
        raise ConfigError("caption endpoint not configured")
    layout = config.layout
    transport = caption_mod.make_transport(config.caption_endpoint)
    cache_dir = config.caption_cache_dir or str(layout.root / ".caption_cache")
    cache = caption_mod.CaptionCache(cache_dir)
    totals = {"ok": 0, "failed": 0, "skipped": 0, "from_cache": 0}
    for library, collection, volume in _volumes_or_fail(config):
        records_path = layout.records_path(library, collection, volume)
        if not records_path.exists():
            raise MissingPrerequisite("illustration records")
        records, corrupt = catalog.read_records(records_path)
        if corrupt:
            report.failures.extend(
                {"volume": volume, "line": c.line_number, "reason": c.reason} for c in corrupt
            )
        updated, run_report = caption_mod.caption_corpus(
            records,
            crop_loader=lambda r: (layout.root / r.crop_path).read_bytes(),
            transport=transport,
            cache=cache,
            model_name=config.caption_model,
            prompt=config.caption_prompt,
            parallelism=config.caption_parallelism,
            rps=config.caption_rps,
        )
        catalog.write_records(records_path, updated)
        for key in totals:
            totals[key] += getattr(run_report, key)
        report.failures.extend(
            {"record_id": rid, "error": err} for rid, err in run_report.failures
        )
    report.counts = totals
    report.exit_code = 2 if totals["failed"] else 0
    report.duration_s = time.perf_counter() - started
    log.info("caption: %s", totals)
    return report


def run_embed(config: PipelineConfig) -> StageReport:
    report = _new_report("embed", config)
    started = time.perf_counter()
    backend = load_backend(_require_model(config.encoder_model, "encoder"), "encoder")
    layout = config.layout
    n_vectors = 0
    for library, collection, volume in _volumes_or_fail(config):
        records_path = layout.records_path(library, collection, volume)
        if not records_path.exists():
            raise MissingPrerequisite("illustration records")
        records, _ = catalog.read_records(records_path)
        if not records:
            continue
        store = simgraph.embed_corpus(records, layout.root, backend,
                                      input_size=config.inference.classifier_input)
        store.save(layout.vectors_path(library, collection, volume),
                   layout.vectors_index_path(library, collection, volume))
        n_vectors += len(store)
    report.counts = {"vectors": n_vectors}
    report.duration_s = time.perf_counter() - started
    log.info("embed: %d vectors", n_vectors)
    return report


def _load_all_records(config: PipelineConfig) -> list[IllustrationRecord]:
    layout = config.layout
    records: list[IllustrationRecord] = []
    for library, collection, volume in layout.volumes():
        path = layout.records_path(library, collection, volume)
        if path.exists():
            records.extend(catalog.load_records(path))
    return records


def run_graph(config: PipelineConfig) -> StageReport:
    report = _new_report("graph", config)
    started = time.perf_counter()
    layout = config.layout
    stores = []
    for library, collection, volume in _volumes_or_fail(config):
        f32 = layout.vectors_path(library, collection, volume)
        idx = layout.vectors_index_path(library, collection, volume)
        if f32.exists() and idx.exists():
            stores.append(simgraph.VectorStore.load(f32, idx))
    if not stores:
        raise MissingPrerequisite("embedding vectors")
    store = simgraph.VectorStore.concat(stores)
    if len(store) < 2:
        raise PipelineError(f"graph needs at least 2 vectors, have {len(store)}")
    k = min(config.graph_k, len(store) - 1)
    if k < config.graph_k:
        report.notes.append(f"k clamped from {config.graph_k} to {k} (corpus size {len(store)})")
    graph = simgraph.knn_graph(store, k=k, mutual=config.graph_mutual)
    communities = simgraph.detect_communities(graph, seed=config.graph_seed)
    records_by_id = {r.record_id: r for r in _load_all_records(config)}
    simgraph.export_graph(graph, layout.graph_path(), records_by_id)
    report.counts = {
        "nodes": graph.node_count,
        "edges": graph.edge_count,
        "k": k,
        "communities": len(set(communities.assignment.values())),
        "modularity": round(communities.modularity, 6),
    }
    report.duration_s = time.perf_counter() - started
    log.info("graph: %s", report.counts)
    return report


def run_index(config: PipelineConfig) -> StageReport:
    report = _new_report("index", config)
    started = time.perf_counter()
    records = _load_all_records(config)
    if not records:
        raise MissingPrerequisite("illustration records")
    index = textsearch.build_index(records)
    index.save(config.layout.index_path())
    report.counts = {"documents": index.num_documents,
                     "captioned": sum(1 for r in records if r.caption)}
    report.duration_s = time.perf_counter() - started
    log.info("index: %d documents", index.num_documents)
    return report


def run_serve(config: PipelineConfig) -> StageReport:
    from . import service

    report = _new_report("serve", config)
    api_config = service.ApiConfig(
        data_root=config.data_root,
        index_path=str(config.layout.index_path()),
        graph_path=str(config.layout.graph_path()),
        host=config.serve_host,
        port=config.serve_port,
    )
    service.serve(api_config)  # blocks until shutdown
    return report


def run_eval(config: PipelineConfig) -> StageReport:
    report = _new_report("eval", config)
    started = time.perf_counter()
    spec = config.eval_spec
    if not spec or "kind" not in spec:
        raise ConfigError("eval needs eval_spec: {kind, predictions, ground_truth}")
    kind = spec["kind"]
    if kind == "classify":
        metrics = eval_classify_files(spec["predictions"], spec["ground_truth"],
                                      threshold=spec.get("threshold", config.class_threshold))
    elif kind == "detect":
        metrics = eval_detect_files(spec["predictions"], spec["ground_truth"],
                                    iou_threshold=spec.get("iou_threshold", 0.5),
                                    conf_threshold=spec.get("conf_threshold",
                                                            config.inference.conf_threshold))
    else:
        raise ConfigError(f"unknown eval kind {kind!r}")
    out_path = Path(spec.get("output") or (config.layout.root / "metrics.json"))
    evalkit.write_metrics_json(out_path, metrics)
    report.counts = {k: v for k, v in metrics.items() if isinstance(v, (int, float))}
    report.duration_s = time.perf_counter() - started
    return report


def eval_classify_files(predictions_path: str, truth_path: str, threshold: float = 0.5) -> dict:
    """Predictions: JSON list of {page_id, prob_art}; truth: JSON mapping or
    list of {page_id, label} with labels art/no_art."""
    predictions = json.loads(Path(predictions_path).read_text())
    truth_raw = json.loads(Path(truth_path).read_text())
    if isinstance(truth_raw, list):
        truth = {t["page_id"]: t["label"] for t in truth_raw}
    else:
        truth = dict(truth_raw)
    scored = []
    pairs = []
    for pred in predictions:
        label = truth.get(pred["page_id"])
        if label is None:
            continue
        is_positive = label == PageLabel.ART.value
        prob = float(pred["prob_art"])
        scored.append(evalkit.ScoredLabel(prob, is_positive))
        pairs.append((is_positive, prob >= threshold))
    counts = evalkit.confusion_from_labels([p[0] for p in pairs], [p[1] for p in pairs])
    metrics = evalkit.classification_metrics(counts)
    metrics.update({"tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn,
                    "threshold": threshold})
    try:
        metrics["roc_auc"] = evalkit.roc_auc(scored)
        metrics["pr_auc"] = evalkit.pr_auc(scored)
    except evalkit.DegenerateLabels:
        pass
    return metrics


def _boxes_from_json(rows, with_conf: bool) -> list[BoundingBox]:
    boxes = []
    for row in rows:
        conf = float(row[4]) if with_conf and len(row) > 4 else 1.0
        boxes.append(BoundingBox(float(row[0]), float(row[1]), float(row[2]), float(row[3]),
                                 confidence=conf))
    return boxes


def eval_detect_files(predictions_path: str, truth_path: str,
                      iou_threshold: float = 0.5, conf_threshold: float = 0.0,
                      ignore_path: str | None = None) -> dict:
    """Predictions/truth files: JSON mapping image_id -> [[x0,y0,x1,y1(,conf)], ...].

    An optional ignore file (same shape, no confidences) marks regions
    where unmatched detections are not charged as false positives."""
    predictions = json.loads(Path(predictions_path).read_text())
    truth = json.loads(Path(truth_path).read_text())
    ignore = json.loads(Path(ignore_path).read_text()) if ignore_path else {}
    image_ids = sorted(set(predictions) | set(truth))
    dets = [_boxes_from_json(predictions.get(i, []), True) for i in image_ids]
    gts = [_boxes_from_json(truth.get(i, []), False) for i in image_ids]
    ignores = [_boxes_from_json(ignore.get(i, []), False) for i in image_ids]
    maps = evalkit.map_range(dets, gts)
    tp = fp = 0
    total_gt = sum(len(g) for g in gts)
    for det_boxes, gt_boxes, ignore_boxes in zip(dets, gts, ignores):
        confident = [b for b in det_boxes if b.confidence >= conf_threshold]
        result = evalkit.match_detections(confident, gt_boxes, iou_threshold,
                                          ignore_regions=ignore_boxes)
        tp += result.tp
        fp += result.fp
    counts = evalkit.ConfusionCounts(tp=tp, fp=fp, fn=total_gt - tp)
    point = evalkit.classification_metrics(counts)
    return {
        "map_50": maps["map_50"],
        "map_50_95": maps["map_50_95"],
        "precision": point["precision"],
        "recall": point["recall"],
        "tp": tp, "fp": fp, "fn": total_gt - tp,
        "iou_threshold": iou_threshold,
        "conf_threshold": conf_threshold,
        "images": len(image_ids),
    }


# ------------------------------------------------------------ bench


def bench(pages_dir: str | Path, config: PipelineConfig, max_pages: int | None = None) -> dict:
    """Per-page wall time through decode, classifier pre/inference, and
    detector letterbox/inference/post-processing, split by phase.

    `overhead` excludes backend inference time: it is the pipeline's own
    per-page cost (decode + pre/post-processing + bookkeeping). Model
    timing is reported alongside for comparison against a throughput
    target (default 0.06 s/page).
    """
    pages = sorted(Path(pages_dir).glob("**/*.jpg"))
    if max_pages:
        pages = pages[:max_pages]
    if len(pages) < 100:
        raise PipelineError(f"need >=100 pages to benchmark, found {len(pages)}")
    classifier = load_backend(_require_model(config.classifier_model, "classifier"), "classifier")
    detector = load_backend(_require_model(config.detector_model, "detector"), "detector")
    inference = config.inference
    threshold = config.class_threshold
    page_ref = PageRef("bench", "bench", "bench", 1)

    phases: dict[str, list[float]] = {
        "decode": [], "classify_pre": [], "classify_infer": [],
        "detect_decode": [], "detect_pre": [], "detect_infer": [], "detect_post": [],
    }
    overhead_ms: list[float] = []
    total_ms: list[float] = []
    n_art = 0
    min_side_cls = inference.classifier_input if config.reduced_decode else None
    min_side_det = inference.detector_input if config.reduced_decode else None

    from .inference import preprocess_classify

    for path in pages:
        page_total = 0.0
        page_infer = 0.0

        t0 = time.perf_counter()
        image = decode_image(path, min_side=min_side_cls)
        t1 = time.perf_counter()
        tensor = preprocess_classify(image, inference)[None, ...]
        t2 = time.perf_counter()
        (out,) = classifier.run(tensor, keys=[path.stem])
        t3 = time.perf_counter()
        phases["decode"].append((t1 - t0) * 1000)
        phases["classify_pre"].append((t2 - t1) * 1000)
        phases["classify_infer"].append((t3 - t2) * 1000)
        page_total += (t3 - t0) * 1000
        page_infer += (t3 - t2) * 1000

        value = float(np.asarray(out).reshape(()))
        prob = value if classifier.output_kind == "probability" else 1 / (1 + np.exp(-value))
        if prob >= threshold:
            n_art += 1
            t4 = time.perf_counter()
            det_image = decode_image(path, min_side=min_side_det)
            t5 = time.perf_counter()
            det_tensor, transform = letterbox(det_image, inference.detector_input)
            t6 = time.perf_counter()
            (raw,) = detector.run(det_tensor[None, ...], keys=[path.stem])
            t7 = time.perf_counter()
            decode_detections(raw, transform, inference.conf_threshold, inference.nms_iou)
            t8 = time.perf_counter()
            phases["detect_decode"].append((t5 - t4) * 1000)
            phases["detect_pre"].append((t6 - t5) * 1000)
            phases["detect_infer"].append((t7 - t6) * 1000)
            phases["detect_post"].append((t8 - t7) * 1000)
            page_total += (t8 - t4) * 1000
            page_infer += (t7 - t6) * 1000

        total_ms.append(page_total)
        overhead_ms.append(page_total - page_infer)

    result = {
        "pages": len(pages),
        "art_pages": n_art,
        "phases_ms": {name: _percentiles(samples) for name, samples in phases.items() if samples},
        "overhead_ms": _percentiles(overhead_ms),
        "total_ms": _percentiles(total_ms),
        "target_s_per_page": config.bench_target_s_per_page,
        "median_total_vs_target": round(
            (float(np.median(total_ms)) / 1000) / config.bench_target_s_per_page, 3
        ),
        "reduced_decode": config.reduced_decode,
    }
    return result


def run_bench(config: PipelineConfig, pages_dir: str | Path | None = None,
              max_pages: int | None = None) -> StageReport:
    report = _new_report("bench", config)
    started = time.perf_counter()
    directory = Path(pages_dir) if pages_dir else Path(config.data_root)
    result = bench(directory, config, max_pages=max_pages)
    report.counts = {"pages": result["pages"], "art_pages": result["art_pages"]}
    report.timings_ms = {
        "overhead": result["overhead_ms"],
        "total": result["total_ms"],
        "phases": result["phases_ms"],
    }
    report.notes.append(
        f"median total {result['total_ms']['median']:.2f} ms/page vs target "
        f"{result['target_s_per_page'] * 1000:.0f} ms"
    )
    report.duration_s = time.perf_counter() - started
    return report


# --------------------------------------------------------------- runner


_STAGE_FUNCS = {
    "ingest": run_ingest,
    "classify": run_classify,
    "detect": run_detect,
    "crop": run_crop,
    "caption": run_caption,
    "embed": run_embed,
    "graph": run_graph,
    "index": run_index,
    "serve": run_serve,
    "eval": run_eval,
}


def run(stage: str, config: PipelineConfig, **kwargs) -> StageReport:
    """Run one stage (or `all`), write its report, and return it.

    Exit codes on the report: 0 success, 2 completed with per-item
    failures. Hard failures raise (PipelineError and subclasses); the CLI
    maps them to exit code 1.
    """
    if stage == "bench":
        report = run_bench(config, **kwargs)
    elif stage == "all":
        report = _run_all(config)
    elif stage in _STAGE_FUNCS:
        report = _STAGE_FUNCS[stage](config)
    else:
        raise ConfigError(f"unknown stage {stage!r} (expected one of {STAGES})")
    report.write(config.layout.reports_dir())
    return report


def _run_all(config: PipelineConfig) -> StageReport:
    umbrella = _new_report("all", config)
    started = time.perf_counter()
    sequence = []
    if config.manifest:
        sequence.append("ingest")
    sequence += ["classify", "detect", "crop"]
    if config.caption_endpoint:
        sequence.append("caption")
    if config.encoder_model:
        sequence += ["embed", "graph"]
    sequence.append("index")
    worst = 0
    for stage in sequence:
        try:
            sub = run(stage, config)
        except PipelineError as exc:
            umbrella.exit_code = 1
            umbrella.counts[stage] = 1
            umbrella.failures.append({"stage": stage, "error": str(exc)})
            break
        umbrella.counts[stage] = sub.exit_code
        worst = max(worst, sub.exit_code)
    else:
        umbrella.exit_code = worst
    umbrella.duration_s = time.perf_counter() - started
    return umbrella
