"""Single command-line entry point for every pipeline stage.

    codexforge <stage> --config pipeline.json [--data-root ...]

Exit codes: 0 success, 1 hard failure, 2 completed with per-item failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evalkit, pipeline, simgraph, textsearch
from .pipeline import ConfigError, PipelineConfig, PipelineError

log = logging.getLogger("codexforge")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--data-root", help="data root override")


def _load_config(args: argparse.Namespace, **overrides) -> PipelineConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.config:
        return PipelineConfig.from_file(args.config, data_root=getattr(args, "data_root", None),
                                        **overrides)
    data_root = getattr(args, "data_root", None)
    if not data_root:
        raise ConfigError("either --config or --data-root is required")
    return PipelineConfig(data_root=data_root, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codexforge",
                                     description="manuscript illustration pipeline")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="harvest pages from a IIIF manifest")
    _add_common(p)
    p.add_argument("--manifest", help="manifest URL or local JSON file")
    p.add_argument("--max-in-flight", type=int, default=None)
    p.add_argument("--rps", type=float, default=None)
    p.add_argument("--resume", action="store_true", default=None)
    p.add_argument("--library", dest="library_id")
    p.add_argument("--collection", dest="collection_id")

    for stage in ("classify", "detect", "crop", "caption", "embed", "all"):
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_common(p)
        p.add_argument("--recall-mode", action="store_true", default=None,
                       help="use the recall-favoring classification threshold")

    p = sub.add_parser("graph", help="similarity graph stages")
    p.add_argument("action", nargs="?", default="build",
                   choices=["build", "communities", "export"])
    _add_common(p)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mutual", action="store_true", default=None)
    p.add_argument("--format", default="csv", choices=["csv", "json"],
                   help="export format (export action)")
    p.add_argument("--out", help="export output path")

    p = sub.add_parser("index", help="search index stages")
    p.add_argument("action", nargs="?", default="build", choices=["build", "query"])
    _add_common(p)
    p.add_argument("query_text", nargs="?", help="query string (query action)")
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--all-terms", action="store_true",
                   help="require every query term to match")

    p = sub.add_parser("serve", help="run the HTTP API")
    _add_common(p)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--ui-dir", help="built frontend assets to serve at /ui/")

    p = sub.add_parser("eval", help="evaluation utilities")
    eval_sub = p.add_subparsers(dest="eval_kind", required=True)
    pc = eval_sub.add_parser("classify")
    pc.add_argument("--predictions", required=True)
    pc.add_argument("--truth", required=True)
    pc.add_argument("--threshold", type=float, default=0.5)
    pc.add_argument("--out", default="metrics.json")
    pd = eval_sub.add_parser("detect")
    pd.add_argument("--predictions", required=True)
    pd.add_argument("--truth", required=True)
    pd.add_argument("--iou", type=float, default=0.5)
    pd.add_argument("--conf", type=float, default=0.0)
    pd.add_argument("--ignore", help="JSON of regions not charged as false positives")
    pd.add_argument("--out", default="metrics.json")
    pm = eval_sub.add_parser("masks2boxes")
    pm.add_argument("--mask", required=True, help="binary mask image (nonzero = foreground)")
    pm.add_argument("--radius", type=int, default=10)
    pm.add_argument("--min-area", type=int, default=0)
    pm.add_argument("--out", help="boxes JSON output path")

    p = sub.add_parser("bench", help="per-page throughput benchmark")
    _add_common(p)
    p.add_argument("--pages", help="directory of page JPEGs (defaults to data root)")
    p.add_argument("--max-pages", type=int)

    return parser


def _finish(report: pipeline.StageReport) -> int:
    print(json.dumps({"stage": report.stage, "exit_code": report.exit_code,
                      "counts": report.counts, "notes": report.notes}, indent=2))
    return report.exit_code


def _cmd_stage(args: argparse.Namespace, stage: str) -> int:
    overrides = {}
    for key in ("manifest", "library_id", "collection_id"):
        if getattr(args, key, None):
            overrides[key] = getattr(args, key)
    if getattr(args, "max_in_flight", None):
        overrides["ingest_max_in_flight"] = args.max_in_flight
    if getattr(args, "rps", None):
        overrides["ingest_rps"] = args.rps
    if getattr(args, "resume", None):
        overrides["ingest_resume"] = True
    if getattr(args, "recall_mode", None):
        overrides["recall_mode"] = True
    config = _load_config(args, **overrides)
    return _finish(pipeline.run(stage, config))


def _cmd_graph(args: argparse.Namespace) -> int:
    overrides = {}
    if args.k is not None:
        overrides["graph_k"] = args.k
    if args.seed is not None:
        overrides["graph_seed"] = args.seed
    if args.mutual:
        overrides["graph_mutual"] = True
    config = _load_config(args, **overrides)
    if args.action == "build":
        return _finish(pipeline.run("graph", config))
    graph_path = config.layout.graph_path()
    if not graph_path.exists():
        raise PipelineError(f"no graph at {graph_path}; run `codexforge graph build` first")
    graph = simgraph.load_graph_json(graph_path)
    if args.action == "communities":
        result = simgraph.detect_communities(graph, seed=config.graph_seed)
        sizes: dict[int, int] = {}
        for community in result.assignment.values():
            sizes[community] = sizes.get(community, 0) + 1
        print(json.dumps({"communities": len(sizes),
                          "modularity": round(result.modularity, 6),
                          "sizes": {str(k): v for k, v in sorted(sizes.items())}}, indent=2))
        return 0
    out = Path(args.out) if args.out else config.layout.root / f"graph.{args.format}"
    simgraph.export_graph(graph, out, fmt=args.format)
    print(f"wrote {out}")
    return 0


def _cmd_index(args: argparse.Namespace) -> int:
    config = _load_config(args)
    if args.action == "build":
        return _finish(pipeline.run("index", config))
    if not args.query_text:
        raise ConfigError("index query needs a query string")
    index_path = config.layout.index_path()
    if not index_path.exists():
        raise PipelineError(f"no index at {index_path}; run `codexforge index build` first")
    index = textsearch.InvertedIndex.load(index_path)
    hits = index.query(args.query_text, top_k=args.top, require_all=args.all_terms)
    for record_id, score in hits:
        print(f"{score:10.4f}  {record_id}")
    if not hits:
        print("(no results)")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from . import service

    config = _load_config(args)
    api = service.ApiConfig(
        data_root=config.data_root,
        index_path=str(config.layout.index_path()),
        graph_path=str(config.layout.graph_path()),
        ui_dir=args.ui_dir,
        host=args.host or config.serve_host,
        port=args.port or config.serve_port,
    )
    service.serve(api)
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    if args.eval_kind == "classify":
        metrics = pipeline.eval_classify_files(args.predictions, args.truth, args.threshold)
    elif args.eval_kind == "detect":
        metrics = pipeline.eval_detect_files(args.predictions, args.truth,
                                             iou_threshold=args.iou, conf_threshold=args.conf,
                                             ignore_path=args.ignore)
    else:
        import cv2

        image = cv2.imread(args.mask, cv2.IMREAD_GRAYSCALE)
        if image is None:
            raise PipelineError(f"cannot read mask {args.mask}")
        mask = evalkit.BinaryMask.from_array(image > 0)
        boxes = evalkit.masks_to_boxes(mask, closing_radius_px=args.radius,
                                       min_area_px=args.min_area)
        payload = [[b.x_min, b.y_min, b.x_max, b.y_max] for b in boxes]
        if args.out:
            Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
        print(json.dumps({"boxes": len(boxes)}))
        return 0
    evalkit.write_metrics_json(args.out, metrics)
    rows = [[k, f"{v:.4f}" if isinstance(v, float) else v] for k, v in sorted(metrics.items())]
    print(evalkit.format_text_table(["metric", "value"], rows))
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    config = _load_config(args)
    report = pipeline.run("bench", config, pages_dir=args.pages, max_pages=args.max_pages)
    print(json.dumps(report.timings_ms, indent=2))
    for note in report.notes:
        print(note)
    return report.exit_code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("ingest", "classify", "detect", "crop", "caption", "embed", "all"):
            return _cmd_stage(args, args.command)
        if args.command == "graph":
            return _cmd_graph(args)
        if args.command == "index":
            return _cmd_index(args)
        if args.command == "serve":
            return _cmd_serve(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "bench":
            return _cmd_bench(args)
        raise ConfigError(f"unknown command {args.command}")
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
