"""Read-only HTTP API over the catalog, search index, and similarity
graph. All responses are pure functions of immutable snapshots; the
pipeline mutates data through the CLI only, and a snapshot reload swaps
atomically via the admin endpoint.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from . import catalog, simgraph, textsearch
from .catalog import DataLayout, IllustrationRecord

SCHEMA_VERSION = 1

log = logging.getLogger("codexforge.service")


@dataclass
class ApiConfig:
    data_root: str
    index_path: str | None = None
    graph_path: str | None = None
    ui_dir: str | None = None
    cors_origins: tuple[str, ...] = ()
    max_page_size: int = 200
    host: str = "127.0.0.1"
    port: int = 8077


class Snapshot:
    """Everything the API serves, loaded once and treated as immutable."""

    def __init__(self, records: dict[str, IllustrationRecord],
                 index: textsearch.InvertedIndex | None,
                 graph: simgraph.SimilarityGraph | None,
                 stats: dict):
        self.records = records
        self.index = index
        self.graph = graph
        self.stats = stats

    @classmethod
    def load(cls, config: ApiConfig) -> "Snapshot":
        layout = DataLayout(Path(config.data_root))
        records: dict[str, IllustrationRecord] = {}
        pages_seen = 0
        for library, collection, volume in layout.volumes():
            pages_seen += len(layout.page_refs(library, collection, volume))
            for record in catalog.load_records(layout.records_path(library, collection, volume)):
                records[record.record_id] = record
        index = None
        index_path = Path(config.index_path) if config.index_path else layout.index_path()
        if index_path.exists():
            index = textsearch.InvertedIndex.load(index_path)
        graph = None
        graph_path = Path(config.graph_path) if config.graph_path else layout.graph_path()
        if graph_path.exists():
            graph = simgraph.load_graph_json(graph_path)
        stats = {
            "pages": pages_seen,
            "illustrations": len(records),
            "captions": sum(1 for r in records.values() if r.caption),
            "indexed_documents": index.num_documents if index else 0,
            "graph_nodes": graph.node_count if graph else 0,
            "graph_edges": graph.edge_count if graph else 0,
            "communities": len(set(graph.community.values())) if graph and graph.community else 0,
        }
        return cls(records, index, graph, stats)


def _record_payload(record: IllustrationRecord) -> dict:
    return {
        "record_id": record.record_id,
        "caption": record.caption,
        "caption_model": record.caption_model,
        "crop_url": f"/crops/{record.record_id}.jpg",
        "iiif_url": record.iiif_url,
        "page_ref": record.page.to_json(),
        "box": record.box.to_json(),
    }


def create_app(config: ApiConfig) -> FastAPI:
    app = FastAPI(title="codexforge", docs_url=None, redoc_url=None)
    app.state.config = config
    app.state.snapshot = Snapshot.load(config)

    if config.cors_origins:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(CORSMiddleware, allow_origins=list(config.cors_origins),
                           allow_methods=["GET", "POST"], allow_headers=["*"])

    def snapshot() -> Snapshot:
        return app.state.snapshot

    @app.get("/api/search")
    def search(q: str = "", top: int = 20, require_all: bool = False) -> Response:
        snap = snapshot()
        if not q.strip():
            return JSONResponse({"detail": "empty query"}, status_code=400)
        if snap.index is None:
            return JSONResponse({"detail": "index not loaded"}, status_code=503)
        headers = {}
        limit = app.state.config.max_page_size
        if top > limit:
            headers["X-Clamped-Top"] = str(limit)
            top = limit
        top = max(1, top)
        hits = snap.index.query(q, top_k=top, require_all=require_all)
        results = []
        for record_id, score in hits:
            record = snap.records.get(record_id)
            if record is None:
                continue
            payload = _record_payload(record)
            payload["score"] = score
            results.append(payload)
        body = {"schema_version": SCHEMA_VERSION, "query": q, "results": results}
        return JSONResponse(body, headers=headers)

    @app.get("/api/illustrations/{record_id}")
    def illustration(record_id: str) -> Response:
        record = snapshot().records.get(record_id)
        if record is None:
            return JSONResponse({"detail": "unknown record"}, status_code=404)
        body = {"schema_version": SCHEMA_VERSION, **_record_payload(record)}
        snap = snapshot()
        if snap.graph is not None:
            body["community"] = snap.graph.community.get(record_id)
        return JSONResponse(body)

    @app.get("/api/illustrations/{record_id}/neighbors")
    def neighbors(record_id: str, k: int = 10) -> Response:
        snap = snapshot()
        if snap.graph is None:
            return JSONResponse({"detail": "graph not loaded"}, status_code=503)
        if record_id not in snap.graph.adj:
            return JSONResponse({"detail": "unknown record"}, status_code=404)
        k = min(max(1, k), 50)
        items = []
        for neighbor_id, weight in snap.graph.neighbors(record_id)[:k]:
            record = snap.records.get(neighbor_id)
            entry = {"record_id": neighbor_id, "weight": weight}
            if record is not None:
                entry.update(_record_payload(record))
                entry["weight"] = weight
            items.append(entry)
        return JSONResponse({"schema_version": SCHEMA_VERSION, "record_id": record_id,
                             "neighbors": items})

    @app.get("/api/communities")
    def communities() -> Response:
        snap = snapshot()
        if snap.graph is None:
            return JSONResponse({"detail": "graph not loaded"}, status_code=503)
        members: dict[int, list[str]] = {}
        for node, community in sorted(snap.graph.community.items()):
            members.setdefault(community, []).append(node)
        entries = []
        for community_id in sorted(members):
            sample = members[community_id][:4]
            entries.append({
                "community_id": community_id,
                "size": len(members[community_id]),
                "sample_thumbnails": [f"/crops/{rid}.jpg" for rid in sample],
                "sample_records": sample,
            })
        return JSONResponse({"schema_version": SCHEMA_VERSION, "communities": entries})

    @app.get("/api/communities/{community_id}")
    def community_detail(community_id: int) -> Response:
        snap = snapshot()
        if snap.graph is None:
            return JSONResponse({"detail": "graph not loaded"}, status_code=503)
        members = sorted(n for n, c in snap.graph.community.items() if c == community_id)
        if not members:
            return JSONResponse({"detail": "unknown community"}, status_code=404)
        records = []
        for record_id in members:
            record = snap.records.get(record_id)
            records.append(_record_payload(record) if record else {"record_id": record_id})
        return JSONResponse({"schema_version": SCHEMA_VERSION, "community_id": community_id,
                             "size": len(members), "members": records})

    @app.get("/api/graph")
    def graph_payload() -> Response:
        snap = snapshot()
        layout = DataLayout(Path(app.state.config.data_root))
        graph_path = (Path(app.state.config.graph_path)
                      if app.state.config.graph_path else layout.graph_path())
        if not graph_path.exists():
            return JSONResponse({"detail": "graph not loaded"}, status_code=503)
        return JSONResponse(json.loads(graph_path.read_text()))

    @app.get("/api/stats")
    def stats() -> Response:
        return JSONResponse({"schema_version": SCHEMA_VERSION, **snapshot().stats})

    @app.post("/api/admin/reload")
    def reload_snapshot() -> Response:
        started = time.perf_counter()
        app.state.snapshot = Snapshot.load(app.state.config)
        return JSONResponse({"schema_version": SCHEMA_VERSION, "reloaded": True,
                             "duration_s": round(time.perf_counter() - started, 3),
                             **app.state.snapshot.stats})

    @app.get("/crops/{record_id}.jpg")
    def crop(record_id: str) -> Response:
        record = snapshot().records.get(record_id)
        if record is None:
            return JSONResponse({"detail": "unknown record"}, status_code=404)
        path = Path(app.state.config.data_root) / record.crop_path
        if not path.exists():
            return JSONResponse({"detail": "crop file missing"}, status_code=404)
        # ids are content-deterministic, so crops can be cached hard
        return FileResponse(path, media_type="image/jpeg",
                            headers={"Cache-Control": "public, max-age=31536000, immutable"})

    ui_dir = config.ui_dir
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve(config: ApiConfig) -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
