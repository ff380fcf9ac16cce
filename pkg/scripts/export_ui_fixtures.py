#!/usr/bin/env python3
"""Regenerate the canned API responses the frontend test suite runs
against. Builds the fixture corpus, runs the pipeline, spins up the API
in-process, and snapshots the responses the UI consumes.

    python3 scripts/export_ui_fixtures.py --out frontend/test/fixtures
"""

import argparse
import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from codexforge.fixtures import build_fixture_corpus
from codexforge.pipeline import run
from codexforge.service import ApiConfig, create_app


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as workdir:
        corpus = build_fixture_corpus(Path(workdir) / "corpus")
        report = run("all", corpus.config)
        assert report.exit_code == 0, "fixture pipeline failed"
        app = create_app(ApiConfig(data_root=corpus.config.data_root))
        with TestClient(app) as client:
            search_dragon = client.get("/api/search", params={"q": "dragon", "top": 20}).json()
            first_id = search_dragon["results"][0]["record_id"]
            snapshots = {
                "search_dragon.json": search_dragon,
                "search_empty.json": client.get(
                    "/api/search", params={"q": "zzzunmatchable"}
                ).json(),
                "record_detail.json": client.get(f"/api/illustrations/{first_id}").json(),
                "record_neighbors.json": client.get(
                    f"/api/illustrations/{first_id}/neighbors", params={"k": 8}
                ).json(),
                "communities.json": client.get("/api/communities").json(),
                "graph.json": client.get("/api/graph").json(),
                "stats.json": client.get("/api/stats").json(),
            }
        community_id = snapshots["communities.json"]["communities"][0]["community_id"]
        with TestClient(app) as client:
            snapshots["community_detail.json"] = client.get(
                f"/api/communities/{community_id}"
            ).json()
    for name, payload in snapshots.items():
        (out / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"wrote {out / name}")


if __name__ == "__main__":
    main()
