"""Illustration similarity graphs: embedding storage, exact k-nearest-
neighbor construction over cosine similarity, community detection, and
node-link export.

The vector store is a flat little-endian float32 matrix plus an id index,
so corpora of hundreds of thousands of vectors stream without loading
anything but the matrix. kNN is exact blocked brute force; community
detection is a seeded, order-fixed greedy modularity maximization (node
moves followed by graph aggregation, repeated until no gain).
"""

from __future__ import annotations

import csv
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import IllustrationRecord


class GraphError(Exception):
    pass


class DimMismatch(GraphError):
    pass


class NormalizationError(GraphError):
    pass


class CorpusTooSmall(GraphError):
    pass


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """L2-normalize rows; zero vectors cannot be normalized."""
    matrix = np.asarray(matrix, dtype=np.float32)
    norms = np.linalg.norm(matrix, axis=1)
    bad = np.nonzero(norms < 1e-12)[0]
    if bad.size:
        raise NormalizationError(f"zero-norm vector at row {int(bad[0])}")
    return matrix / norms[:, None]


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimMismatch(f"{va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na < 1e-12 or nb < 1e-12:
        raise NormalizationError("cosine of a zero vector is undefined")
    return float(va @ vb / (na * nb))


@dataclass
class VectorStore:
    """Row-aligned record ids and L2-normalized float32 vectors."""

    ids: list[str]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        if len(self.ids) != self.matrix.shape[0]:
            raise DimMismatch(f"{len(self.ids)} ids vs {self.matrix.shape[0]} rows")

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_vectors(cls, ids: Sequence[str], vectors: np.ndarray) -> "VectorStore":
        return cls(ids=list(ids), matrix=normalize_rows(vectors))

    def save(self, f32_path: Path | str, idx_path: Path | str) -> None:
        matrix = np.ascontiguousarray(self.matrix.astype("<f4"))
        Path(f32_path).write_bytes(matrix.tobytes())
        Path(idx_path).write_text(
            json.dumps({"dim": self.dim, "ids": self.ids}, sort_keys=True) + "\n"
        )

    @classmethod
    def load(cls, f32_path: Path | str, idx_path: Path | str) -> "VectorStore":
        meta = json.loads(Path(idx_path).read_text())
        ids = meta["ids"]
        dim = meta["dim"]
        flat = np.frombuffer(Path(f32_path).read_bytes(), dtype="<f4")
        if flat.size != len(ids) * dim:
            raise DimMismatch(
                f"{f32_path} holds {flat.size} floats, expected {len(ids)}x{dim}"
            )
        return cls(ids=list(ids), matrix=flat.reshape(len(ids), dim).copy())

    @classmethod
    def concat(cls, stores: Sequence["VectorStore"]) -> "VectorStore":
        if not stores:
            raise CorpusTooSmall("no vector stores to concatenate")
        dims = {s.dim for s in stores}
        if len(dims) > 1:
            raise DimMismatch(f"mixed dimensions {sorted(dims)}")
        return cls(
            ids=[i for s in stores for i in s.ids],
            matrix=np.vstack([s.matrix for s in stores]),
        )


def embed_corpus(
    records: Sequence[IllustrationRecord],
    data_root: Path | str,
    backend,
    input_size: int = 224,
    batch_size: int = 16,
) -> VectorStore:
    """One normalized vector per record from the encoder backend, row-aligned
    with record order."""
    from .inference import InferenceConfig, decode_image, preprocess_classify

    config = InferenceConfig(classifier_input=input_size)
    root = Path(data_root)
    ids: list[str] = []
    vectors: list[np.ndarray] = []
    dim: int | None = None
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        batch = np.stack(
            [preprocess_classify(decode_image(root / r.crop_path), config) for r in chunk]
        )
        outputs = backend.run(batch, keys=[r.record_id for r in chunk])
        for record, vec in zip(chunk, outputs):
            vec = np.asarray(vec, dtype=np.float32).reshape(-1)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise DimMismatch(f"{record.record_id}: dim {vec.size} != {dim}")
            ids.append(record.record_id)
            vectors.append(vec)
    if not ids:
        raise CorpusTooSmall("no records to embed")
    return VectorStore.from_vectors(ids, np.stack(vectors))


class SimilarityGraph:
    """Weighted undirected graph over record ids with community labels."""

    def __init__(self, k: int):
        self.k = k
        self.adj: dict[str, dict[str, float]] = {}
        self.community: dict[str, int] = {}

    @property
    def nodes(self) -> list[str]:
        return sorted(self.adj)

    def add_node(self, node: str) -> None:
        self.adj.setdefault(node, {})

    def add_edge(self, u: str, v: str, weight: float) -> None:
        if u == v:
            raise GraphError(f"self-edge on {u}")
        self.add_node(u)
        self.add_node(v)
        self.adj[u][v] = weight
        self.adj[v][u] = weight

    def edges(self) -> list[tuple[str, str, float]]:
        return sorted((u, v, w) for u, nbrs in self.adj.items() for v, w in nbrs.items() if u < v)

    def neighbors(self, node: str) -> list[tuple[str, float]]:
        """Neighbors by edge weight descending, id ascending on ties."""
        return sorted(self.adj.get(node, {}).items(), key=lambda kv: (-kv[1], kv[0]))

    @property
    def node_count(self) -> int:
        return len(self.adj)

    @property
    def edge_count(self) -> int:
        return sum(len(n) for n in self.adj.values()) // 2


def exact_knn(store: VectorStore, k: int, block: int = 256) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-row exact k nearest neighbors by cosine similarity.

    Brute force over query blocks against the full matrix; ties break by
    record_id ascending. Returns (neighbor index arrays, similarity
    arrays), both in query-row order.
    """
    n = len(store)
    if n < 2:
        raise CorpusTooSmall(f"need at least 2 vectors, got {n}")
    if k < 1 or k >= n:
        raise CorpusTooSmall(f"k must be in [1, {n - 1}], got {k}")
    order = sorted(range(n), key=store.ids.__getitem__)
    rank = np.empty(n, dtype=np.int64)
    for position, idx in enumerate(order):
        rank[idx] = position
    matrix = store.matrix.astype(np.float64)
    neighbor_sets: list[np.ndarray] = []
    sims_kept: list[np.ndarray] = []
    for start in range(0, n, block):
        sims = matrix[start : start + block] @ matrix.T
        for row_offset in range(sims.shape[0]):
            i = start + row_offset
            row = sims[row_offset]
            row[i] = -np.inf
            # order by similarity descending, then by id rank ascending
            chosen = np.lexsort((rank, -row))[:k]
            neighbor_sets.append(chosen)
            sims_kept.append(row[chosen])
    return neighbor_sets, sims_kept


def knn_graph(store: VectorStore, k: int = 50, mutual: bool = False, block: int = 256) -> SimilarityGraph:
    """Exact k-nearest-neighbor graph by cosine similarity.

    Edges are symmetrized by union (mutual=True keeps only reciprocated
    pairs). Exact blocked brute force is the reference path; an
    approximate index would be an optional acceleration and must reach
    recall@k >= 0.95 against this construction before being trusted.
    """
    n = len(store)
    neighbor_sets, sims_kept = exact_knn(store, k, block=block)
    graph = SimilarityGraph(k=k)
    for i in range(n):
        graph.add_node(store.ids[i])
    if mutual:
        mutual_sets = [set(ns.tolist()) for ns in neighbor_sets]
        for i in range(n):
            for j, w in zip(neighbor_sets[i], sims_kept[i]):
                if i in mutual_sets[j] and i < j:
                    graph.add_edge(store.ids[i], store.ids[int(j)], float(w))
    else:
        for i in range(n):
            for j, w in zip(neighbor_sets[i], sims_kept[i]):
                graph.add_edge(store.ids[i], store.ids[int(j)], float(w))
    return graph


@dataclass
class CommunityResult:
    assignment: dict[str, int]
    modularity: float
    pass_modularities: list[float]
    seed: int


def modularity(graph: SimilarityGraph, partition: dict[str, int]) -> float:
    """Weighted modularity Q of a partition against the degree-preserving
    null model; 0 for an edgeless graph and for the one-community partition."""
    m = sum(w for _, _, w in graph.edges())
    if m <= 0:
        return 0.0
    strength: dict[str, float] = {u: sum(graph.adj[u].values()) for u in graph.adj}
    sum_in: dict[int, float] = defaultdict(float)
    sum_tot: dict[int, float] = defaultdict(float)
    for u in graph.adj:
        sum_tot[partition[u]] += strength[u]
    for u, v, w in graph.edges():
        if partition[u] == partition[v]:
            sum_in[partition[u]] += w
    return sum(sum_in[c] / m - (sum_tot[c] / (2 * m)) ** 2 for c in sum_tot)


def _level_modularity(adj, loops, node2comm, m) -> float:
    sum_in: dict[int, float] = defaultdict(float)
    sum_tot: dict[int, float] = defaultdict(float)
    for u, nbrs in adj.items():
        c = node2comm[u]
        sum_tot[c] += sum(nbrs.values()) + 2 * loops.get(u, 0.0)
        sum_in[c] += loops.get(u, 0.0)
        for v, w in nbrs.items():
            if u < v and node2comm[v] == c:
                sum_in[c] += w
    return sum(sum_in[c] / m - (sum_tot[c] / (2 * m)) ** 2 for c in sum_tot)


def _one_level(nodes, adj, loops, m, rng) -> tuple[dict[int, int], bool]:
    """Greedy node moves until no single move improves modularity."""
    node2comm = {u: u for u in nodes}
    strength = {u: sum(adj[u].values()) + 2 * loops.get(u, 0.0) for u in nodes}
    sum_tot = {u: strength[u] for u in nodes}
    order = list(nodes)
    rng.shuffle(order)
    improved = False
    moved = True
    while moved:
        moved = False
        for u in order:
            current = node2comm[u]
            weight_to = defaultdict(float)
            for v, w in adj[u].items():
                weight_to[node2comm[v]] += w
            sum_tot[current] -= strength[u]
            best_comm = current
            best_gain = weight_to.get(current, 0.0) - sum_tot[current] * strength[u] / (2 * m)
            for c in sorted(weight_to):
                if c == current:
                    continue
                gain = weight_to[c] - sum_tot[c] * strength[u] / (2 * m)
                if gain > best_gain + 1e-12:
                    best_comm = c
                    best_gain = gain
            sum_tot[best_comm] += strength[u]
            node2comm[u] = best_comm
            if best_comm != current:
                moved = True
                improved = True
    return node2comm, improved


def _aggregate(nodes, adj, loops, node2comm):
    communities = sorted(set(node2comm.values()))
    remap = {c: i for i, c in enumerate(communities)}
    new_nodes = list(range(len(communities)))
    new_adj: dict[int, dict[int, float]] = {i: defaultdict(float) for i in new_nodes}
    new_loops: dict[int, float] = defaultdict(float)
    for u in nodes:
        cu = remap[node2comm[u]]
        new_loops[cu] += loops.get(u, 0.0)
        for v, w in adj[u].items():
            cv = remap[node2comm[v]]
            if cu == cv:
                if u < v:
                    new_loops[cu] += w
            else:
                new_adj[cu][cv] += w
    return new_nodes, {u: dict(vs) for u, vs in new_adj.items()}, dict(new_loops), remap


def detect_communities(graph: SimilarityGraph, seed: int = 0) -> CommunityResult:
    """Seeded greedy modularity maximization over the weighted graph.

    Each pass sweeps nodes (in a seed-shuffled fixed order) moving them to
    the neighboring community with the best modularity gain, then collapses
    communities into supernodes and repeats. Modularity is recorded after
    every pass and never decreases. Final community ids are relabeled
    0..C-1 by their smallest member id, so runs are reproducible.
    """
    node_ids = graph.nodes
    if not node_ids:
        return CommunityResult({}, 0.0, [], seed)
    index = {u: i for i, u in enumerate(node_ids)}
    nodes = list(range(len(node_ids)))
    adj: dict[int, dict[int, float]] = {i: {} for i in nodes}
    for u, v, w in graph.edges():
        adj[index[u]][index[v]] = w
        adj[index[v]][index[u]] = w
    loops: dict[int, float] = {}
    m = sum(w for _, _, w in graph.edges())
    if m <= 0:
        assignment = {u: i for i, u in enumerate(node_ids)}
        graph.community = dict(assignment)
        return CommunityResult(assignment, 0.0, [0.0], seed)

    rng = random.Random(seed)
    membership = list(nodes)  # original index -> current-level node
    pass_modularities: list[float] = []
    while True:
        node2comm, improved = _one_level(nodes, adj, loops, m, rng)
        q = _level_modularity(adj, loops, node2comm, m)
        if not improved:
            if not pass_modularities:
                pass_modularities.append(q)
            break
        pass_modularities.append(q)
        nodes, adj, loops, remap = _aggregate(nodes, adj, loops, node2comm)
        membership = [remap[node2comm[membership[i]]] for i in range(len(node_ids))]
        if len(nodes) == 1:
            break

    # stable relabel: communities ordered by smallest member id
    by_comm: dict[int, list[str]] = defaultdict(list)
    for original, level_node in enumerate(membership):
        by_comm[level_node].append(node_ids[original])
    ordered = sorted(by_comm.values(), key=lambda members: min(members))
    assignment = {u: c for c, members in enumerate(ordered) for u in members}
    graph.community = dict(assignment)
    final_q = modularity(graph, assignment)
    return CommunityResult(assignment, final_q, pass_modularities, seed)


GRAPH_SCHEMA_VERSION = 1


def export_graph(
    graph: SimilarityGraph,
    path: Path | str,
    records_by_id: dict[str, IllustrationRecord] | None = None,
    fmt: str = "json",
    caption_snippet_len: int = 120,
) -> None:
    """Write node-link JSON (or an edge-list CSV) for querying and the UI."""
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source", "target", "weight"])
            for u, v, w in graph.edges():
                writer.writerow([u, v, repr(w)])
        return
    if fmt != "json":
        raise GraphError(f"unknown export format {fmt!r}")
    nodes = []
    for node in graph.nodes:
        entry: dict = {"id": node, "community": graph.community.get(node)}
        record = (records_by_id or {}).get(node)
        if record is not None:
            caption = record.caption or ""
            entry["caption"] = caption[:caption_snippet_len]
            entry["thumbnail"] = record.crop_path
        nodes.append(entry)
    payload = {
        "schema_version": GRAPH_SCHEMA_VERSION,
        "k": graph.k,
        "directed": False,
        "nodes": nodes,
        "links": [
            {"source": u, "target": v, "weight": w} for u, v, w in graph.edges()
        ],
    }
    path.write_text(json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n")


def load_graph_json(path: Path | str) -> SimilarityGraph:
    payload = json.loads(Path(path).read_text())
    graph = SimilarityGraph(k=payload.get("k", 0))
    for node in payload["nodes"]:
        graph.add_node(node["id"])
        if node.get("community") is not None:
            graph.community[node["id"]] = node["community"]
    for link in payload["links"]:
        graph.add_edge(link["source"], link["target"], link["weight"])
    return graph
