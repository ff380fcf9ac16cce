"""Keyword search over captions and metadata: tokenizer, field-aware
inverted index, BM25 ranking, and index persistence.

The served index is an immutable snapshot; building is single-writer and
queries are read-only.
"""

from __future__ import annotations

import json
import math
import re
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .catalog import IllustrationRecord

_MAGIC = b"CXIDX"
_VERSION = 1

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)  # alphanumeric runs, no underscore

# Standard Okapi constants; the ranking scheme is plumbing, not a tuned result.
DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_BOOSTS = {"caption": 2.0, "metadata": 1.0}

ENGLISH_STOPWORDS = frozenset(
    "a an and are as at be by for from has he in is it its of on or that the to was were will with".split()
)


class SearchError(Exception):
    pass


class DuplicateRecordId(SearchError):
    pass


def tokenize(text: str, stopwords: frozenset[str] | None = None) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop tokens shorter than
    two characters. No stemming."""
    tokens = [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2]
    if stopwords:
        tokens = [t for t in tokens if t not in stopwords]
    return tokens


@dataclass(frozen=True)
class IndexedDocument:
    record_id: str
    field_tokens: dict[str, list[str]]

    @property
    def length(self) -> int:
        return sum(len(v) for v in self.field_tokens.values())


def build_document(
    record: IllustrationRecord, stopwords: frozenset[str] | None = None
) -> IndexedDocument:
    """Search document for a record: caption text plus provenance metadata."""
    metadata = " ".join(
        [
            record.page.library_id,
            record.page.collection_id,
            record.page.volume_id,
            record.record_id,
        ]
    )
    return IndexedDocument(
        record_id=record.record_id,
        field_tokens={
            "caption": tokenize(record.caption or "", stopwords),
            "metadata": tokenize(metadata, stopwords),
        },
    )


class InvertedIndex:
    """Per-field postings with BM25 scoring summed across boosted fields."""

    def __init__(
        self,
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
        boosts: dict[str, float] | None = None,
    ):
        self.k1 = k1
        self.b = b
        self.boosts = dict(boosts or DEFAULT_BOOSTS)
        self.doc_ids: list[str] = []
        self._ordinal: dict[str, int] = {}
        # field -> term -> {doc ordinal: term frequency}
        self._postings: dict[str, dict[str, dict[int, int]]] = {f: {} for f in self.boosts}
        self._doc_len: dict[str, list[int]] = {f: [] for f in self.boosts}

    @property
    def num_documents(self) -> int:
        return len(self.doc_ids)

    def avg_doc_length(self, field_name: str) -> float:
        lengths = self._doc_len[field_name]
        return sum(lengths) / len(lengths) if lengths else 0.0

    def add(self, document: IndexedDocument) -> None:
        if document.record_id in self._ordinal:
            raise DuplicateRecordId(document.record_id)
        ordinal = len(self.doc_ids)
        self._ordinal[document.record_id] = ordinal
        self.doc_ids.append(document.record_id)
        for field_name in self.boosts:
            tokens = document.field_tokens.get(field_name, [])
            self._doc_len[field_name].append(len(tokens))
            postings = self._postings[field_name]
            for term, tf in Counter(tokens).items():
                postings.setdefault(term, {})[ordinal] = tf

    def postings_for(self, field_name: str, term: str) -> list[tuple[str, int]]:
        entries = self._postings[field_name].get(term, {})
        return sorted((self.doc_ids[o], tf) for o, tf in entries.items())

    def idf(self, field_name: str, term: str) -> float:
        df = len(self._postings[field_name].get(term, {}))
        if df == 0:
            return 0.0
        return math.log((self.num_documents - df + 0.5) / (df + 0.5) + 1.0)

    def query(self, text: str, top_k: int = 10, require_all: bool = False) -> list[tuple[str, float]]:
        """Rank documents by BM25 summed over query terms and fields.

        Terms absent from the index contribute nothing. With require_all,
        only documents containing every query term (in any field) are
        returned. Ties are broken by record_id ascending.
        """
        if top_k < 1:
            raise SearchError(f"top_k must be >= 1, got {top_k}")
        terms = tokenize(text)
        if not terms or self.num_documents == 0:
            return []
        scores: dict[int, float] = {}
        seen_terms: dict[int, set[str]] = {}
        for term in set(terms):
            for field_name, boost in self.boosts.items():
                entries = self._postings[field_name].get(term)
                if not entries:
                    continue
                idf = self.idf(field_name, term)
                avgdl = self.avg_doc_length(field_name)
                for ordinal, tf in entries.items():
                    dl = self._doc_len[field_name][ordinal]
                    norm = self.k1 * (1 - self.b + self.b * dl / avgdl) if avgdl else self.k1
                    gain = boost * idf * tf * (self.k1 + 1) / (tf + norm)
                    scores[ordinal] = scores.get(ordinal, 0.0) + gain
                    seen_terms.setdefault(ordinal, set()).add(term)
        if require_all:
            wanted = set(terms)
            scores = {o: s for o, s in scores.items() if seen_terms.get(o) == wanted}
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], self.doc_ids[kv[0]]))
        return [(self.doc_ids[o], s) for o, s in ranked[:top_k]]

    # ------------------------------------------------------- persistence

    def to_payload(self) -> dict:
        return {
            "k1": self.k1,
            "b": self.b,
            "boosts": self.boosts,
            "doc_ids": self.doc_ids,
            "doc_len": self._doc_len,
            "postings": {
                f: {term: sorted(entries.items()) for term, entries in sorted(terms.items())}
                for f, terms in self._postings.items()
            },
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "InvertedIndex":
        index = cls(k1=payload["k1"], b=payload["b"], boosts=payload["boosts"])
        index.doc_ids = list(payload["doc_ids"])
        index._ordinal = {doc_id: i for i, doc_id in enumerate(index.doc_ids)}
        index._doc_len = {f: list(v) for f, v in payload["doc_len"].items()}
        index._postings = {
            f: {term: {int(o): tf for o, tf in entries} for term, entries in terms.items()}
            for f, terms in payload["postings"].items()
        }
        return index

    def save(self, path: Path | str) -> None:
        blob = zlib.compress(json.dumps(self.to_payload(), sort_keys=True).encode("utf-8"))
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(bytes([_VERSION]))
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)

    @classmethod
    def load(cls, path: Path | str) -> "InvertedIndex":
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise SearchError(f"{path} is not an index file")
            version = fh.read(1)[0]
            if version != _VERSION:
                raise SearchError(f"unsupported index version {version}")
            size = int.from_bytes(fh.read(8), "little")
            payload = json.loads(zlib.decompress(fh.read(size)).decode("utf-8"))
        return cls.from_payload(payload)


def build_index(
    records: Iterable[IllustrationRecord],
    stopwords: frozenset[str] | None = None,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> InvertedIndex:
    index = InvertedIndex(k1=k1, b=b)
    for record in records:
        index.add(build_document(record, stopwords))
    return index
