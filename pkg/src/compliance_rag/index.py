"""Lexical (BM25) and vector indices over a chunk set, plus on-disk persistence."""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Chunk, terms

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


class IndexingError(ValueError):
    """Base class for index build and load failures."""


class IndexVersionError(IndexingError):
    pass


class IndexChecksumError(IndexingError):
    pass


class IndexLabel(str, Enum):
    DOCUMENT = "document_index"
    CONTEXT = "context_index"


def idf(n_docs: int, df: int) -> float:
    # "+1 inside the log" keeps the weight non-negative for every df in [0, N]
    return math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)


@dataclass
class LexicalIndex:
    n_docs: int
    df: dict[str, int]
    tf: dict[str, dict[str, int]]
    lengths: dict[str, int]
    avgdl: float
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    @classmethod
    def build(cls, chunks: Iterable[Chunk], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> "LexicalIndex":
        tf: dict[str, dict[str, int]] = {}
        lengths: dict[str, int] = {}
        df: Counter = Counter()
        for chunk in sorted(chunks, key=lambda c: c.chunk_id):
            toks = terms(chunk.text)
            counts = Counter(toks)
            tf[chunk.chunk_id] = dict(sorted(counts.items()))
            lengths[chunk.chunk_id] = len(toks)
            df.update(counts.keys())
        if not tf:
            raise IndexingError("empty index")
        n = len(tf)
        return cls(n, dict(sorted(df.items())), tf, lengths, sum(lengths.values()) / n, k1, b)

    def score(self, query: str | Sequence[str], chunk_id: str) -> float:
        """BM25 of one chunk against a query (raw text or pre-tokenized terms)."""
        if chunk_id not in self.tf:
            raise KeyError(f"unknown chunk_id {chunk_id!r}")
        q = terms(query) if isinstance(query, str) else [t.lower() for t in query]
        counts = self.tf[chunk_id]
        norm = self.k1 * (1.0 - self.b + self.b * self.lengths[chunk_id] / self.avgdl)
        total = 0.0
        for t in q:
            f = counts.get(t, 0)
            if f:
                total += idf(self.n_docs, self.df[t]) * f * (self.k1 + 1.0) / (f + norm)
        return total

    def score_all(self, query: str | Sequence[str]) -> dict[str, float]:
        q = terms(query) if isinstance(query, str) else [t.lower() for t in query]
        return {cid: self.score(q, cid) for cid in self.tf}

    def to_payload(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "df": self.df,
            "tf": self.tf,
            "lengths": self.lengths,
            "avgdl": self.avgdl,
            "k1": self.k1,
            "b": self.b,
        }

    @classmethod
    def from_payload(cls, p: dict) -> "LexicalIndex":
        return cls(p["n_docs"], p["df"], p["tf"], p["lengths"], p["avgdl"], p["k1"], p["b"])


def bm25_score(query: str | Sequence[str], chunk_id: str, idx: LexicalIndex) -> float:
    return idx.score(query, chunk_id)


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between two vectors; 0.0 when either is all zeros."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        log.warning("cosine_similarity: zero vector, scoring as 0")
        return 0.0
    return float(np.dot(a, b)) / (na * nb)


@dataclass
class VectorIndex:
    dim: int
    model_id: str
    ids: list[str]
    matrix: np.ndarray

    @property
    def vectors(self) -> dict[str, np.ndarray]:
        return {cid: self.matrix[i] for i, cid in enumerate(self.ids)}

    def check_query(self, vec: Sequence[float], model_id: str | None = None) -> np.ndarray:
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValueError(f"query vector has shape {v.shape}, index dim is {self.dim}")
        if model_id is not None and model_id != self.model_id:
            raise ValueError(f"query embedded with {model_id!r}, index built with {self.model_id!r}")
        return v

    def cosine_all(self, vec: Sequence[float], model_id: str | None = None) -> dict[str, float]:
        v = self.check_query(vec, model_id)
        return {cid: cosine_similarity(v, self.matrix[i]) for i, cid in enumerate(self.ids)}


@dataclass
class IndexPair:
    label: IndexLabel
    lexical: LexicalIndex
    vector: VectorIndex
    chunks: dict[str, Chunk]
    # number of retrievals served; lets callers prove an index was never read
    reads: int = field(default=0, compare=False)

    def __post_init__(self):
        ids = set(self.chunks)
        if ids != set(self.lexical.tf) or ids != set(self.vector.ids):
            raise IndexingError("lexical, vector and chunk maps cover different chunk ids")


def build_indices(
    chunks: Sequence[Chunk],
    embeddings: Mapping[str, Sequence[float]],
    label: IndexLabel | str,
    model_id: str = "unknown",
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> IndexPair:
    if not chunks:
        raise IndexingError("empty index")
    ordered = sorted(chunks, key=lambda c: c.chunk_id)
    dim = None
    rows = []
    for c in ordered:
        if c.chunk_id not in embeddings:
            raise IndexingError(f"missing embedding for chunk {c.chunk_id!r}")
        v = np.asarray(embeddings[c.chunk_id], dtype=np.float64)
        if dim is None:
            dim = v.shape[0]
        if v.ndim != 1 or v.shape[0] != dim:
            raise IndexingError(f"embedding for {c.chunk_id!r} has shape {v.shape}, expected ({dim},)")
        rows.append(v)
    vector = VectorIndex(dim, model_id, [c.chunk_id for c in ordered], np.vstack(rows))
    lexical = LexicalIndex.build(ordered, k1, b)
    return IndexPair(IndexLabel(label), lexical, vector, {c.chunk_id: c for c in ordered})


# persistence: each *.idx file is a one-line JSON header followed by a JSON payload

def _write_idx(path: Path, kind: str, payload: dict) -> None:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "length": len(body),
        "sha256": hashlib.sha256(body).hexdigest(),
    }
    path.write_bytes(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + body)


def _read_idx(path: Path, kind: str) -> dict:
    raw = path.read_bytes()
    head, sep, body = raw.partition(b"\n")
    try:
        header = json.loads(head)
    except json.JSONDecodeError:
        raise IndexChecksumError(f"{path}: unreadable header") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise IndexVersionError(
            f"{path}: format_version {header.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    if header.get("kind") != kind:
        raise IndexingError(f"{path}: holds {header.get('kind')!r}, expected {kind!r}")
    if not sep or len(body) != header.get("length") or hashlib.sha256(body).hexdigest() != header.get("sha256"):
        raise IndexChecksumError(f"{path}: checksum mismatch (truncated or corrupted)")
    return json.loads(body)


def persist(idx: IndexPair, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_idx(d / "lexical.idx", "lexical", idx.lexical.to_payload())
    mat = np.ascontiguousarray(idx.vector.matrix, dtype="<f8")
    _write_idx(
        d / "vectors.idx",
        "vectors",
        {
            "dim": idx.vector.dim,
            "model_id": idx.vector.model_id,
            "ids": idx.vector.ids,
            "data": base64.b64encode(mat.tobytes()).decode("ascii"),
        },
    )
    _write_idx(d / "chunks.idx", "chunks", {"chunks": [c.to_dict() for c in idx.chunks.values()]})
    meta = {
        "format_version": FORMAT_VERSION,
        "label": idx.label.value,
        "model_id": idx.vector.model_id,
        "dim": idx.vector.dim,
        "k1": idx.lexical.k1,
        "b": idx.lexical.b,
        "counts": {"chunks": len(idx.chunks), "terms": len(idx.lexical.df)},
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return d


def load(directory: str | Path) -> IndexPair:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.is_file():
        raise IndexingError(f"no index at {d} (meta.json missing)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise IndexVersionError(f"{meta_path}: format_version {meta.get('format_version')!r}, expected {FORMAT_VERSION}")
    lexical = LexicalIndex.from_payload(_read_idx(d / "lexical.idx", "lexical"))
    vp = _read_idx(d / "vectors.idx", "vectors")
    flat = np.frombuffer(base64.b64decode(vp["data"]), dtype="<f8")
    matrix = flat.reshape(len(vp["ids"]), vp["dim"]).astype(np.float64)
    vector = VectorIndex(vp["dim"], vp["model_id"], list(vp["ids"]), matrix)
    chunks = {c["chunk_id"]: Chunk.from_dict(c) for c in _read_idx(d / "chunks.idx", "chunks")["chunks"]}
    return IndexPair(IndexLabel(meta["label"]), lexical, vector, chunks)
