"""Two-stage retriever: hybrid cosine/BM25 fusion, then re-ranking."""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, replace
from typing import Callable, Literal, Mapping, Sequence

from .index import IndexPair, IndexingError

log = logging.getLogger(__name__)
_reads_lock = threading.Lock()

# (query, documents) -> [(input_position, relevance_score), ...]
RerankFn = Callable[[str, list[str]], list[tuple[int, float]]]


@dataclass(frozen=True)
class RetrievalConfig:
    alpha: float = 0.75
    k_first: int = 10
    k_final: int = 2
    reranker: Literal["remote", "passthrough"] = "remote"
    # only when set may a failing re-rank provider fall back to stage-1 order
    fallback_to_passthrough: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 1 <= self.k_final <= self.k_first:
            raise ValueError(f"need 1 <= k_final <= k_first, got {self.k_final}, {self.k_first}")
        if self.reranker not in ("remote", "passthrough"):
            raise ValueError(f"unknown reranker mode {self.reranker!r}")


@dataclass(frozen=True)
class RetrievalCandidate:
    chunk_id: str
    cosine_raw: float
    bm25_raw: float
    cosine_norm: float
    bm25_norm: float
    fused: float
    rerank: float | None = None
    rank: int = 0

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "cosine_raw": self.cosine_raw,
            "bm25_raw": self.bm25_raw,
            "cosine_norm": self.cosine_norm,
            "bm25_norm": self.bm25_norm,
            "fused": self.fused,
            "rerank": self.rerank,
            "rank": self.rank,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalCandidate":
        return cls(**d)


def normalize_scores(raw: Mapping[str, float]) -> dict[str, float]:
    """Min-max scale to [0, 1]; a constant map goes to all ones."""
    if not raw:
        raise ValueError("cannot normalize an empty score map")
    lo = min(raw.values())
    hi = max(raw.values())
    if hi == lo:
        return {k: 1.0 for k in raw}
    span = hi - lo
    return {k: (v - lo) / span for k, v in raw.items()}


def hybrid_score(cos_norm: float, bm25_norm: float, alpha: float) -> float:
    return alpha * cos_norm + (1.0 - alpha) * bm25_norm


def retrieve_stage1(
    query: str,
    query_vec: Sequence[float],
    idx: IndexPair,
    cfg: RetrievalConfig,
    model_id: str | None = None,
) -> list[RetrievalCandidate]:
    """Score every chunk on both legs, fuse, and keep the best ``k_first``."""
    if not idx.chunks:
        raise IndexingError("empty index")
    with _reads_lock:
        idx.reads += 1
    cos_raw = idx.vector.cosine_all(query_vec, model_id)
    bm_raw = idx.lexical.score_all(query)
    cos_n = normalize_scores(cos_raw)
    bm_n = normalize_scores(bm_raw)
    cands = [
        RetrievalCandidate(
            chunk_id=cid,
            cosine_raw=cos_raw[cid],
            bm25_raw=bm_raw[cid],
            cosine_norm=cos_n[cid],
            bm25_norm=bm_n[cid],
            fused=hybrid_score(cos_n[cid], bm_n[cid], cfg.alpha),
        )
        for cid in idx.chunks
    ]
    cands.sort(key=lambda c: (-c.fused, c.chunk_id))
    return [replace(c, rank=i) for i, c in enumerate(cands[: cfg.k_first])]


def rerank_stage2(
    query: str,
    cands: Sequence[RetrievalCandidate],
    cfg: RetrievalConfig,
    texts: Mapping[str, str] | None = None,
    reranker: RerankFn | None = None,
) -> list[RetrievalCandidate]:
    if cfg.reranker == "passthrough" or not cands:
        return [replace(c, rank=i) for i, c in enumerate(cands[: cfg.k_final])]
    if reranker is None or texts is None:
        raise ValueError("remote re-ranking needs a reranker and the candidate texts")

    try:
        scored = reranker(query, [texts[c.chunk_id] for c in cands])
    except Exception:
        if not cfg.fallback_to_passthrough:
            raise
        log.warning("re-rank failed, falling back to stage-1 order", exc_info=True)
        return [replace(c, rank=i) for i, c in enumerate(cands[: cfg.k_final])]

    scores = dict(scored)
    if sorted(scores) != list(range(len(cands))):
        raise ValueError(f"reranker returned indices {sorted(scores)} for {len(cands)} documents")
    # stable sort: equal re-rank scores keep their stage-1 order
    order = sorted(range(len(cands)), key=lambda i: -scores[i])
    return [
        replace(cands[i], rerank=float(scores[i]), rank=r)
        for r, i in enumerate(order[: cfg.k_final])
    ]


@dataclass
class Retriever:
    """Both stages over one index, with the embedder and re-ranker bound in."""

    idx: IndexPair
    cfg: RetrievalConfig
    embed_query: Callable[[str], Sequence[float]]
    reranker: RerankFn | None = None
    embed_model: str | None = None

    def retrieve(self, query: str) -> list[RetrievalCandidate]:
        stage1 = retrieve_stage1(query, self.embed_query(query), self.idx, self.cfg, self.embed_model)
        texts = {c.chunk_id: self.idx.chunks[c.chunk_id].text for c in stage1}
        return rerank_stage2(query, stage1, self.cfg, texts, self.reranker)
