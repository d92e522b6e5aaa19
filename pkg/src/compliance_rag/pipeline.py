"""Query orchestration: retrieve, render the architecture's prompt, call the LLM."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Literal, Sequence

from .index import IndexPair
from .prompts import Architecture, PromptBundle, render_bca, render_context_block, render_pca
from .providers import BaseProvider, ChatExchange
from .retrieval import RetrievalCandidate, RetrievalConfig, Retriever

log = logging.getLogger(__name__)

Clock = Callable[[], str]


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def fixed_clock(stamp: str = "1970-01-01T00:00:00+00:00") -> Clock:
    return lambda: stamp


class QueryError(RuntimeError):
    def __init__(self, query_id: str, cause: BaseException):
        super().__init__(f"query {query_id}: {type(cause).__name__}: {cause}")
        self.query_id = query_id
        self.cause = cause


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    query_str: str
    expected_label: Literal["compliant", "non_compliant", "partially_compliant"] | None = None

    def __post_init__(self):
        if not self.query_str or not self.query_str.strip():
            raise ValueError(f"query {self.query_id!r} has an empty query_str")
        if self.expected_label not in (None, "compliant", "non_compliant", "partially_compliant"):
            raise ValueError(f"query {self.query_id!r}: bad expected_label {self.expected_label!r}")


@dataclass(frozen=True)
class PipelineResponse:
    query_id: str
    architecture: Architecture
    query_str: str
    bundle: PromptBundle
    exchange: ChatExchange
    doc_candidates: list[RetrievalCandidate]
    ctx_candidates: list[RetrievalCandidate] = field(default_factory=list)
    created_at: str = ""

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "architecture": self.architecture,
            "query_str": self.query_str,
            "bundle": self.bundle.to_dict(),
            "exchange": self.exchange.to_dict(),
            "doc_candidates": [c.to_dict() for c in self.doc_candidates],
            "ctx_candidates": [c.to_dict() for c in self.ctx_candidates],
            "created_at": self.created_at,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineResponse":
        return cls(
            query_id=d["query_id"],
            architecture=d["architecture"],
            query_str=d["query_str"],
            bundle=PromptBundle.from_dict(d["bundle"]),
            exchange=ChatExchange.from_dict(d["exchange"]),
            doc_candidates=[RetrievalCandidate.from_dict(c) for c in d["doc_candidates"]],
            ctx_candidates=[RetrievalCandidate.from_dict(c) for c in d["ctx_candidates"]],
            created_at=d["created_at"],
        )


def _retriever(idx: IndexPair, cfg: RetrievalConfig, provider: BaseProvider) -> Retriever:
    return Retriever(idx, cfg, provider.embed_query, provider.rerank, provider.cfg.embed_model)


def build_bundle(
    arch: Architecture,
    query_str: str,
    doc_cands: Sequence[RetrievalCandidate],
    doc_idx: IndexPair,
    ctx_cands: Sequence[RetrievalCandidate] = (),
    ctx_idx: IndexPair | None = None,
) -> PromptBundle:
    doc_block = render_context_block(doc_cands, doc_idx.chunks)
    doc_ids = [c.chunk_id for c in sorted(doc_cands, key=lambda c: c.rank)]
    if arch == "BCA":
        return render_bca(query_str, doc_block, doc_ids)
    if ctx_idx is None:
        raise ValueError("PCA needs a context index")
    ctx_block = render_context_block(ctx_cands, ctx_idx.chunks)
    ctx_ids = [c.chunk_id for c in sorted(ctx_cands, key=lambda c: c.rank)]
    return render_pca(query_str, doc_block, ctx_block, doc_ids, ctx_ids)


def run_query(
    q: QueryRecord,
    arch: Architecture,
    doc_idx: IndexPair,
    ctx_idx: IndexPair | None,
    cfg: RetrievalConfig,
    provider: BaseProvider,
    clock: Clock = utc_now,
) -> PipelineResponse:
    if arch not in ("BCA", "PCA"):
        raise ValueError(f"unknown architecture {arch!r}")
    if arch == "PCA" and ctx_idx is None:
        raise ValueError("PCA needs a context index")
    try:
        doc_r = _retriever(doc_idx, cfg, provider)
        if arch == "BCA":
            doc_cands, ctx_cands = doc_r.retrieve(q.query_str), []
        else:
            ctx_r = _retriever(ctx_idx, cfg, provider)
            with ThreadPoolExecutor(max_workers=2) as pool:
                doc_f = pool.submit(doc_r.retrieve, q.query_str)
                ctx_f = pool.submit(ctx_r.retrieve, q.query_str)
                doc_cands, ctx_cands = doc_f.result(), ctx_f.result()
        bundle = build_bundle(arch, q.query_str, doc_cands, doc_idx, ctx_cands, ctx_idx)
        exchange = provider.chat_complete(bundle.system, bundle.user)
    except Exception as exc:
        raise QueryError(q.query_id, exc) from exc
    return PipelineResponse(q.query_id, arch, q.query_str, bundle, exchange, doc_cands, ctx_cands, clock())


def replay_bundle(resp: PipelineResponse, doc_idx: IndexPair, ctx_idx: IndexPair | None = None) -> PromptBundle:
    """Re-render a stored response's prompt from its chunk ids and query."""
    return build_bundle(resp.architecture, resp.query_str, resp.doc_candidates, doc_idx, resp.ctx_candidates, ctx_idx)


@dataclass
class BatchResult:
    responses: list[PipelineResponse]
    failures: dict[str, str]

    @property
    def ok(self) -> bool:
        return not self.failures


def run_batch(
    queries: Sequence[QueryRecord],
    arch: Architecture,
    doc_idx: IndexPair,
    ctx_idx: IndexPair | None,
    cfg: RetrievalConfig,
    provider: BaseProvider,
    clock: Clock = utc_now,
    max_workers: int | None = None,
) -> BatchResult:
    """Run every query; a failing query is recorded and the batch carries on."""
    if not queries:
        raise ValueError("run_batch needs at least one query")
    if arch == "PCA" and ctx_idx is None:
        raise ValueError("PCA needs a context index")
    workers = max_workers or provider.cfg.concurrency

    def one(q: QueryRecord):
        try:
            return run_query(q, arch, doc_idx, ctx_idx, cfg, provider, clock)
        except QueryError as exc:
            log.warning("%s", exc)
            return exc

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(one, queries))
    responses = [r for r in results if isinstance(r, PipelineResponse)]
    failures = {r.query_id: str(r) for r in results if isinstance(r, QueryError)}
    return BatchResult(responses, failures)


def load_queries(path: str | Path) -> list[QueryRecord]:
    out = []
    seen = set()
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = QueryRecord(**json.loads(line))
        if rec.query_id in seen:
            raise ValueError(f"{path}:{n}: duplicate query_id {rec.query_id!r}")
        seen.add(rec.query_id)
        out.append(rec)
    return out


def write_responses(path: str | Path, responses: Iterable[PipelineResponse]) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in responses), encoding="utf-8")


def read_responses(path: str | Path) -> list[PipelineResponse]:
    return [
        PipelineResponse.from_dict(json.loads(line))
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
