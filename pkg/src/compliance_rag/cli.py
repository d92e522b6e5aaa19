"""Command-line entry point: ingest, index, query, run, judge, review, report."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

from . import corpus, evaluation, index, pipeline
from .index import IndexLabel
from .providers import (
    BaseProvider,
    HttpProvider,
    MockProvider,
    ProviderConfig,
    default_mock_answer,
    load_provider_config,
)
from .retrieval import RetrievalConfig

log = logging.getLogger("compliance_rag")

EMBED_BATCH = 96
ENV_OVERRIDES = {
    "CRAG_BASE_URL": "base_url",
    "CRAG_CHAT_MODEL": "chat_model",
    "CRAG_EMBED_MODEL": "embed_model",
    "CRAG_RERANK_MODEL": "rerank_model",
    "CRAG_JUDGE_MODEL": "judge_model",
}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def fixture_dir() -> Path:
    """The small bundled corpus (manifest, documents, queries)."""
    return Path(str(resources.files("compliance_rag") / "fixtures"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# configuration: flags > env > config file > defaults

def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError("ConfigError", f"config file not found: {p}")
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(p.read_text(encoding="utf-8"))
    return json.loads(p.read_text(encoding="utf-8"))


def provider_config(args: argparse.Namespace) -> ProviderConfig:
    raw = _load_config_file(args.config)
    cfg = ProviderConfig.from_mapping(raw.get("providers", {})) if raw else ProviderConfig()
    env = {field: os.environ[var] for var, field in ENV_OVERRIDES.items() if os.environ.get(var)}
    if env:
        cfg = dataclasses.replace(cfg, **env)
    if getattr(args, "chat_model", None):
        cfg = dataclasses.replace(cfg, chat_model=args.chat_model)
    if args.mock:
        # mock vectors must never be mixed with a real embedding model's index
        cfg = dataclasses.replace(cfg, embed_model=f"mock-hash/{cfg.embed_model}")
    return cfg


def retrieval_config(args: argparse.Namespace) -> RetrievalConfig:
    raw = _load_config_file(args.config).get("retrieval", {})
    cfg = RetrievalConfig(**raw)
    env_alpha = os.environ.get("CRAG_ALPHA")
    if env_alpha:
        cfg = dataclasses.replace(cfg, alpha=float(env_alpha))
    overrides = {
        k: v
        for k, v in (("alpha", args.alpha), ("k_first", args.k_first), ("k_final", args.k_final), ("reranker", args.reranker))
        if v is not None
    }
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def make_provider(args: argparse.Namespace) -> BaseProvider:
    cfg = provider_config(args)
    if args.mock:
        judge_model = cfg.judge_model

        def respond(system: str, user: str, model: str) -> str:
            if model == judge_model:
                return evaluation.mock_judge(user)
            return default_mock_answer(system, user)

        return MockProvider(cfg, responder=respond)
    return HttpProvider(cfg)


def make_clock(args: argparse.Namespace) -> pipeline.Clock:
    return pipeline.fixed_clock() if args.mock else pipeline.utc_now


# subcommands

def cmd_ingest(args) -> int:
    docs = corpus.load_manifest(args.manifest)
    chunks = corpus.chunk_corpus(docs, args.chunk_size, args.overlap)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kinds = {d.doc_id: d.kind.value for d in docs}
    with (out / "chunks.jsonl").open("w", encoding="utf-8") as fh:
        for c in chunks:
            fh.write(json.dumps({**c.to_dict(), "kind": kinds[c.doc_id]}, sort_keys=True, ensure_ascii=False) + "\n")
    documents = [
        {
            "doc_id": d.doc_id,
            "title": d.title,
            "kind": d.kind.value,
            "metadata": d.metadata,
            "sha256": hashlib.sha256(d.body.encode("utf-8")).hexdigest(),
        }
        for d in docs
    ]
    meta = {"chunk_size": args.chunk_size, "overlap": args.overlap, "documents": documents}
    (out / "documents.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"ingested {len(docs)} documents into {len(chunks)} chunks -> {out}")
    return 0


def _read_chunk_store(path: Path) -> dict[str, list[corpus.Chunk]]:
    f = path / "chunks.jsonl"
    if not f.is_file():
        raise CliError("MissingChunks", f"no chunk store at {f}; run ingest first")
    by_kind: dict[str, list[corpus.Chunk]] = {"user_doc": [], "standard": []}
    for line in f.read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            kind = d.pop("kind")
            by_kind[kind].append(corpus.Chunk.from_dict(d))
    return by_kind


def cmd_index(args) -> int:
    provider = make_provider(args)
    by_kind = _read_chunk_store(Path(args.chunks))
    out = Path(args.out)
    labels = {"user_doc": IndexLabel.DOCUMENT, "standard": IndexLabel.CONTEXT}
    for kind, chunks in by_kind.items():
        if not chunks:
            log.info("no %s chunks; skipping %s", kind, labels[kind].value)
            continue
        vectors: dict[str, list[float]] = {}
        for i in range(0, len(chunks), EMBED_BATCH):
            batch = chunks[i : i + EMBED_BATCH]
            for c, v in zip(batch, provider.embed_texts([c.text for c in batch])):
                vectors[c.chunk_id] = v
        pair = index.build_indices(chunks, vectors, labels[kind], provider.cfg.embed_model)
        index.persist(pair, out / labels[kind].value)
        print(f"{labels[kind].value}: {len(chunks)} chunks, dim {pair.vector.dim} -> {out / labels[kind].value}")
    return 0


def _load_indices(indices: Path, arch: str) -> tuple[index.IndexPair, index.IndexPair | None]:
    doc_dir = indices / IndexLabel.DOCUMENT.value
    if not (doc_dir / "meta.json").is_file():
        raise CliError("MissingIndex", f"missing {IndexLabel.DOCUMENT.value} at {doc_dir}")
    doc_idx = index.load(doc_dir)
    if arch == "BCA":
        return doc_idx, None
    ctx_dir = indices / IndexLabel.CONTEXT.value
    if not (ctx_dir / "meta.json").is_file():
        raise CliError("MissingIndex", f"PCA requires {IndexLabel.CONTEXT.value}, none at {ctx_dir}")
    return doc_idx, index.load(ctx_dir)


def cmd_query(args) -> int:
    arch = args.arch.upper()
    doc_idx, ctx_idx = _load_indices(Path(args.indices), arch)
    resp = pipeline.run_query(
        pipeline.QueryRecord("adhoc", args.question),
        arch,
        doc_idx,
        ctx_idx,
        retrieval_config(args),
        make_provider(args),
        make_clock(args),
    )
    print(resp.exchange.answer)
    print()
    print("document chunks: " + ", ".join(resp.bundle.doc_chunk_ids))
    if arch == "PCA":
        print("context chunks: " + ", ".join(resp.bundle.ctx_chunk_ids))
    return 0


def _run_dir(args, run_id: str) -> Path:
    return Path(args.runs_dir) / run_id


def _index_checksums(indices: Path, labels: Sequence[str]) -> dict:
    sums = {}
    for label in labels:
        d = indices / label
        if d.is_dir():
            sums[label] = {f.name: _sha256(f) for f in sorted(d.iterdir()) if f.is_file()}
    return sums


def cmd_run(args) -> int:
    arch = args.arch.upper()
    indices = Path(args.indices)
    doc_idx, ctx_idx = _load_indices(indices, arch)
    queries = pipeline.load_queries(args.queries)
    provider = make_provider(args)
    rcfg = retrieval_config(args)
    clock = make_clock(args)
    started = clock()
    batch = pipeline.run_batch(queries, arch, doc_idx, ctx_idx, rcfg, provider, clock)

    rd = _run_dir(args, args.run_id)
    rd.mkdir(parents=True, exist_ok=True)
    pipeline.write_responses(rd / "responses.jsonl", batch.responses)
    used = [IndexLabel.DOCUMENT.value] + ([IndexLabel.CONTEXT.value] if arch == "PCA" else [])
    manifest = {
        "run_id": args.run_id,
        "label": args.label,
        "architecture": arch,
        "mock": bool(args.mock),
        "model_id": provider.cfg.chat_model,
        "retrieval": dataclasses.asdict(rcfg),
        "providers": provider.cfg.snapshot(),
        "queries": str(args.queries),
        "queries_sha256": _sha256(Path(args.queries)),
        "query_ids": [q.query_id for q in queries],
        "indices": str(indices),
        "index_checksums": _index_checksums(indices, used),
        "index_reads": {
            IndexLabel.DOCUMENT.value: doc_idx.reads,
            IndexLabel.CONTEXT.value: ctx_idx.reads if ctx_idx is not None else 0,
        },
        "failures": batch.failures,
        "started_at": started,
        "finished_at": clock(),
    }
    (rd / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"run {args.run_id}: {len(batch.responses)} responses, {len(batch.failures)} failures -> {rd}")
    for qid, err in batch.failures.items():
        print(f"failed {qid}: {err}", file=sys.stderr)
    return 0 if batch.ok else 3


def _load_run(args, run_id: str) -> tuple[dict, list[pipeline.PipelineResponse]]:
    rd = _run_dir(args, run_id)
    mpath = rd / "manifest.json"
    if not mpath.is_file():
        raise CliError("MissingRun", f"no run manifest at {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    return manifest, pipeline.read_responses(rd / "responses.jsonl")


def _chunk_texts(indices: Path) -> dict[str, str]:
    texts = {}
    for label in IndexLabel:
        d = indices / label.value
        if (d / "meta.json").is_file():
            texts.update({cid: c.text for cid, c in index.load(d).chunks.items()})
    return texts


def cmd_judge(args) -> int:
    manifest, responses = _load_run(args, args.run_id)
    texts = _chunk_texts(Path(args.indices or manifest["indices"]))
    verdicts, failures = evaluation.judge_batch(responses, make_provider(args), texts)
    rd = _run_dir(args, args.run_id)
    evaluation.write_verdicts(rd / "verdicts.jsonl", verdicts)
    n_h = sum(v.verdict == "hallucinated" for v in verdicts)
    print(f"judged {len(verdicts)} responses ({n_h} hallucinated), {len(failures)} parse failures")
    for qid, err in failures.items():
        print(f"failed {qid}: {err}", file=sys.stderr)
    return 0 if not failures else 3


def _review_store(args, run_id: str, manifest: dict, responses) -> evaluation.ReviewStore:
    known = {(r.query_id, r.architecture) for r in responses}
    return evaluation.ReviewStore(known, _run_dir(args, run_id) / "reviews.jsonl")


def cmd_review(args) -> int:
    manifest, responses = _load_run(args, args.run_id)
    store = _review_store(args, args.run_id, manifest, responses)
    texts = _chunk_texts(Path(args.indices or manifest["indices"]))
    n = evaluation.review_session(responses, store, args.reviewer, texts)
    print(f"recorded {n} reviews ({len(store)} total) for run {args.run_id}")
    return 0


def cmd_report(args) -> int:
    runs, verdicts, reviews = [], {}, {}
    for run_id in args.run_id:
        manifest, responses = _load_run(args, run_id)
        runs.append(
            evaluation.RunInfo(
                run_id,
                manifest["architecture"],
                manifest["model_id"],
                tuple(manifest["query_ids"]),
                manifest.get("label"),
            )
        )
        verdicts[run_id] = evaluation.read_verdicts(_run_dir(args, run_id) / "verdicts.jsonl")
        reviews[run_id] = _review_store(args, run_id, manifest, responses).latest()
    reports = evaluation.build_report(runs, verdicts, reviews)
    if args.out:
        out = Path(args.out)
    elif len(args.run_id) == 1:
        out = _run_dir(args, args.run_id[0])
    else:
        out = Path(args.runs_dir) / "report"
    out.mkdir(parents=True, exist_ok=True)
    md = evaluation.render_markdown(reports)
    (out / "report.json").write_text(evaluation.render_json(reports), encoding="utf-8")
    (out / "report.md").write_text(md, encoding="utf-8")
    print(md, end="")
    return 0


# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML/JSON file with [providers] and [retrieval] tables")
    common.add_argument("--mock", action="store_true", help="use offline deterministic providers")
    common.add_argument("--alpha", type=float, help="hybrid fusion weight on the cosine leg")
    common.add_argument("--k-first", type=int, help="stage-1 candidates kept")
    common.add_argument("--k-final", type=int, help="chunks kept after re-ranking")
    common.add_argument("--reranker", choices=["remote", "passthrough"])
    common.add_argument("--runs-dir", default="runs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="compliance-rag", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="manifest -> chunk store")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--chunk-size", type=int, default=corpus.DEFAULT_CHUNK_SIZE)
    s.add_argument("--overlap", type=int, default=corpus.DEFAULT_OVERLAP)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("index", parents=[common], help="chunk store -> document/context indices")
    s.add_argument("--chunks", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("query", parents=[common], help="answer one ad-hoc question")
    s.add_argument("question")
    s.add_argument("--indices", required=True)
    s.add_argument("--arch", choices=["bca", "pca"], default="bca")
    s.add_argument("--chat-model")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("run", parents=[common], help="batch over a query dataset")
    s.add_argument("--queries", required=True)
    s.add_argument("--indices", required=True)
    s.add_argument("--arch", choices=["bca", "pca"], required=True)
    s.add_argument("--run-id", required=True)
    s.add_argument("--label", help="row name in reports (defaults to the architecture)")
    s.add_argument("--chat-model")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("judge", parents=[common], help="hallucination verdicts for a run")
    s.add_argument("--run-id", required=True)
    s.add_argument("--indices")
    s.set_defaults(func=cmd_judge)

    s = sub.add_parser("review", parents=[common], help="interactive expert grading of a run")
    s.add_argument("--run-id", required=True)
    s.add_argument("--reviewer", required=True)
    s.add_argument("--indices")
    s.set_defaults(func=cmd_review)

    s = sub.add_parser("report", parents=[common], help="aggregate scores across runs")
    s.add_argument("--run-id", action="append", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except Exception as exc:  # every failure becomes one parseable stderr line
        code, msg = type(exc).__name__, str(exc)
    print(json.dumps({"error": code, "message": msg, "command": args.command}), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
