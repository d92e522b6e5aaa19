"""Document loading, tokenization and sliding-window chunking."""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

DEFAULT_CHUNK_SIZE = 1024
DEFAULT_OVERLAP = 20

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class ManifestError(ValueError):
    pass


class ChunkingError(ValueError):
    pass


class DocKind(str, Enum):
    USER_DOC = "user_doc"
    STANDARD = "standard"


@dataclass(frozen=True)
class DocumentSource:
    doc_id: str
    title: str
    kind: DocKind
    body: str
    metadata: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    seq: int
    token_start: int
    token_end: int
    char_start: int
    char_end: int
    text: str
    token_count: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        return cls(**d)


def tokenize(text: str) -> list[tuple[str, int, int]]:
    """Split ``text`` into word runs and single punctuation marks.

    Returns ``(token, char_start, char_end)`` triples. Whitespace never forms a
    token, so the gaps between consecutive spans are exactly the skipped
    whitespace.
    """
    return [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def terms(text: str) -> list[str]:
    """Lowercased tokens, as used by the lexical index and its queries."""
    return [tok.lower() for tok, _, _ in tokenize(text)]


def window_bounds(n_tokens: int, chunk_size: int, overlap: int) -> list[tuple[int, int]]:
    if chunk_size <= 0:
        raise ChunkingError(f"chunk_size must be positive, got {chunk_size}")
    if not 0 <= overlap < chunk_size:
        raise ChunkingError(f"overlap must satisfy 0 <= overlap < chunk_size, got {overlap} >= {chunk_size}")
    stride = chunk_size - overlap
    bounds = []
    start = 0
    while True:
        end = min(start + chunk_size, n_tokens)
        bounds.append((start, end))
        if end >= n_tokens:
            return bounds
        start += stride


def chunk_document(
    doc: DocumentSource,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
) -> list[Chunk]:
    tokens = tokenize(doc.body)
    if not tokens:
        raise ChunkingError(f"document {doc.doc_id!r} contains no tokens")
    chunks = []
    for seq, (start, end) in enumerate(window_bounds(len(tokens), chunk_size, overlap)):
        c_start = tokens[start][1]
        c_end = tokens[end - 1][2]
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}#{seq}",
                doc_id=doc.doc_id,
                seq=seq,
                token_start=start,
                token_end=end,
                char_start=c_start,
                char_end=c_end,
                text=doc.body[c_start:c_end],
                token_count=end - start,
            )
        )
    return chunks


def chunk_corpus(
    docs: Iterable[DocumentSource],
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
) -> list[Chunk]:
    out: list[Chunk] = []
    for doc in docs:
        out.extend(chunk_document(doc, chunk_size, overlap))
    return out


def load_manifest(path: str | Path) -> list[DocumentSource]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise ManifestError(f"manifest {path} must be a JSON array")

    docs: list[DocumentSource] = []
    seen: set[str] = set()
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "doc_id" not in entry:
            raise ManifestError(f"manifest entry {i} has no doc_id")
        doc_id = str(entry["doc_id"])
        if doc_id in seen:
            raise ManifestError(f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)

        try:
            kind = DocKind(entry.get("kind"))
        except ValueError:
            raise ManifestError(f"doc {doc_id!r}: kind must be 'user_doc' or 'standard'") from None

        if "body" in entry:
            body = entry["body"]
        elif "body_path" in entry:
            body_path = path.parent / entry["body_path"]
            if not body_path.is_file():
                raise ManifestError(f"doc {doc_id!r}: body file not found: {body_path}")
            body = body_path.read_text(encoding="utf-8")
        else:
            raise ManifestError(f"doc {doc_id!r}: needs 'body' or 'body_path'")
        if not isinstance(body, str) or not body.strip():
            raise ManifestError(f"doc {doc_id!r}: empty body")

        metadata = {str(k): str(v) for k, v in (entry.get("metadata") or {}).items()}
        docs.append(DocumentSource(doc_id, str(entry.get("title", doc_id)), kind, body, metadata))
    return docs
