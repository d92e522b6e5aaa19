"""Prompt templates for the baseline (BCA) and parallel (PCA) architectures.

Template text is kept byte-for-byte, trailing spaces included, so each line is
spelled out explicitly.
"""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from typing import Literal, Mapping, Sequence

from .corpus import Chunk
from .retrieval import RetrievalCandidate

Architecture = Literal["BCA", "PCA"]

BCA_SYSTEM = "\n".join([
    "You are an AI assistant specialized in reviewing documentation.",
    "Your primary task is to perform an expert analysis on the **User Documentation**.",
    "**Do NOT** use any prior knowledge.",
    "Your analysis should be detailed and based directly on evidence from the ",
    "**User Documentation**.",
])

BCA_USER = "\n".join([
    "You will be provided with some documentation.",
    "",
    "===================== **User Documentation** =====================",
    "{user_docs_str}",
    "==================================================================",
    "",
    "Based **solely** on the **User Documentation**, please answer the",
    "following **Question**.",
    "",
    "**Question:** {query_str}",
    "**Important Guidelines:**",
    "- **Do NOT** use any prior knowledge or external information.",
    "Your response **must** be in the following format:",
    "- First provide step-by-step reasoning on how to answer the **Question**",
    "- Then provide a summary of how you reached your answer.",
])

PCA_SYSTEM = "\n".join([
    "You are an AI assistant specialized in reviewing documentation based ",
    "on the provided User Documentation.",
    "",
    "Your primary task is to perform an expert analysis on the ",
    "**User Documentation** using the provided **Contextual Information** ",
    "to enhance your analysis where appropriate and necessary.",
    "**Do NOT** use any prior knowledge or perform your analysis directly ",
    "on the **Contextual Information**; it is provided **ONLY** to help you ",
    "understand the **Question** and enhance your reasoning capabilities.",
    "",
    "Your analysis should be detailed and based directly on evidence fom the ",
    "**User Documentation**.",
])

PCA_USER = "\n".join([
    "You will be provided with some documentation and supporting context:",
    "",
    "===================== **User Documentation** =====================",
    "{user_docs_str}",
    "==================================================================",
    "",
    "------------------- **Contextual Information** -------------------",
    "{context_str}",
    "------------------------------------------------------------------",
    "Based **solely** on the **User Documentation** and by enhancing your ",
    "analysis utilising the **Contextual Information**",
    "please answer the following question.",
    "",
    "**Question:** {query_str}",
    "",
    "**Important Guidelines:**",
    "- **Do NOT** use any prior knowledge or external information.",
    "- **Do NOT** perform an analysis of the **Contextual Information** ",
    "in your answer.",
    "Your response **must** be in the following format:",
    "- First Provide step-by-step reasoning on how to answer the **Question**, ",
    "potentially making use of the **Contextual Information** to refine your ",
    "steps.",
    "- Then provide a summary of how you reached your answer.",
])

_PLACEHOLDER = re.compile(r"\{(user_docs_str|context_str|query_str)\}")

BLOCK_SEPARATOR = "\n\n---\n\n"


class TemplateError(RuntimeError):
    pass


@dataclass(frozen=True)
class PromptBundle:
    architecture: Architecture
    system: str
    user: str
    doc_chunk_ids: list[str] = field(default_factory=list)
    ctx_chunk_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PromptBundle":
        return cls(**d)


def fill(template: str, values: Mapping[str, str]) -> str:
    """Substitute every placeholder in one pass; inserted text is never rescanned."""
    wanted = set(_PLACEHOLDER.findall(template))
    if wanted != set(values):
        raise TemplateError(f"template needs {sorted(wanted)}, got {sorted(values)}")
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def render_context_block(cands: Sequence[RetrievalCandidate], chunks: Mapping[str, Chunk]) -> str:
    if not cands:
        raise ValueError("need at least one retrieved chunk to render")
    parts = []
    for cand in sorted(cands, key=lambda c: c.rank):
        if cand.chunk_id not in chunks:
            raise KeyError(f"unknown chunk_id {cand.chunk_id!r}")
        parts.append(f"[{cand.chunk_id}]\n{chunks[cand.chunk_id].text}")
    return BLOCK_SEPARATOR.join(parts)


def _require(**kw: str) -> None:
    for name, value in kw.items():
        if not value or not value.strip():
            raise ValueError(f"{name} must be non-empty")


def render_bca(query_str: str, doc_block: str, doc_chunk_ids: Sequence[str] = ()) -> PromptBundle:
    _require(query_str=query_str, doc_block=doc_block)
    user = fill(BCA_USER, {"user_docs_str": doc_block, "query_str": query_str})
    return PromptBundle("BCA", BCA_SYSTEM, user, list(doc_chunk_ids), [])


def render_pca(
    query_str: str,
    doc_block: str,
    ctx_block: str,
    doc_chunk_ids: Sequence[str] = (),
    ctx_chunk_ids: Sequence[str] = (),
) -> PromptBundle:
    _require(query_str=query_str, doc_block=doc_block, ctx_block=ctx_block)
    user = fill(PCA_USER, {"user_docs_str": doc_block, "context_str": ctx_block, "query_str": query_str})
    return PromptBundle("PCA", PCA_SYSTEM, user, list(doc_chunk_ids), list(ctx_chunk_ids))
