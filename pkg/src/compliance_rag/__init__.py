"""Hybrid-retrieval RAG pipeline for OT cybersecurity compliance questions."""

from .corpus import Chunk, DocumentSource, chunk_document, load_manifest, tokenize
from .evaluation import (
    HumanReview,
    JudgeVerdict,
    ScoreReport,
    build_report,
    hallucination_rate,
    score_correctness,
    score_reasoning,
)
from .index import IndexPair, build_indices, cosine_similarity
from .pipeline import PipelineResponse, QueryRecord, run_batch, run_query
from .providers import HttpProvider, MockProvider, ProviderConfig
from .retrieval import RetrievalCandidate, RetrievalConfig, hybrid_score, normalize_scores

__version__ = "0.1.0"
