"""Hallucination judging, human review capture and score aggregation."""
from __future__ import annotations

import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Literal, Mapping, Sequence

from .pipeline import PipelineResponse
from .providers import BaseProvider

log = logging.getLogger(__name__)

Verdict = Literal["factual", "hallucinated"]
CORRECTNESS = ("correct", "partially_correct", "not_correct")
REASONING = ("strongest", "moderate", "weakest")

JUDGE_SYSTEM = (
    "You are an impartial evaluator. You decide whether an answer is supported by "
    "the reference text it was generated from."
)

JUDGE_USER = """Question:
{question}

Reference text:
{reference}

Answer:
{answer}

An answer is "hallucinated" if it states facts that are not supported by the reference text, \
and "factual" if everything it asserts can be traced to the reference text.
Reply with exactly two lines and nothing else:
VERDICT: factual or hallucinated
RATIONALE: one or two sentences explaining the decision"""

_VERDICT_LINE = re.compile(r"^VERDICT:\s*(factual|hallucinated)\s*$", re.IGNORECASE)
_RATIONALE_LINE = re.compile(r"^RATIONALE:\s*(.*)$", re.IGNORECASE)


class JudgeParseError(ValueError):
    pass


class ReviewError(ValueError):
    pass


@dataclass(frozen=True)
class JudgeVerdict:
    query_id: str
    verdict: Verdict
    rationale: str
    judge_model: str

    def __post_init__(self):
        if self.verdict not in ("factual", "hallucinated"):
            raise ValueError(f"bad verdict {self.verdict!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class HumanReview:
    query_id: str
    architecture: str
    correctness: str
    reasoning: str
    rationale: str = ""
    reviewer: str = "expert"

    def __post_init__(self):
        if self.correctness not in CORRECTNESS:
            raise ReviewError(f"correctness must be one of {CORRECTNESS}, got {self.correctness!r}")
        if self.reasoning not in REASONING:
            raise ReviewError(f"reasoning must be one of {REASONING}, got {self.reasoning!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        return self.query_id, self.architecture, self.reviewer

    def to_dict(self) -> dict:
        return asdict(self)


# judging

def judge_prompt(resp: PipelineResponse, chunk_texts: Mapping[str, str]) -> str:
    ids = [c.chunk_id for c in resp.doc_candidates] + [c.chunk_id for c in resp.ctx_candidates]
    reference = "\n\n".join(f"[{cid}]\n{chunk_texts[cid]}" for cid in ids)
    return JUDGE_USER.format(question=resp.query_str, reference=reference, answer=resp.exchange.answer)


def parse_verdict(text: str) -> tuple[Verdict, str]:
    """Read the ``VERDICT:`` line (first non-blank line) and optional ``RATIONALE:``."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise JudgeParseError("empty judge output")
    m = _VERDICT_LINE.match(lines[0])
    if not m:
        raise JudgeParseError(f"no VERDICT line in judge output: {lines[0][:80]!r}")
    rationale = ""
    for ln in lines[1:]:
        r = _RATIONALE_LINE.match(ln)
        if r:
            rationale = r.group(1).strip()
            break
    return m.group(1).lower(), rationale


def judge_hallucination(
    resp: PipelineResponse,
    provider: BaseProvider,
    chunk_texts: Mapping[str, str],
    retries: int = 1,
) -> JudgeVerdict:
    if not resp.exchange.answer.strip():
        raise ValueError(f"query {resp.query_id}: empty answer")
    if not resp.doc_candidates:
        raise ValueError(f"query {resp.query_id}: no retrieved chunks")
    model = provider.cfg.judge_model
    user = judge_prompt(resp, chunk_texts)
    last: JudgeParseError | None = None
    for _ in range(retries + 1):
        ex = provider.chat_complete(JUDGE_SYSTEM, user, model=model)
        try:
            verdict, rationale = parse_verdict(ex.answer)
        except JudgeParseError as exc:
            last = exc
            continue
        return JudgeVerdict(resp.query_id, verdict, rationale, model)
    raise JudgeParseError(f"query {resp.query_id}: {last}")


def judge_batch(
    responses: Sequence[PipelineResponse],
    provider: BaseProvider,
    chunk_texts: Mapping[str, str],
) -> tuple[list[JudgeVerdict], dict[str, str]]:
    """Judge each response; failures are collected per query instead of raised."""

    def one(resp):
        try:
            return judge_hallucination(resp, provider, chunk_texts)
        except Exception as exc:
            return resp.query_id, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=provider.cfg.concurrency) as pool:
        results = list(pool.map(one, responses))
    verdicts = [r for r in results if isinstance(r, JudgeVerdict)]
    failures = dict(r for r in results if isinstance(r, tuple))
    return verdicts, failures


_CITATION = re.compile(r"\[([^\[\]\s]+#\d+)\]")


def mock_judge(user: str) -> str:
    """Offline judge: factual iff the answer cites at least one chunk, all from the reference."""
    head, _, answer = user.partition("\nAnswer:\n")
    reference = head.partition("\nReference text:\n")[2]
    answer = answer.split("\n\nAn answer is ", 1)[0]
    cited = set(_CITATION.findall(answer))
    known = set(_CITATION.findall(reference))
    if cited and cited <= known:
        return f"VERDICT: factual\nRATIONALE: every cited source ({len(cited)}) is in the reference text."
    return "VERDICT: hallucinated\nRATIONALE: the answer relies on sources absent from the reference text."


def write_verdicts(path: str | Path, verdicts: Iterable[JudgeVerdict]) -> None:
    Path(path).write_text(
        "".join(json.dumps(v.to_dict(), sort_keys=True) + "\n" for v in verdicts), encoding="utf-8"
    )


def read_verdicts(path: str | Path) -> list[JudgeVerdict]:
    p = Path(path)
    if not p.exists():
        return []
    return [JudgeVerdict(**json.loads(ln)) for ln in p.read_text(encoding="utf-8").splitlines() if ln.strip()]


# human reviews

class ReviewStore:
    """Latest review per (query_id, architecture, reviewer) over an append-only log.

    ``known`` restricts which (query_id, architecture) pairs may be reviewed.
    When ``path`` is given every recorded review is appended there, and the
    store is rebuilt from that log on construction.
    """

    def __init__(self, known: Iterable[tuple[str, str]], path: str | Path | None = None):
        self.known = set(known)
        self.path = Path(path) if path is not None else None
        self.audit: list[HumanReview] = []
        self.reviews: dict[tuple[str, str, str], HumanReview] = {}
        if self.path is not None and self.path.exists():
            for ln in self.path.read_text(encoding="utf-8").splitlines():
                if ln.strip():
                    self._apply(HumanReview(**json.loads(ln)))

    def _apply(self, review: HumanReview) -> None:
        self.audit.append(review)
        self.reviews[review.key] = review

    def record(self, review: HumanReview) -> "ReviewStore":
        if (review.query_id, review.architecture) not in self.known:
            raise ReviewError(f"no response for query {review.query_id!r} under {review.architecture!r}")
        self._apply(review)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(review.to_dict(), sort_keys=True) + "\n")
        return self

    def __len__(self):
        return len(self.reviews)

    def latest(self) -> list[HumanReview]:
        return list(self.reviews.values())


def record_review(store: ReviewStore, review: HumanReview) -> ReviewStore:
    return store.record(review)


def _ask_choice(ask: Callable[[str], str], label: str, options: Sequence[str]) -> str:
    menu = " / ".join(f"{i + 1}={o}" for i, o in enumerate(options))
    while True:
        raw = ask(f"{label} [{menu}]: ").strip().lower()
        if raw.isdigit() and 1 <= int(raw) <= len(options):
            return options[int(raw) - 1]
        if raw in options:
            return raw


def review_session(
    responses: Sequence[PipelineResponse],
    store: ReviewStore,
    reviewer: str,
    chunk_texts: Mapping[str, str],
    ask: Callable[[str], str] = input,
    show: Callable[[str], None] = print,
    skip_reviewed: bool = True,
) -> int:
    """Walk through responses in the terminal and record a grade for each."""
    done = 0
    for resp in responses:
        key = (resp.query_id, resp.architecture, reviewer)
        if skip_reviewed and key in store.reviews:
            continue
        show(f"=== {resp.query_id} ({resp.architecture}) ===")
        show(f"QUESTION: {resp.query_str}\n")
        show("--- retrieved chunks ---")
        for c in resp.doc_candidates + resp.ctx_candidates:
            show(f"[{c.chunk_id}]\n{chunk_texts.get(c.chunk_id, '<missing>')}\n")
        show("--- answer ---")
        show(resp.exchange.answer + "\n")
        correctness = _ask_choice(ask, "correctness", CORRECTNESS)
        reasoning = _ask_choice(ask, "reasoning", REASONING)
        rationale = ask("rationale: ").strip()
        store.record(HumanReview(resp.query_id, resp.architecture, correctness, reasoning, rationale, reviewer))
        done += 1
    return done


# scoring

def _graded_average(counts: Sequence[int]) -> float:
    top, mid, bottom = counts
    if min(counts) < 0:
        raise ValueError(f"negative count in {tuple(counts)}")
    total = top + mid + bottom
    if total == 0:
        raise ValueError("all counts are zero")
    return (top + 0.5 * mid) / total


def score_correctness(counts: Sequence[int]) -> float:
    """(n_correct, n_partial, n_not) -> mean grade with 1 / 0.5 / 0 weights."""
    return _graded_average(counts)


def score_reasoning(counts: Sequence[int]) -> float:
    """(n_strongest, n_moderate, n_weakest) -> mean grade with 1 / 0.5 / 0 weights."""
    return _graded_average(counts)


def hallucination_rate(verdicts: Iterable[JudgeVerdict | str]) -> float:
    labels = [v if isinstance(v, str) else v.verdict for v in verdicts]
    if not labels:
        raise ValueError("no verdicts")
    return sum(1 for v in labels if v == "hallucinated") / len(labels)


@dataclass(frozen=True)
class RunInfo:
    run_id: str
    architecture: str
    model_id: str
    query_ids: tuple[str, ...]
    label: str | None = None  # report row name, e.g. "PCA2"


@dataclass
class ScoreReport:
    architecture: str
    model_id: str
    n_factual: int = 0
    n_hallucinated: int = 0
    hallucination_rate: float | None = None
    correctness_counts: tuple[int, int, int] = (0, 0, 0)
    correctness_score: float | None = None
    reasoning_counts: tuple[int, int, int] = (0, 0, 0)
    reasoning_score: float | None = None
    run_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["correctness_counts"] = list(self.correctness_counts)
        d["reasoning_counts"] = list(self.reasoning_counts)
        return d


def build_report(
    runs: Sequence[RunInfo],
    verdicts: Mapping[str, Sequence[JudgeVerdict]],
    reviews: Mapping[str, Sequence[HumanReview]],
) -> list[ScoreReport]:
    by_id = {r.run_id: r for r in runs}
    for kind, mapping in (("verdicts", verdicts), ("reviews", reviews)):
        unknown = set(mapping) - set(by_id)
        if unknown:
            raise ReviewError(f"{kind} reference unknown runs: {sorted(unknown)}")

    rows: dict[tuple[str, str], ScoreReport] = {}
    for run in runs:
        name = run.label or run.architecture
        row = rows.setdefault((name, run.model_id), ScoreReport(name, run.model_id))
        row.run_ids.append(run.run_id)
        qids = set(run.query_ids)

        vs = verdicts.get(run.run_id, [])
        for v in vs:
            if v.query_id not in qids:
                raise ReviewError(f"verdict for unknown query {v.query_id!r} in run {run.run_id!r}")
        tally = Counter(v.verdict for v in vs)
        row.n_factual += tally["factual"]
        row.n_hallucinated += tally["hallucinated"]

        rs = reviews.get(run.run_id, [])
        for r in rs:
            if r.query_id not in qids:
                raise ReviewError(f"review for unknown query {r.query_id!r} in run {run.run_id!r}")
        c = Counter(r.correctness for r in rs)
        g = Counter(r.reasoning for r in rs)
        row.correctness_counts = tuple(a + c[k] for a, k in zip(row.correctness_counts, CORRECTNESS))
        row.reasoning_counts = tuple(a + g[k] for a, k in zip(row.reasoning_counts, REASONING))

    for row in rows.values():
        n = row.n_factual + row.n_hallucinated
        row.hallucination_rate = row.n_hallucinated / n if n else None
        row.correctness_score = score_correctness(row.correctness_counts) if sum(row.correctness_counts) else None
        row.reasoning_score = score_reasoning(row.reasoning_counts) if sum(row.reasoning_counts) else None
    return list(rows.values())


def render_json(reports: Sequence[ScoreReport]) -> str:
    return json.dumps({"rows": [r.to_dict() for r in reports]}, indent=2, sort_keys=True) + "\n"


def _fmt(x: float | None, digits: int) -> str:
    return "n/a" if x is None else f"{x:.{digits}f}"


def render_markdown(reports: Sequence[ScoreReport]) -> str:
    lines = [
        "| Arch. | Model | Hall | Correctness | Reasoning |",
        "|---|---|---|---|---|",
    ]
    for r in reports:
        lines.append(
            f"| {r.architecture} | {r.model_id} | {_fmt(r.hallucination_rate, 3)} "
            f"| {_fmt(r.correctness_score, 2)} | {_fmt(r.reasoning_score, 2)} |"
        )
    return "\n".join(lines) + "\n"
