"""Chat, embedding and re-rank clients: HTTP-backed or deterministic mocks."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx
import numpy as np

from .corpus import terms

log = logging.getLogger(__name__)


class ProviderError(RuntimeError):
    def __init__(self, message: str, status: int | None = None, attempts: int = 1):
        super().__init__(f"{message} (status={status}, attempts={attempts})")
        self.status = status
        self.attempts = attempts


class ProtocolError(ProviderError):
    """The service answered, but not with a usable payload."""


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: float = 1.0  # seconds; doubled after every failed attempt


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str = "https://openrouter.ai/api/v1"
    api_key_env: str = "OPENROUTER_API_KEY"
    chat_model: str = "openai/gpt-4o"
    embed_model: str = "embed-english-v3.0"
    rerank_model: str = "rerank-english-v3.0"
    judge_model: str = "meta-llama/llama-3.1-405b-instruct"
    # embeddings and re-ranking are usually served elsewhere than chat
    embed_base_url: str | None = None
    embed_api_key_env: str | None = None
    rerank_base_url: str | None = None
    rerank_api_key_env: str | None = None
    max_tokens: int = 2048
    temperature: float = 0.0
    timeout: float = 60.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    concurrency: int = 4

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if isinstance(self.retry, Mapping):
            object.__setattr__(self, "retry", RetryPolicy(**self.retry))

    def snapshot(self) -> dict:
        """Plain-dict view for run manifests; holds env var names, never key values."""
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ProviderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown provider config keys: {sorted(unknown)}")
        return cls(**dict(data))


def load_provider_config(path: str | Path) -> ProviderConfig:
    """Read a TOML or JSON file; a ``[providers]`` table is used when present."""
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    else:
        data = json.loads(path.read_text(encoding="utf-8"))
    return ProviderConfig.from_mapping(data.get("providers", data))


@dataclass(frozen=True)
class ChatExchange:
    system: str
    user: str
    answer: str
    model_id: str
    usage: dict[str, int]
    latency_ms: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChatExchange":
        return cls(**d)


class EmbeddingCache:
    """In-memory vectors keyed by (model, sha256 of text)."""

    def __init__(self):
        self._store: dict[tuple[str, str], list[float]] = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(model: str, text: str) -> tuple[str, str]:
        return model, hashlib.sha256(text.encode("utf-8")).hexdigest()

    def get(self, model: str, text: str) -> list[float] | None:
        with self._lock:
            return self._store.get(self.key(model, text))

    def put(self, model: str, text: str, vec: Sequence[float]) -> None:
        with self._lock:
            self._store[self.key(model, text)] = list(vec)

    def __len__(self):
        return len(self._store)


class BaseProvider:
    """Shared embedding-cache and call-counting logic.

    Subclasses implement ``_chat``, ``_embed`` and ``_rerank``; ``calls`` counts
    backend invocations per service so cache hits are observable.
    """

    def __init__(self, cfg: ProviderConfig, cache: EmbeddingCache | None = None):
        self.cfg = cfg
        self.cache = cache if cache is not None else EmbeddingCache()
        self.calls = {"chat": 0, "embed": 0, "rerank": 0}
        self._slots = threading.BoundedSemaphore(cfg.concurrency)
        self._count_lock = threading.Lock()

    def _count(self, kind: str) -> None:
        with self._count_lock:
            self.calls[kind] += 1

    def chat_complete(self, system: str, user: str, model: str | None = None) -> ChatExchange:
        model = model or self.cfg.chat_model
        t0 = time.perf_counter()
        with self._slots:
            self._count("chat")
            answer, usage = self._chat(system, user, model)
        if not answer or not answer.strip():
            raise ProtocolError(f"empty answer from chat model {model!r}")
        return ChatExchange(system, user, answer, model, usage, self._latency(t0))

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed_texts needs at least one text")
        for i, t in enumerate(texts):
            if not t or not t.strip():
                raise ValueError(f"text {i} is empty")
        model = self.cfg.embed_model
        out: list[list[float] | None] = [self.cache.get(model, t) for t in texts]
        missing = list(dict.fromkeys(t for t, v in zip(texts, out) if v is None))
        if missing:
            with self._slots:
                self._count("embed")
                vecs = self._embed(missing, model)
            if len(vecs) != len(missing):
                raise ProtocolError(f"asked for {len(missing)} embeddings, got {len(vecs)}")
            dims = {len(v) for v in vecs}
            if len(dims) != 1:
                raise ProtocolError(f"embedding dims differ within one batch: {sorted(dims)}")
            fresh = dict(zip(missing, vecs))
            for t, v in fresh.items():
                self.cache.put(model, t, v)
            out = [v if v is not None else fresh[t] for t, v in zip(texts, out)]
        return out

    def embed_query(self, text: str) -> list[float]:
        return self.embed_texts([text])[0]

    def rerank(self, query: str, documents: list[str]) -> list[tuple[int, float]]:
        if not documents:
            raise ValueError("rerank needs at least one document")
        with self._slots:
            self._count("rerank")
            scored = self._rerank(query, documents, self.cfg.rerank_model)
        if sorted(i for i, _ in scored) != list(range(len(documents))):
            raise ProtocolError(f"re-rank returned {len(scored)} scores for {len(documents)} documents")
        return scored

    def _latency(self, t0: float) -> float:
        return round((time.perf_counter() - t0) * 1000.0, 3)

    def _chat(self, system: str, user: str, model: str) -> tuple[str, dict[str, int]]:
        raise NotImplementedError

    def _embed(self, texts: list[str], model: str) -> list[list[float]]:
        raise NotImplementedError

    def _rerank(self, query: str, documents: list[str], model: str) -> list[tuple[int, float]]:
        raise NotImplementedError


RETRYABLE = {408, 409, 425, 429, 500, 502, 503, 504}


class HttpProvider(BaseProvider):
    """Chat-completions / embeddings / re-rank over JSON HTTP with retries."""

    def __init__(
        self,
        cfg: ProviderConfig,
        cache: EmbeddingCache | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(cfg, cache)
        self._client = httpx.Client(timeout=cfg.timeout, transport=transport)
        self._sleep = sleep

    def close(self) -> None:
        self._client.close()

    def _headers(self, key_env: str | None) -> dict[str, str]:
        name = key_env or self.cfg.api_key_env
        key = os.environ.get(name)
        if not key:
            raise ProviderError(f"environment variable {name} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _post(self, url: str, payload: dict, key_env: str | None) -> dict:
        headers = self._headers(key_env)
        policy = self.cfg.retry
        delay = policy.backoff
        status = None
        reason = ""
        for attempt in range(1, policy.max_attempts + 1):
            try:
                resp = self._client.post(url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                status, reason = None, f"timeout: {exc}"
            except httpx.TransportError as exc:
                status, reason = None, f"transport error: {exc}"
            else:
                status = resp.status_code
                if status < 400:
                    try:
                        return resp.json()
                    except ValueError:
                        raise ProtocolError(f"non-JSON body from {url}", status, attempt) from None
                reason = resp.text[:200]
                if status not in RETRYABLE:
                    raise ProviderError(f"POST {url} failed: {reason}", status, attempt)
                retry_after = resp.headers.get("retry-after")
                if retry_after:
                    try:
                        delay = max(delay, float(retry_after))
                    except ValueError:
                        pass
            if attempt < policy.max_attempts:
                log.info("POST %s attempt %d failed (%s); retrying in %.2fs", url, attempt, reason, delay)
                self._sleep(delay)
                delay *= 2
        raise ProviderError(f"POST {url} gave up: {reason}", status, policy.max_attempts)

    def _chat(self, system, user, model):
        payload = {
            "model": model,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
            "max_tokens": self.cfg.max_tokens,
            "temperature": self.cfg.temperature,
        }
        data = self._post(f"{self.cfg.base_url.rstrip('/')}/chat/completions", payload, None)
        try:
            answer = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProtocolError("chat response has no choices[0].message.content") from None
        u = data.get("usage") or {}
        usage = {"prompt_tokens": int(u.get("prompt_tokens", 0)), "completion_tokens": int(u.get("completion_tokens", 0))}
        return answer or "", usage

    def _embed(self, texts, model):
        base = (self.cfg.embed_base_url or self.cfg.base_url).rstrip("/")
        data = self._post(f"{base}/embeddings", {"model": model, "input": texts}, self.cfg.embed_api_key_env)
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            return [list(map(float, r["embedding"])) for r in rows]
        except (KeyError, TypeError):
            raise ProtocolError("embedding response has no data[].embedding") from None

    def _rerank(self, query, documents, model):
        base = (self.cfg.rerank_base_url or self.cfg.base_url).rstrip("/")
        payload = {"model": model, "query": query, "documents": documents, "top_n": len(documents)}
        data = self._post(f"{base}/rerank", payload, self.cfg.rerank_api_key_env)
        try:
            return [(int(r["index"]), float(r["relevance_score"])) for r in data["results"]]
        except (KeyError, TypeError):
            raise ProtocolError("re-rank response has no results[].relevance_score") from None


def hashed_embedding(text: str, dim: int = 64, model: str = "mock") -> list[float]:
    """Unit vector from hash-seeded per-token directions; shared words raise cosine."""
    vec = np.zeros(dim)
    toks = terms(text) or [text]
    for tok in toks:
        seed = int.from_bytes(hashlib.sha256(f"{model}\x00{tok}".encode()).digest()[:8], "little")
        vec += np.random.default_rng(seed).standard_normal(dim)
    norm = np.linalg.norm(vec)
    return (vec / norm).tolist() if norm else vec.tolist()


def shared_token_score(query: str, doc: str) -> float:
    return float(len(set(terms(query)) & set(terms(doc))))


def default_mock_answer(system: str, user: str) -> str:
    # cite every chunk header rendered into the prompt so mock answers stay grounded
    cited = [line for line in user.splitlines() if line.startswith("[") and line.endswith("]") and "#" in line]
    digest = hashlib.sha256(f"{system}\x00{user}".encode("utf-8")).hexdigest()[:12]
    refs = ", ".join(cited) if cited else "no sources"
    return (
        f"Step 1: locate the passages relevant to the question ({refs}).\n"
        f"Step 2: compare them with the question requirements.\n"
        f"Summary: answer derived from {refs}. [mock:{digest}]"
    )


class MockProvider(BaseProvider):
    """Offline provider whose outputs are pure functions of the inputs.

    ``scripted`` maps an exact user prompt to its answer; anything else goes to
    ``responder`` (default: a templated answer citing the prompt's chunk headers).
    Failures can be injected per user prompt through ``fail_on``.
    """

    def __init__(
        self,
        cfg: ProviderConfig | None = None,
        scripted: Mapping[str, str] | None = None,
        responder: Callable[[str, str, str], str] | None = None,
        dim: int = 64,
        fail_on: Callable[[str], bool] | None = None,
        cache: EmbeddingCache | None = None,
    ):
        super().__init__(cfg or ProviderConfig(), cache)
        self.scripted = dict(scripted or {})
        self.responder = responder
        self.dim = dim
        self.fail_on = fail_on

    def _chat(self, system, user, model):
        if self.fail_on is not None and self.fail_on(user):
            raise ProviderError("injected mock failure", status=503, attempts=self.cfg.retry.max_attempts)
        if user in self.scripted:
            answer = self.scripted[user]
        elif self.responder is not None:
            answer = self.responder(system, user, model)
        else:
            answer = default_mock_answer(system, user)
        usage = {"prompt_tokens": len(terms(system)) + len(terms(user)), "completion_tokens": len(terms(answer))}
        return answer, usage

    def _embed(self, texts, model):
        return [hashed_embedding(t, self.dim, model) for t in texts]

    def _rerank(self, query, documents, model):
        return [(i, shared_token_score(query, d)) for i, d in enumerate(documents)]

    def _latency(self, t0):
        return 0.0
