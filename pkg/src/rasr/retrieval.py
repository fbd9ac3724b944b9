"""Query construction under the prefix/full/oracle/random strategies, and context retrieval."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rasr.embedding import Embedder
from rasr.errors import MissingTranscriptError
from rasr.store import QueryFilter, ScoredChunk, VectorStore

PREFIX = "prefix"
FULL = "full"
ORACLE = "oracle"
RANDOM = "rand"


@dataclass(frozen=True)
class QueryMode:
    kind: str
    n: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in (PREFIX, FULL, ORACLE, RANDOM):
            raise ValueError(f"unknown query mode {self.kind!r}")
        if self.kind == PREFIX and (self.n is None or self.n < 1):
            raise ValueError("prefix mode needs n >= 1")
        if self.kind == RANDOM and self.seed is None:
            raise ValueError("random mode needs a seed")

    @classmethod
    def prefix(cls, n: int) -> "QueryMode":
        return cls(PREFIX, n=n)

    @classmethod
    def full(cls) -> "QueryMode":
        return cls(FULL)

    @classmethod
    def oracle(cls) -> "QueryMode":
        return cls(ORACLE)

    @classmethod
    def random(cls, seed: int) -> "QueryMode":
        return cls(RANDOM, seed=seed)

    @classmethod
    def parse(cls, text: str) -> "QueryMode":
        """Parse ``prefix:<n>``, ``full``, ``oracle`` or ``rand:<seed>``."""
        kind, _, arg = text.strip().partition(":")
        try:
            if kind == PREFIX:
                return cls.prefix(int(arg))
            if kind == RANDOM:
                return cls.random(int(arg))
        except ValueError:
            raise ValueError(f"bad query mode {text!r}") from None
        if kind in (FULL, ORACLE) and not arg:
            return cls(kind)
        raise ValueError(f"bad query mode {text!r}")

    @property
    def label(self) -> str:
        if self.kind == PREFIX:
            return f"prefix:{self.n}"
        if self.kind == RANDOM:
            return f"rand:{self.seed}"
        return self.kind


@dataclass(frozen=True)
class RetrievalRequest:
    query_text: str
    k: int = 2
    exclude_talk_ids: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        object.__setattr__(self, "exclude_talk_ids", frozenset(self.exclude_talk_ids))


@dataclass(frozen=True)
class RetrievalResult:
    chunks: tuple[ScoredChunk, ...]
    mode: QueryMode
    query_text: str
    exclude_talk_ids: frozenset[str] = field(default_factory=frozenset)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.label,
            "query_text": self.query_text,
            "exclude_talk_ids": sorted(self.exclude_talk_ids),
            "chunks": [{"chunk_id": c.entry.chunk_id, "talk_id": c.entry.talk_id,
                        "score": c.score, "text": c.entry.text} for c in self.chunks],
        }


def build_query(hypothesis: str, transcript: str | None, mode: QueryMode) -> str:
    if mode.kind == PREFIX:
        return hypothesis[:mode.n]
    if mode.kind == ORACLE:
        if transcript is None:
            raise MissingTranscriptError("oracle mode needs the reference transcript")
        return transcript
    return hypothesis


def retrieve(req: RetrievalRequest, mode: QueryMode, store: VectorStore, embedder: Embedder) -> RetrievalResult:
    """Fetch up to ``req.k`` chunks outside the excluded talks.

    Random mode ignores similarity when choosing: it draws ``k`` eligible
    chunks without replacement from a generator seeded with ``mode.seed`` and
    reports their true cosine scores.
    """
    flt = QueryFilter(req.exclude_talk_ids)
    query_vec = embedder.embed(req.query_text)
    if mode.kind == RANDOM:
        pool = store.eligible_ids(flt)
        rng = np.random.default_rng(mode.seed)
        picked = rng.choice(len(pool), size=min(req.k, len(pool)), replace=False) if pool else []
        scored = store.score_ids(query_vec, [pool[i] for i in picked])
        chunks = sorted(scored, key=lambda c: (-c.score, c.entry.chunk_id))
    else:
        chunks = store.top_k(query_vec, req.k, flt)
    return RetrievalResult(tuple(chunks), mode, req.query_text, req.exclude_talk_ids)


def format_context(result: RetrievalResult) -> str:
    return "\n\n".join(f"[doc {i}] {c.entry.text}" for i, c in enumerate(result.chunks, start=1))
