"""Text embedders: a deterministic hashed n-gram provider and a remote-service client."""

from __future__ import annotations

import enum
import functools
import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from rasr._http import post_json_with_retry
from rasr.errors import DimensionMismatch, RemoteProtocolError, ZeroNormError

# Hash constants for DeterministicNGram. Changing any of them changes every stored vector.
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MIX_MULTIPLIER = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1

EmbeddingVector = np.ndarray  # 1-D float64


class Provider(str, enum.Enum):
    DETERMINISTIC_NGRAM = "ngram"
    REMOTE = "remote"


@dataclass(frozen=True)
class EmbedderSpec:
    provider: Provider = Provider.DETERMINISTIC_NGRAM
    dim: int = 256
    ngram_order: int = 3
    remote_endpoint: str = ""
    remote_model: str = "multilingual-e5-large"
    batch_size: int = 32
    hash_seed: int = 0
    timeout_s: float = 30.0
    max_in_flight: int = 4
    retries: int = 3
    backoff_s: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "provider", Provider(self.provider))
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.ngram_order < 1:
            raise ValueError("ngram_order must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.provider is Provider.REMOTE and not self.remote_endpoint:
            raise ValueError("remote provider needs remote_endpoint")

    @classmethod
    def remote(cls, endpoint: str, dim: int = 1024, **kw) -> "EmbedderSpec":
        return cls(provider=Provider.REMOTE, dim=dim, remote_endpoint=endpoint, **kw)

    def to_dict(self) -> dict:
        return {"provider": self.provider.value, "dim": self.dim, "ngram_order": self.ngram_order,
                "remote_endpoint": self.remote_endpoint, "remote_model": self.remote_model,
                "batch_size": self.batch_size, "hash_seed": self.hash_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderSpec":
        return cls(**d)


def ngram_bucket(gram: str, dim: int, seed: int = 0) -> int:
    """FNV-1a over code points, then multiply-shift range reduction onto ``[0, dim)``."""
    key = FNV_OFFSET ^ (seed & MASK64)
    for ch in gram:
        key = ((key ^ ord(ch)) * FNV_PRIME) & MASK64
    return (((key * MIX_MULTIPLIER) & MASK64) * dim) >> 64


def char_ngrams(text: str, order: int) -> list[str]:
    # texts shorter than the order contribute themselves as a single gram
    if len(text) < order:
        return [text] if text else []
    return [text[i:i + order] for i in range(len(text) - order + 1)]


class NGramEmbedder:
    """Hashed character n-gram term frequencies, L2-normalized."""

    def __init__(self, spec: EmbedderSpec):
        self.spec = spec

    def embed(self, text: str) -> EmbeddingVector:
        dim, seed = self.spec.dim, self.spec.hash_seed
        vec = np.zeros(dim, dtype=np.float64)
        grams = char_ngrams(text, self.spec.ngram_order)
        if not grams:
            vec[0] = 1.0
            return vec
        for gram in grams:
            vec[ngram_bucket(gram, dim, seed)] += 1.0
        return vec / math.sqrt(math.fsum(vec * vec))

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self.embed(t) for t in texts]


class RemoteEmbedder:
    """Client for ``POST {endpoint}/embed``; vectors are returned verbatim."""

    def __init__(self, spec: EmbedderSpec):
        self.spec = spec
        self._slots = threading.BoundedSemaphore(spec.max_in_flight)

    def _request(self, texts: list[str]) -> list[EmbeddingVector]:
        url = self.spec.remote_endpoint.rstrip("/") + "/embed"
        with self._slots:
            resp = post_json_with_retry(url, {"texts": texts, "model": self.spec.remote_model},
                                        timeout=self.spec.timeout_s, retries=self.spec.retries,
                                        backoff_s=self.spec.backoff_s)
        vectors = resp.get("vectors") if isinstance(resp, dict) else None
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise RemoteProtocolError(f"{url}: expected {len(texts)} vectors")
        out = []
        for v in vectors:
            arr = np.asarray(v, dtype=np.float64)
            if arr.ndim != 1 or arr.shape[0] != self.spec.dim:
                raise DimensionMismatch(f"service returned dim {arr.shape}, expected {self.spec.dim}")
            if not np.all(np.isfinite(arr)):
                raise RemoteProtocolError(f"{url}: non-finite vector values")
            out.append(arr)
        return out

    def embed(self, text: str) -> EmbeddingVector:
        return self._request([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out: list[EmbeddingVector] = []
        size = self.spec.batch_size
        for i in range(0, len(texts), size):
            out.extend(self._request(list(texts[i:i + size])))
        return out


Embedder = NGramEmbedder | RemoteEmbedder


@functools.lru_cache(maxsize=32)
def make_embedder(spec: EmbedderSpec) -> Embedder:
    if spec.provider is Provider.REMOTE:
        return RemoteEmbedder(spec)
    return NGramEmbedder(spec)


def embed(text: str, spec: EmbedderSpec) -> EmbeddingVector:
    return make_embedder(spec).embed(text)


def embed_batch(texts: Sequence[str], spec: EmbedderSpec) -> list[EmbeddingVector]:
    return make_embedder(spec).embed_batch(texts)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between ``a`` and ``b``, clamped to [-1, 1].

    Sums use ``math.fsum`` (exactly rounded), so the result does not depend on
    summation order and is bit-identical across platforms.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dims differ: {a.shape} vs {b.shape}")
    sa = float(np.max(np.abs(a))) if a.size else 0.0
    sb = float(np.max(np.abs(b))) if b.size else 0.0
    if sa == 0.0 or sb == 0.0:
        raise ZeroNormError("cosine similarity of a zero vector")
    # rescale first so squaring cannot underflow or overflow
    a = a / sa
    b = b / sb
    na = math.sqrt(math.fsum(a * a))
    nb = math.sqrt(math.fsum(b * b))
    c = math.fsum(a * b) / (na * nb)
    return min(1.0, max(-1.0, c))
