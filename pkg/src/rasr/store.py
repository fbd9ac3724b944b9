"""Exact cosine top-k vector store with talk exclusion and a checksummed binary format."""

from __future__ import annotations

import os
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from rasr.errors import CorruptStoreError, DimensionMismatch, ZeroNormError

MAGIC = b"RASRVDB1"
_SCORE_BLOCK = 1024  # rows per block when scoring; bounds the temporary buffer


@dataclass(frozen=True)
class StoreEntry:
    chunk_id: str
    talk_id: str
    vector: np.ndarray = field(repr=False, compare=False)
    text: str = field(default="", repr=False)


@dataclass(frozen=True)
class QueryFilter:
    exclude_talk_ids: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "exclude_talk_ids", frozenset(self.exclude_talk_ids))


@dataclass(frozen=True)
class ScoredChunk:
    entry: StoreEntry
    score: float

    @property
    def chunk_id(self) -> str:
        return self.entry.chunk_id

    @property
    def talk_id(self) -> str:
        return self.entry.talk_id


@dataclass(frozen=True)
class _Snapshot:
    ids: tuple[str, ...]
    talk_ids: tuple[str, ...]
    texts: tuple[str, ...]
    raw: np.ndarray    # (n, dim) float32, exactly what is persisted
    unit: np.ndarray   # (n, dim) float64, raw rescaled to unit norm
    talk_codes: np.ndarray
    talk_index: dict
    row_of: dict


def _unit_rows(raw: np.ndarray) -> np.ndarray:
    wide = raw.astype(np.float64)
    norms = np.sqrt(np.sum(wide * wide, axis=1, keepdims=True))
    return wide / norms


def _snapshot(ids, talk_ids, texts, raw: np.ndarray) -> _Snapshot:
    talk_index: dict[str, int] = {}
    codes = np.fromiter((talk_index.setdefault(t, len(talk_index)) for t in talk_ids),
                        dtype=np.int64, count=len(talk_ids))
    raw.setflags(write=False)
    unit = _unit_rows(raw)
    unit.setflags(write=False)
    return _Snapshot(tuple(ids), tuple(talk_ids), tuple(texts), raw, unit, codes, talk_index,
                     {cid: i for i, cid in enumerate(ids)})


class VectorStore:
    """In-memory exact-search store.

    Readers work on an immutable snapshot; ``upsert`` builds a new snapshot and
    swaps it in under a lock, so a query never sees half of an upsert batch.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self._write_lock = threading.Lock()
        self._snap = _snapshot([], [], [], np.zeros((0, dim), dtype=np.float32))

    def __len__(self) -> int:
        return len(self._snap.ids)

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._snap.row_of

    @property
    def chunk_ids(self) -> tuple[str, ...]:
        return self._snap.ids

    def _prepare(self, vector) -> np.ndarray:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimensionMismatch(f"vector shape {v.shape}, store dim {self.dim}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vector has non-finite values")
        scale = np.max(np.abs(v))
        if scale == 0:
            raise ZeroNormError("cannot store a zero vector")
        v = v / scale
        return (v / np.sqrt(np.sum(v * v))).astype(np.float32)

    def upsert(self, entries: Iterable[StoreEntry]) -> int:
        """Insert or replace entries by chunk_id; returns the number of entries written."""
        entries = list(entries)
        prepared = [self._prepare(e.vector) for e in entries]
        with self._write_lock:
            snap = self._snap
            ids = list(snap.ids)
            talks = list(snap.talk_ids)
            texts = list(snap.texts)
            row_of = dict(snap.row_of)
            new_rows: list[np.ndarray] = []
            replaced: dict[int, np.ndarray] = {}
            for e, v in zip(entries, prepared):
                row = row_of.get(e.chunk_id)
                if row is None:
                    row = len(ids)
                    row_of[e.chunk_id] = row
                    ids.append(e.chunk_id)
                    talks.append(e.talk_id)
                    texts.append(e.text)
                    new_rows.append(v)
                else:
                    talks[row] = e.talk_id
                    texts[row] = e.text
                    if row < len(snap.ids):
                        replaced[row] = v
                    else:
                        new_rows[row - len(snap.ids)] = v
            raw = snap.raw.copy()
            for row, v in replaced.items():
                raw[row] = v
            if new_rows:
                raw = np.vstack([raw, np.stack(new_rows)])
            self._snap = _snapshot(ids, talks, texts, raw)
        return len(entries)

    def get(self, chunk_id: str) -> StoreEntry:
        snap = self._snap
        row = snap.row_of[chunk_id]
        return self._entry(snap, row)

    def entries(self) -> list[StoreEntry]:
        snap = self._snap
        return [self._entry(snap, i) for i in range(len(snap.ids))]

    @staticmethod
    def _entry(snap: _Snapshot, row: int) -> StoreEntry:
        return StoreEntry(snap.ids[row], snap.talk_ids[row], snap.unit[row], snap.texts[row])

    def _query_unit(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatch(f"query shape {q.shape}, store dim {self.dim}")
        scale = np.max(np.abs(q)) if q.size else 0.0
        if scale == 0 or not np.isfinite(scale):
            raise ZeroNormError("query vector has zero or non-finite norm")
        q = q / scale
        return q / np.sqrt(np.sum(q * q))

    @staticmethod
    def _scores(snap: _Snapshot, q: np.ndarray) -> np.ndarray:
        # row-wise multiply+reduce gives identical rows identical scores, unlike BLAS gemv
        out = np.empty(len(snap.ids), dtype=np.float64)
        for lo in range(0, len(out), _SCORE_BLOCK):
            out[lo:lo + _SCORE_BLOCK] = np.sum(snap.unit[lo:lo + _SCORE_BLOCK] * q, axis=1)
        return np.clip(out, -1.0, 1.0)

    def _eligible(self, snap: _Snapshot, flt: QueryFilter) -> np.ndarray:
        codes = [snap.talk_index[t] for t in flt.exclude_talk_ids if t in snap.talk_index]
        if not codes:
            return np.arange(len(snap.ids))
        return np.flatnonzero(~np.isin(snap.talk_codes, codes))

    def eligible_ids(self, flt: QueryFilter = QueryFilter()) -> list[str]:
        snap = self._snap
        return sorted(snap.ids[i] for i in self._eligible(snap, flt))

    def score_ids(self, query, chunk_ids: Sequence[str]) -> list[ScoredChunk]:
        """Score named entries against ``query`` with the same arithmetic as ``top_k``."""
        snap = self._snap
        q = self._query_unit(query)
        rows = [snap.row_of[c] for c in chunk_ids]
        if not rows:
            return []
        scores = np.clip(np.sum(snap.unit[rows] * q, axis=1), -1.0, 1.0)
        return [ScoredChunk(self._entry(snap, r), float(s)) for r, s in zip(rows, scores)]

    def top_k(self, query, k: int, flt: QueryFilter = QueryFilter()) -> list[ScoredChunk]:
        """Exact top-k by cosine; descending score, ties broken by ascending chunk_id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        snap = self._snap
        q = self._query_unit(query)
        if not snap.ids:
            return []
        eligible = self._eligible(snap, flt)
        if eligible.size == 0:
            return []
        scores = self._scores(snap, q)[eligible]
        kk = min(k, eligible.size)
        threshold = -np.partition(-scores, kk - 1)[kk - 1]
        cand = np.flatnonzero(scores >= threshold)
        order = sorted(cand.tolist(), key=lambda i: (-scores[i], snap.ids[eligible[i]]))[:kk]
        return [ScoredChunk(self._entry(snap, int(eligible[i])), float(scores[i])) for i in order]

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "VectorStore":
        return cls.from_bytes(Path(path).read_bytes())

    def to_bytes(self) -> bytes:
        snap = self._snap
        parts = [struct.pack("<IQ", self.dim, len(snap.ids))]
        for cid, tid, text, row in zip(snap.ids, snap.talk_ids, snap.texts, snap.raw):
            for s in (cid, tid, text):
                b = s.encode("utf-8")
                parts.append(struct.pack("<I", len(b)))
                parts.append(b)
            parts.append(row.astype("<f4").tobytes())
        body = b"".join(parts)
        return MAGIC + body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "VectorStore":
        if len(data) < len(MAGIC) + 12 + 4 or data[:len(MAGIC)] != MAGIC:
            raise CorruptStoreError("bad magic or truncated header")
        body, (crc,) = data[len(MAGIC):-4], struct.unpack("<I", data[-4:])
        if zlib.crc32(body) != crc:
            raise CorruptStoreError("checksum mismatch")
        try:
            dim, count = struct.unpack_from("<IQ", body, 0)
            if dim < 1:
                raise CorruptStoreError("dim must be >= 1")
            pos = 12
            ids, talks, texts, rows = [], [], [], []
            for _ in range(count):
                fields = []
                for _ in range(3):
                    (n,) = struct.unpack_from("<I", body, pos)
                    pos += 4
                    if pos + n > len(body):
                        raise CorruptStoreError("record runs past end of file")
                    fields.append(body[pos:pos + n].decode("utf-8"))
                    pos += n
                if pos + 4 * dim > len(body):
                    raise CorruptStoreError("record runs past end of file")
                rows.append(np.frombuffer(body, dtype="<f4", count=dim, offset=pos))
                pos += 4 * dim
                ids.append(fields[0])
                talks.append(fields[1])
                texts.append(fields[2])
        except (struct.error, UnicodeDecodeError) as exc:
            raise CorruptStoreError(f"malformed record: {exc}") from None
        if pos != len(body):
            raise CorruptStoreError("trailing bytes after last record")
        if len(set(ids)) != len(ids):
            raise CorruptStoreError("duplicate chunk_id")
        raw = np.stack(rows).astype(np.float32) if rows else np.zeros((0, dim), dtype=np.float32)
        if not np.all(np.isfinite(raw)) or (len(raw) and np.any(np.all(raw == 0, axis=1))):
            raise CorruptStoreError("zero or non-finite vector")
        store = cls(dim)
        store._snap = _snapshot(ids, talks, texts, raw)
        return store
