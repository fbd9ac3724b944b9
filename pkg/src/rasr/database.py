"""Building a chunk database from talks, and the store + metadata pair on disk."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable

from rasr.corpus import ChunkingConfig, TalkRecord, split_chunks
from rasr.embedding import Embedder, EmbedderSpec, make_embedder
from rasr.store import StoreEntry, VectorStore


def build_store(talks: Iterable[TalkRecord], chunking: ChunkingConfig, embedder: Embedder) -> VectorStore:
    """Chunk, embed and index every talk; empty chunks are skipped."""
    chunks = [c for t in talks for c in split_chunks(t, chunking) if c.text]
    vectors = embedder.embed_batch([c.text for c in chunks])
    store = VectorStore(embedder.spec.dim)
    store.upsert(StoreEntry(c.chunk_id, c.talk_id, v, c.text) for c, v in zip(chunks, vectors))
    return store


def meta_path(db_path: str | os.PathLike) -> Path:
    return Path(str(db_path) + ".meta.json")


def save_db(store: VectorStore, path: str | os.PathLike, spec: EmbedderSpec, chunking: ChunkingConfig) -> None:
    store.save(path)
    meta = {"embedder": spec.to_dict(),
            "chunking": {"chunk_size": chunking.chunk_size, "overlap": chunking.overlap}}
    meta_path(path).write_text(json.dumps(meta, indent=2), encoding="utf-8")


def load_db(path: str | os.PathLike, spec: EmbedderSpec | None = None) -> tuple[VectorStore, Embedder]:
    """Load a store and the embedder it was built with.

    The embedder comes from the metadata sidecar when present, else ``spec``.
    """
    store = VectorStore.load(path)
    mp = meta_path(path)
    if mp.exists():
        spec = EmbedderSpec.from_dict(json.loads(mp.read_text(encoding="utf-8"))["embedder"])
    elif spec is None:
        spec = EmbedderSpec(dim=store.dim)
    return store, make_embedder(spec)
