from __future__ import annotations

import io
import json
import logging


from rasr.corpus import ChunkingConfig, TalkRecord
from rasr.database import build_store, load_db, meta_path, save_db
from rasr.embedding import EmbedderSpec, make_embedder
from rasr.logs import JsonFormatter, configure


def test_build_store_skips_empty_chunks():
    talks = [TalkRecord("empty", "", ()), TalkRecord("t", "x" * 30, ())]
    store = build_store(talks, ChunkingConfig(20, 5), make_embedder(EmbedderSpec(dim=32)))
    assert store.chunk_ids == ("t#00000000", "t#00000015")


def test_sidecar_restores_embedder(tmp_path):
    spec = EmbedderSpec(dim=64, ngram_order=2, hash_seed=9)
    store = build_store([TalkRecord("t", "hello world " * 5, ())], ChunkingConfig(16, 4), make_embedder(spec))
    path = tmp_path / "s.db"
    save_db(store, path, spec, ChunkingConfig(16, 4))
    loaded, emb = load_db(path, EmbedderSpec())
    assert emb.spec == spec
    q = emb.embed("hello")
    assert [(h.chunk_id, h.score) for h in loaded.top_k(q, 3)] == [(h.chunk_id, h.score) for h in store.top_k(q, 3)]
    meta_path(path).unlink()
    _, emb = load_db(path)
    assert emb.spec.dim == 64


def test_json_log_lines():
    buf = io.StringIO()
    configure("debug", buf)
    logging.getLogger("rasr.test").info("thing_happened", extra={"utterance_id": "u1", "count": 3})
    rec = json.loads(buf.getvalue())
    assert rec["event"] == "thing_happened" and rec["level"] == "info"
    assert rec["utterance_id"] == "u1" and rec["count"] == 3 and "ts" in rec
    assert "talk_id" not in rec
    assert "\n" not in JsonFormatter().format(logging.makeLogRecord({"msg": "a\nb"}))
