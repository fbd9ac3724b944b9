"""Application configuration: defaults < config file < ``RASR_*`` environment < command-line flags."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from rasr.corpus import ChunkingConfig
from rasr.embedding import EmbedderSpec, Provider

ENV_PREFIX = "RASR_"

# flat key -> type; nested file sections are flattened onto these names
_KEYS: dict[str, type] = {
    "db_path": str,
    "k": int,
    "chunk_size": int,
    "overlap": int,
    "embedder_provider": str,
    "embedder_dim": int,
    "embedder_endpoint": str,
    "ngram_order": int,
    "hash_seed": int,
    "asr": str,
    "decoder": str,
    "dataset": str,
    "host": str,
    "port": int,
    "log_level": str,
    "workers": int,
}
_SECTIONS = {
    "embedder": {"provider": "embedder_provider", "dim": "embedder_dim", "endpoint": "embedder_endpoint",
                 "remote_endpoint": "embedder_endpoint", "ngram_order": "ngram_order", "hash_seed": "hash_seed"},
    "chunking": {"chunk_size": "chunk_size", "overlap": "overlap"},
    "server": {"host": "host", "port": "port"},
    "backends": {"asr": "asr", "decoder": "decoder", "dataset": "dataset"},
}


@dataclass(frozen=True)
class AppConfig:
    db_path: str = "rasr.db"
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    k: int = 2
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    asr: str = "mock"
    decoder: str = "mock"
    dataset: str | None = None
    host: str = "127.0.0.1"
    port: int = 8080
    log_level: str = "info"
    workers: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 <= self.port <= 65535:
            raise ValueError("port out of range")
        for name in ("asr", "decoder"):
            spec = getattr(self, name)
            if spec != "mock" and not spec.startswith("http:"):
                raise ValueError(f"{name} must be 'mock' or 'http:<url>', got {spec!r}")


def read_config_file(path: str | os.PathLike) -> dict[str, Any]:
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    flat: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS and isinstance(value, dict):
            for sub, sub_value in value.items():
                if sub not in _SECTIONS[key]:
                    raise ValueError(f"{path}: unknown key {key}.{sub}")
                flat[_SECTIONS[key][sub]] = sub_value
        elif key in _KEYS:
            flat[key] = value
        else:
            raise ValueError(f"{path}: unknown key {key!r}")
    return flat


def read_env(env: Mapping[str, str]) -> dict[str, Any]:
    out = {}
    for key, typ in _KEYS.items():
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            try:
                out[key] = typ(raw)
            except ValueError:
                raise ValueError(f"{ENV_PREFIX}{key.upper()}={raw!r} is not a valid {typ.__name__}") from None
    return out


def build_config(file_path: str | os.PathLike | None = None, env: Mapping[str, str] | None = None,
                 flags: Mapping[str, Any] | None = None) -> AppConfig:
    merged: dict[str, Any] = {}
    if file_path is not None:
        merged.update(read_config_file(file_path))
    merged.update(read_env(os.environ if env is None else env))
    merged.update({k: v for k, v in (flags or {}).items() if v is not None and k in _KEYS})

    provider = Provider(merged.get("embedder_provider", Provider.DETERMINISTIC_NGRAM.value))
    default_dim = 1024 if provider is Provider.REMOTE else 256
    embedder = EmbedderSpec(provider=provider, dim=merged.get("embedder_dim", default_dim),
                            ngram_order=merged.get("ngram_order", 3),
                            remote_endpoint=merged.get("embedder_endpoint", ""),
                            hash_seed=merged.get("hash_seed", 0))
    chunking = ChunkingConfig(merged.get("chunk_size", 512), merged.get("overlap", 50))
    scalars = {k: merged[k] for k in ("db_path", "k", "asr", "decoder", "dataset", "host", "port",
                                      "log_level", "workers") if k in merged}
    return AppConfig(embedder=embedder, chunking=chunking, **scalars)
