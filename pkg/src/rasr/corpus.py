"""Transcript ingestion: normalization, per-talk documents and overlapping chunks."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from rasr.errors import DuplicateUtteranceError, EmptyInputError, MixedTalkError, ParseError

SEPARATOR = " "
MAX_CLIP_SECONDS = 30.0


@dataclass(frozen=True)
class UtteranceRecord:
    talk_id: str
    utterance_id: str
    start_index: int
    text: str
    duration_s: float | None = None
    audio_ref: str | None = None

    def __post_init__(self):
        if self.duration_s is not None and not (0 <= self.duration_s <= MAX_CLIP_SECONDS):
            raise ValueError(
                f"utterance {self.utterance_id}: duration {self.duration_s}s outside [0, {MAX_CLIP_SECONDS}]"
            )


@dataclass(frozen=True)
class TalkRecord:
    talk_id: str
    text: str
    # (utterance_id, (start, end)) with half-open character spans into text
    utterance_spans: tuple[tuple[str, tuple[int, int]], ...] = ()


@dataclass(frozen=True)
class ChunkingConfig:
    chunk_size: int = 512
    overlap: int = 50

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError("overlap must satisfy 0 <= overlap < chunk_size")

    @property
    def stride(self) -> int:
        return self.chunk_size - self.overlap


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    talk_id: str
    span: tuple[int, int]
    text: str = field(repr=False)


def normalize_text(raw: str) -> str:
    """NFKC-normalize and collapse every whitespace run to a single space."""
    return SEPARATOR.join(unicodedata.normalize("NFKC", raw).split())


def build_talk(utterances: Sequence[UtteranceRecord]) -> TalkRecord:
    """Concatenate one talk's utterances, in ``start_index`` order, into a document.

    Empty utterances (after normalization) keep a zero-width span and do not
    contribute a separator.
    """
    if not utterances:
        raise EmptyInputError("build_talk needs at least one utterance")
    talk_id = utterances[0].talk_id
    seen_ids: set[str] = set()
    seen_idx: set[int] = set()
    for u in utterances:
        if u.talk_id != talk_id:
            raise MixedTalkError(f"talk ids differ: {talk_id!r} vs {u.talk_id!r}")
        if u.utterance_id in seen_ids:
            raise DuplicateUtteranceError(f"duplicate utterance_id {u.utterance_id!r} in talk {talk_id!r}")
        if u.start_index in seen_idx:
            raise DuplicateUtteranceError(f"duplicate start_index {u.start_index} in talk {talk_id!r}")
        seen_ids.add(u.utterance_id)
        seen_idx.add(u.start_index)

    pieces: list[str] = []
    spans: list[tuple[str, tuple[int, int]]] = []
    pos = 0
    for u in sorted(utterances, key=lambda r: r.start_index):
        text = normalize_text(u.text)
        if text and pieces:
            pieces.append(SEPARATOR)
            pos += len(SEPARATOR)
        spans.append((u.utterance_id, (pos, pos + len(text))))
        if text:
            pieces.append(text)
            pos += len(text)
    return TalkRecord(talk_id=talk_id, text="".join(pieces), utterance_spans=tuple(spans))


def chunk_id_for(talk_id: str, start: int) -> str:
    # zero padding keeps lexicographic chunk_id order equal to offset order within a talk
    return f"{talk_id}#{start:08d}"


def split_chunks(talk: TalkRecord, cfg: ChunkingConfig = ChunkingConfig()) -> list[Chunk]:
    """Fixed-stride sliding window over ``talk.text``; the short tail chunk is kept.

    Offsets count Unicode code points. A text no longer than ``chunk_size``
    (including the empty text) yields exactly one chunk.
    """
    text = talk.text
    n = len(text)
    chunks = []
    start = 0
    while True:
        end = min(start + cfg.chunk_size, n)
        chunks.append(Chunk(chunk_id_for(talk.talk_id, start), talk.talk_id, (start, end), text[start:end]))
        if end >= n:
            return chunks
        start += cfg.stride


def _record_from_json(obj: dict, line: int) -> UtteranceRecord:
    if not isinstance(obj, dict):
        raise ParseError("record is not a JSON object", line)
    try:
        talk_id = obj["talk_id"]
        utterance_id = obj["utterance_id"]
        index = obj["index"]
        text = obj["text"]
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", line) from None
    if not isinstance(talk_id, str) or not isinstance(utterance_id, str) or not isinstance(text, str):
        raise ParseError("talk_id, utterance_id and text must be strings", line)
    if not isinstance(index, int) or isinstance(index, bool):
        raise ParseError("index must be an integer", line)
    duration = obj.get("duration_s")
    if duration is not None and (not isinstance(duration, (int, float)) or isinstance(duration, bool)):
        raise ParseError("duration_s must be a number", line)
    try:
        return UtteranceRecord(talk_id, utterance_id, index, text, duration, obj.get("audio_ref"))
    except ValueError as exc:
        raise ParseError(str(exc), line) from None


def read_utterances(source: IO[bytes] | Iterable[bytes]) -> list[UtteranceRecord]:
    records = []
    for lineno, raw in enumerate(source, start=1):
        try:
            line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        except UnicodeDecodeError:
            raise ParseError("invalid UTF-8", lineno) from None
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        records.append(_record_from_json(obj, lineno))
    return records


def load_corpus(source: IO[bytes] | Iterable[bytes]) -> list[TalkRecord]:
    """Parse line-delimited utterance records into talks, in first-appearance order."""
    by_talk: dict[str, list[UtteranceRecord]] = {}
    for rec in read_utterances(source):
        by_talk.setdefault(rec.talk_id, []).append(rec)
    return [build_talk(utts) for utts in by_talk.values()]


def dump_corpus(talks: Iterable[TalkRecord], sink: IO[bytes]) -> None:
    """Write talks back out as utterance records that ``load_corpus`` rebuilds exactly."""
    for talk in talks:
        for index, (utterance_id, (start, end)) in enumerate(talk.utterance_spans):
            obj = {"talk_id": talk.talk_id, "utterance_id": utterance_id, "index": index,
                   "text": talk.text[start:end]}
            sink.write(json.dumps(obj, ensure_ascii=False).encode("utf-8") + b"\n")
