"""Two-pass transcription: first pass, retrieval, prompt assembly, contextual decode."""

from __future__ import annotations

import functools
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from rasr._http import post_json
from rasr.embedding import Embedder
from rasr.errors import BackendError, RasrError, RemoteProtocolError
from rasr.evaluation import ComparisonRow, CerReport, StrategyComparison, cer_report, pool_cer
from rasr.prompting import InstructionPrompt, PromptSequence, SegmentKind, assemble_prompt
from rasr.retrieval import QueryMode, RetrievalRequest, RetrievalResult, build_query, format_context, retrieve
from rasr.store import VectorStore

log = logging.getLogger(__name__)

FIRST_PASS_LABEL = "first-pass"


class AsrBackend(Protocol):
    def first_pass(self, audio_ref: str) -> str: ...


class ContextualDecoder(Protocol):
    def decode(self, prompt: PromptSequence) -> str: ...


@dataclass(frozen=True)
class EvalUtterance:
    utterance_id: str
    talk_id: str
    audio_ref: str
    reference: str = ""

    def __post_init__(self):
        if not self.audio_ref:
            raise ValueError("audio_ref is required")


def read_dataset(lines) -> list[EvalUtterance]:
    """Parse JSONL records with ``utterance_id, talk_id, audio_ref, reference``."""
    out = []
    for lineno, raw in enumerate(lines, start=1):
        raw = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not raw.strip():
            continue
        obj = json.loads(raw)
        try:
            out.append(EvalUtterance(obj["utterance_id"], obj["talk_id"], obj["audio_ref"], obj.get("reference", "")))
        except KeyError as exc:
            raise ValueError(f"line {lineno}: missing field {exc.args[0]!r}") from None
    return out


class MockAsr:
    """First pass that looks up a canned hypothesis per audio_ref."""

    def __init__(self, hypotheses: dict[str, str]):
        self.hypotheses = dict(hypotheses)

    def first_pass(self, audio_ref: str) -> str:
        try:
            return self.hypotheses[audio_ref]
        except KeyError:
            raise BackendError(f"mock ASR has no audio {audio_ref!r}") from None


_DOC_LABEL = re.compile(r"\[doc \d+\] ")


class _NearIndex:
    """Finds the earliest word within edit distance 1 of a query via deletion neighbourhoods."""

    def __init__(self, words: list[str]):
        self.rank: dict[str, int] = {}
        self.by_sub: dict[tuple[int, str], list[str]] = {}   # same length, one substitution
        self.by_word: dict[str, list[str]] = {}              # query has one extra char
        self.by_del: dict[str, list[str]] = {}               # query is missing one char
        for w in words:
            if w in self.rank:
                continue
            self.rank[w] = len(self.rank)
            self.by_word.setdefault(w, []).append(w)
            for i in range(len(w)):
                cut = w[:i] + w[i + 1:]
                self.by_sub.setdefault((i, cut), []).append(w)
                self.by_del.setdefault(cut, []).append(w)

    def nearest(self, tok: str) -> str | None:
        cands = list(self.by_del.get(tok, ()))
        for i in range(len(tok)):
            cut = tok[:i] + tok[i + 1:]
            cands.extend(self.by_sub.get((i, cut), ()))
            cands.extend(self.by_word.get(cut, ()))
        return min(cands, key=self.rank.__getitem__) if cands else None


class MockContextualDecoder:
    """Deterministic stand-in for a context-aware decoder.

    It "hears" the same acoustic evidence as the mock first pass (a lookup by
    audio_ref) and, when the prompt carries context, replaces every token that
    is absent from the context but within edit distance 1 of a context token;
    the first such context token in reading order wins.
    """

    def __init__(self, acoustics: dict[str, str]):
        self.acoustics = dict(acoustics)

    def decode(self, prompt: PromptSequence) -> str:
        audio_ref = prompt.get(SegmentKind.AUDIO)
        try:
            heard = self.acoustics[audio_ref]
        except KeyError:
            raise BackendError(f"mock decoder has no audio {audio_ref!r}") from None
        context = prompt.get(SegmentKind.CONTEXT)
        if not context:
            return heard
        index = _NearIndex(_DOC_LABEL.sub(" ", context).split())
        out = []
        for tok in heard.split():
            if tok not in index.rank:
                tok = index.nearest(tok) or tok
            out.append(tok)
        return " ".join(out)


class HttpAsr:
    """``POST {url}/first_pass {"audio_ref"}`` -> ``{"text"}``."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.timeout = timeout

    def first_pass(self, audio_ref: str) -> str:
        resp = post_json(f"{self.url}/first_pass", {"audio_ref": audio_ref}, timeout=self.timeout)
        if not isinstance(resp, dict) or not isinstance(resp.get("text"), str):
            raise RemoteProtocolError(f"{self.url}/first_pass: missing 'text'")
        return resp["text"]


class HttpDecoder:
    """``POST {url}/decode {"segments": [{"kind", "payload"}]}`` -> ``{"text"}``."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.timeout = timeout

    def decode(self, prompt: PromptSequence) -> str:
        body = {"segments": [{"kind": s.kind.value, "payload": s.payload} for s in prompt.segments]}
        resp = post_json(f"{self.url}/decode", body, timeout=self.timeout)
        if not isinstance(resp, dict) or not isinstance(resp.get("text"), str):
            raise RemoteProtocolError(f"{self.url}/decode: missing 'text'")
        return resp["text"]


@dataclass
class PipelineDeps:
    store: VectorStore
    embedder: Embedder
    asr: AsrBackend
    decoder: ContextualDecoder
    k: int = 2
    instruction: InstructionPrompt = field(default_factory=InstructionPrompt)
    char_budget: int | None = None


@dataclass(frozen=True)
class TwoPassResult:
    first_pass: str
    final: str
    retrieval: RetrievalResult | None
    prompt: PromptSequence

    def to_dict(self) -> dict:
        return {"first_pass": self.first_pass, "final": self.final,
                "retrieval": self.retrieval.to_dict() if self.retrieval is not None else None}


def transcribe_two_pass(u: EvalUtterance, mode: QueryMode | None, with_instruction: bool,
                        deps: PipelineDeps) -> TwoPassResult:
    """Run both passes for one utterance.

    ``mode=None`` disables retrieval and the decoder gets the audio-only
    prompt (no instruction, no context). Retrieval failures degrade to an
    empty context; backend failures raise ``BackendError``.
    """
    try:
        hypothesis = deps.asr.first_pass(u.audio_ref)
    except RasrError as exc:
        raise BackendError(f"first pass failed: {exc}", u.utterance_id) from exc

    retrieval = None
    context = ""
    if mode is not None:
        try:
            query = build_query(hypothesis, u.reference or None, mode)
            req = RetrievalRequest(query, deps.k, frozenset({u.talk_id}))
            retrieval = retrieve(req, mode, deps.store, deps.embedder)
            context = format_context(retrieval)
        except RasrError as exc:
            log.warning("retrieval_failed", extra={"utterance_id": u.utterance_id, "detail": str(exc)})
    instruction = deps.instruction if (with_instruction and mode is not None) else None
    prompt = assemble_prompt(instruction, context, u.audio_ref, "", deps.char_budget)
    try:
        final = deps.decoder.decode(prompt)
    except RasrError as exc:
        raise BackendError(f"decode failed: {exc}", u.utterance_id) from exc
    return TwoPassResult(hypothesis, final, retrieval, prompt)


@dataclass(frozen=True)
class Cell:
    mode: QueryMode | None
    with_instruction: bool = True

    @property
    def label(self) -> str:
        return self.mode.label if self.mode is not None else "no-context"


@dataclass(frozen=True)
class ExperimentSpec:
    cells: tuple[Cell, ...]
    k: int = 2
    workers: int | None = None

    def __post_init__(self):
        if not self.cells:
            raise ValueError("experiment needs at least one cell")

    @classmethod
    def grid(cls, modes: Sequence[QueryMode | None], instruction: Sequence[bool] = (True,), **kw) -> "ExperimentSpec":
        return cls(tuple(Cell(m, i) for i in instruction for m in modes), **kw)


@dataclass
class ExperimentResult:
    comparison: StrategyComparison
    records: list[dict]

    def to_dict(self) -> dict:
        return {"report": self.comparison.to_dict(), "utterances": self.records}

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")


def run_experiment(dataset: Sequence[EvalUtterance], spec: ExperimentSpec, deps: PipelineDeps) -> ExperimentResult:
    """Pooled CER per cell; the first-pass hypotheses form the baseline.

    Utterances run on a thread pool; results are gathered in dataset order so
    reports are reproducible. A failed utterance is recorded with its error and
    left out of that cell's pooled CER.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if any(not u.reference for u in dataset):
        raise ValueError("every evaluation utterance needs a reference")
    score = functools.lru_cache(maxsize=None)(cer_report)
    deps = PipelineDeps(deps.store, deps.embedder, deps.asr, deps.decoder, spec.k, deps.instruction, deps.char_budget)

    def one(job):
        cell, u = job
        rec = {"utterance_id": u.utterance_id, "talk_id": u.talk_id, "cell": cell.label,
               "instruction": cell.with_instruction, "reference": u.reference}
        try:
            res = transcribe_two_pass(u, cell.mode, cell.with_instruction, deps)
        except RasrError as exc:
            log.error("utterance_failed", extra={"utterance_id": u.utterance_id, "detail": str(exc)})
            rec["error"] = str(exc)
            return rec
        rec.update(res.to_dict())
        rec["final_cer"] = score(u.reference, res.final).to_dict()
        rec["first_pass_cer"] = score(u.reference, res.first_pass).to_dict()
        return rec

    jobs = [(cell, u) for cell in spec.cells for u in dataset]
    with ThreadPoolExecutor(max_workers=spec.workers or os.cpu_count() or 1) as pool:
        records = list(pool.map(one, jobs))

    rows = []
    first_pass: dict[str, CerReport] = {}
    for i, cell in enumerate(spec.cells):
        cell_recs = records[i * len(dataset):(i + 1) * len(dataset)]
        ok = [r for r in cell_recs if "error" not in r]
        for r in ok:
            first_pass.setdefault(r["utterance_id"], CerReport.from_dict(r["first_pass_cer"]))
        pooled = pool_cer([CerReport.from_dict(r["final_cer"]) for r in ok]) if ok else CerReport(0, 0, 0, 0)
        rows.append(ComparisonRow(cell.label, cell.with_instruction, pooled, failed=len(cell_recs) - len(ok)))
    baseline = pool_cer(list(first_pass.values())) if first_pass else CerReport(0, 0, 0, 0)
    return ExperimentResult(StrategyComparison(tuple(rows), FIRST_PASS_LABEL, baseline), records)
