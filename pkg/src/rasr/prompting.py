"""Decoder prompt assembly: instruction, retrieved context, audio placeholder, hypothesis prefix."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field

from rasr.errors import BudgetTooSmall

DEFAULT_INSTRUCTION = (
    "Task Instruction: Transcribe the Audio strictly following its content. "
    "Use context to verify technical terms and domain-specific vocabulary when uncertain. "
    "Ensure the transcription reflects exactly what is spoken, "
    "with context aiding in clarifying domain-related ambiguities."
)
AUDIO_TOKEN = "<|audio|>"


class SegmentKind(str, enum.Enum):
    INSTRUCTION = "instruction"
    CONTEXT = "context"
    AUDIO = "audio"
    HYPOTHESIS = "hypothesis"


CANONICAL_ORDER = (SegmentKind.INSTRUCTION, SegmentKind.CONTEXT, SegmentKind.AUDIO, SegmentKind.HYPOTHESIS)

# Conditioning terms of the two decoding objectives.
WITH_CONTEXT_TERMS = frozenset(CANONICAL_ORDER)
AUDIO_ONLY_TERMS = frozenset({SegmentKind.AUDIO, SegmentKind.HYPOTHESIS})


@dataclass(frozen=True)
class InstructionPrompt:
    text: str = DEFAULT_INSTRUCTION

    def __post_init__(self):
        if not self.text:
            raise ValueError("instruction text must be non-empty")


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    payload: str  # audio_ref for the audio segment

    def chars(self) -> int:
        return len(AUDIO_TOKEN) if self.kind is SegmentKind.AUDIO else len(self.payload)


@dataclass(frozen=True)
class PromptSequence:
    segments: tuple[Segment, ...]
    char_budget: int | None = field(default=None, compare=False)

    def __post_init__(self):
        kinds = [s.kind for s in self.segments]
        if kinds.count(SegmentKind.AUDIO) != 1:
            raise ValueError("prompt needs exactly one audio segment")
        if len(set(kinds)) != len(kinds) or kinds != sorted(kinds, key=CANONICAL_ORDER.index):
            raise ValueError(f"segments out of canonical order: {[k.value for k in kinds]}")

    @property
    def kinds(self) -> frozenset[SegmentKind]:
        return frozenset(s.kind for s in self.segments)

    def get(self, kind: SegmentKind) -> str | None:
        for s in self.segments:
            if s.kind is kind:
                return s.payload
        return None

    @property
    def total_chars(self) -> int:
        return sum(s.chars() for s in self.segments)


def assemble_prompt(instruction: InstructionPrompt | None, context: str | None, audio_ref: str,
                    hypothesis_prefix: str | None = "", budget: int | None = None) -> PromptSequence:
    """Build the segment sequence in canonical order.

    An empty context is omitted; ``hypothesis_prefix=None`` omits the
    hypothesis segment while ``""`` keeps it (decoding from scratch). Over
    budget, the context loses characters from its tail first, then the
    hypothesis from its head.
    """
    if audio_ref is None:
        raise ValueError("audio_ref is required")
    instr = instruction.text if instruction is not None else None
    ctx = context or ""
    hyp = hypothesis_prefix
    if budget is not None:
        fixed = len(AUDIO_TOKEN) + (len(instr) if instr else 0)
        if fixed > budget:
            raise BudgetTooSmall(f"instruction and audio need {fixed} chars, budget is {budget}")
        excess = fixed + len(ctx) + len(hyp or "") - budget
        if excess > 0:
            cut = min(excess, len(ctx))
            ctx = ctx[:len(ctx) - cut]
            excess -= cut
        if excess > 0 and hyp:
            hyp = hyp[excess:]
    segments = []
    if instr is not None:
        segments.append(Segment(SegmentKind.INSTRUCTION, instr))
    if ctx:
        segments.append(Segment(SegmentKind.CONTEXT, ctx))
    segments.append(Segment(SegmentKind.AUDIO, audio_ref))
    if hyp is not None:
        segments.append(Segment(SegmentKind.HYPOTHESIS, hyp))
    return PromptSequence(tuple(segments), char_budget=budget)


def render_text(p: PromptSequence) -> str:
    """Render with length-prefixed section headers; ``parse_text`` inverts it."""
    out = []
    for s in p.segments:
        if s.kind is SegmentKind.AUDIO:
            out.append(f"[[audio {json.dumps(s.payload, ensure_ascii=False)}]]\n{AUDIO_TOKEN}\n")
        else:
            out.append(f"[[{s.kind.value} {len(s.payload)}]]\n{s.payload}\n")
    return "".join(out)


_HEADER = re.compile(r"\[\[(instruction|context|hypothesis) (\d+)\]\]\n|\[\[audio (\"(?:[^\"\\\n]|\\.)*\")\]\]\n")


def parse_text(text: str) -> PromptSequence:
    segments = []
    pos = 0
    while pos < len(text):
        m = _HEADER.match(text, pos)
        if m is None:
            raise ValueError(f"expected a section header at offset {pos}")
        pos = m.end()
        if m.group(3) is not None:
            payload = json.loads(m.group(3))
            body = AUDIO_TOKEN
            kind = SegmentKind.AUDIO
        else:
            kind = SegmentKind(m.group(1))
            n = int(m.group(2))
            body = payload = text[pos:pos + n]
            if len(body) != n:
                raise ValueError("section body shorter than its declared length")
        if text[pos:pos + len(body) + 1] != body + "\n":
            raise ValueError(f"malformed {kind.value} section at offset {pos}")
        pos += len(body) + 1
        segments.append(Segment(kind, payload))
    return PromptSequence(tuple(segments))
