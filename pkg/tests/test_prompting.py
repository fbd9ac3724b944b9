from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from rasr.errors import BudgetTooSmall
from rasr.prompting import (AUDIO_ONLY_TERMS, AUDIO_TOKEN, DEFAULT_INSTRUCTION, WITH_CONTEXT_TERMS, InstructionPrompt,
                            PromptSequence, Segment, SegmentKind, assemble_prompt, parse_text, render_text)

K = SegmentKind


def test_default_instruction_matches_golden(fixtures_dir):
    assert DEFAULT_INSTRUCTION == (fixtures_dir / "prompts" / "default_instruction.txt").read_text(encoding="utf-8")
    assert InstructionPrompt().text == DEFAULT_INSTRUCTION


def test_golden_renders(fixtures_dir):
    full = assemble_prompt(InstructionPrompt(), "[doc 1] beam search decoding with lattices\n\n"
                           "[doc 2] the language model rescoring improves accuracy", "audio/talk_a-0.wav", "")
    assert render_text(full) == (fixtures_dir / "prompts" / "full_prompt.txt").read_text(encoding="utf-8")
    bare = assemble_prompt(None, None, "audio/talk_a-0.wav", "")
    assert render_text(bare) == (fixtures_dir / "prompts" / "audio_only_prompt.txt").read_text(encoding="utf-8")


def test_term_sets():
    assert assemble_prompt(InstructionPrompt(), "ctx", "a.wav", "").kinds == WITH_CONTEXT_TERMS
    assert assemble_prompt(None, "", "a.wav", "").kinds == AUDIO_ONLY_TERMS
    assert assemble_prompt(None, "", "a.wav", None).kinds == {K.AUDIO}


def test_sequence_validation():
    with pytest.raises(ValueError):
        PromptSequence((Segment(K.INSTRUCTION, "i"),))
    with pytest.raises(ValueError):
        PromptSequence((Segment(K.AUDIO, "a"), Segment(K.CONTEXT, "c")))
    with pytest.raises(ValueError):
        PromptSequence((Segment(K.AUDIO, "a"), Segment(K.AUDIO, "b")))
    with pytest.raises(ValueError):
        InstructionPrompt("")


def test_budget_truncates_context_tail_then_hypothesis_head():
    instr = InstructionPrompt("abc")
    p = assemble_prompt(instr, "0123456789", "a", "xyz", budget=3 + len(AUDIO_TOKEN) + 3 + 4)
    assert p.get(K.CONTEXT) == "0123" and p.get(K.HYPOTHESIS) == "xyz"
    p = assemble_prompt(instr, "0123456789", "a", "xyz", budget=3 + len(AUDIO_TOKEN) + 1)
    assert p.get(K.CONTEXT) is None and p.get(K.HYPOTHESIS) == "z"
    assert p.total_chars <= p.char_budget
    with pytest.raises(BudgetTooSmall):
        assemble_prompt(instr, "", "a", "", budget=3 + len(AUDIO_TOKEN) - 1)


@settings(max_examples=200, deadline=None)
@given(ctx=st.text(max_size=300), hyp=st.text(max_size=80), budget=st.integers(len(DEFAULT_INSTRUCTION) + 9, 800))
def test_budget_respected(ctx, hyp, budget):
    p = assemble_prompt(InstructionPrompt(), ctx, "a.wav", hyp, budget)
    assert p.total_chars <= budget
    assert ctx.startswith(p.get(K.CONTEXT) or "")
    assert hyp.endswith(p.get(K.HYPOTHESIS))


_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=80)


@settings(max_examples=200, deadline=None)
@given(instr=st.one_of(st.none(), _text.filter(bool)), ctx=_text, ref=_text, hyp=st.one_of(st.none(), _text))
def test_render_parse_identity(instr, ctx, ref, hyp):
    p = assemble_prompt(InstructionPrompt(instr) if instr else None, ctx, ref, hyp)
    text = render_text(p)
    assert parse_text(text) == p
    assert render_text(parse_text(text)) == text


def test_parse_rejects_garbage():
    for bad in ("hello", "[[context 5]]\nabc\n", "[[audio \"a\"]]\nnot-audio\n", "[[context 1]]\nab\n"):
        with pytest.raises(ValueError):
            parse_text(bad)
