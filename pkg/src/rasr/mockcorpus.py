"""Synthetic multi-domain talks with injected terms and corrupted first-pass hypotheses.

Every word of the vocabulary is at edit distance >= 3 from every other word,
and a corruption changes exactly one character of a token. A corrupted token
is therefore within distance 1 of its original only, and the mock decoder
restores it exactly when the original appears in the retrieved context.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from rasr.corpus import UtteranceRecord
from rasr.evaluation import char_edit_distance
from rasr.pipeline import EvalUtterance


@dataclass(frozen=True)
class MockCorpus:
    utterances: list[UtteranceRecord]
    dataset: list[EvalUtterance]
    hypotheses: dict[str, str]            # audio_ref -> corrupted first pass
    domain_terms: dict[str, tuple[str, ...]]  # talk_id -> injected terms


def _word(rng: np.random.Generator, lo: int, hi: int) -> str:
    letters = string.ascii_lowercase
    return "".join(letters[i] for i in rng.integers(0, 26, size=int(rng.integers(lo, hi + 1))))


def make_vocabulary(rng: np.random.Generator, size: int, min_distance: int = 3,
                    lo: int = 5, hi: int = 8) -> list[str]:
    words: list[str] = []
    while len(words) < size:
        w = _word(rng, lo, hi)
        if all(sum(char_edit_distance(w, v)) >= min_distance for v in words):
            words.append(w)
    return words


def corrupt_token(tok: str, rng: np.random.Generator) -> str:
    i = int(rng.integers(len(tok)))
    choices = [c for c in string.ascii_lowercase if c != tok[i]]
    return tok[:i] + choices[int(rng.integers(len(choices)))] + tok[i + 1:]


def corrupt_text(text: str, rate: float, rng: np.random.Generator) -> str:
    """Substitute one character in a ``rate`` fraction of the tokens (rounded, at least one)."""
    toks = text.split()
    n = max(1, round(rate * len(toks)))
    for i in rng.choice(len(toks), size=min(n, len(toks)), replace=False):
        toks[i] = corrupt_token(toks[i], rng)
    return " ".join(toks)


def make_mock_corpus(seed: int, *, n_talks: int = 24, n_domains: int = 6, terms_per_domain: int = 8,
                     common_words: int = 60, utts_per_talk: int = 6, tokens_per_utt: int = 28,
                     term_density: float = 0.3, corruption: float = 0.10) -> MockCorpus:
    rng = np.random.default_rng(seed)
    vocab = make_vocabulary(rng, common_words + n_domains * terms_per_domain)
    common = vocab[:common_words]
    pools = [vocab[common_words + d * terms_per_domain: common_words + (d + 1) * terms_per_domain]
             for d in range(n_domains)]

    utterances, dataset, hypotheses, terms = [], [], {}, {}
    for t in range(n_talks):
        talk_id = f"talk{t:03d}"
        talk_terms = pools[t % n_domains]
        terms[talk_id] = tuple(talk_terms)
        for u in range(utts_per_talk):
            toks = [talk_terms[int(rng.integers(len(talk_terms)))] if rng.random() < term_density
                    else common[int(rng.integers(len(common)))] for _ in range(tokens_per_utt)]
            text = " ".join(toks)
            utt_id = f"{talk_id}-u{u:02d}"
            audio_ref = f"audio/{utt_id}.wav"
            utterances.append(UtteranceRecord(talk_id, utt_id, u, text, duration_s=12.0, audio_ref=audio_ref))
            dataset.append(EvalUtterance(utt_id, talk_id, audio_ref, text))
            hypotheses[audio_ref] = corrupt_text(text, corruption, rng)
    return MockCorpus(utterances, dataset, hypotheses, terms)
