"""Desk-scale experiments shared by scripts/ and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rasr.corpus import ChunkingConfig, build_talk
from rasr.database import build_store
from rasr.embedding import EmbedderSpec, make_embedder
from rasr.mockcorpus import make_mock_corpus
from rasr.pipeline import ExperimentResult, ExperimentSpec, MockAsr, MockContextualDecoder, PipelineDeps, run_experiment
from rasr.retrieval import QueryMode
from rasr import toy

STRATEGY_ORDER = ("oracle", "full", "prefix:100", "prefix:30", "rand")


def strategy_modes(seed: int) -> list[QueryMode | None]:
    return [QueryMode.oracle(), QueryMode.full(), QueryMode.prefix(100), QueryMode.prefix(30),
            QueryMode.random(seed), None]


def mock_strategy_experiment(seed: int, workers: int | None = 1, **corpus_kw) -> ExperimentResult:
    """Retrieval-strategy comparison on a seeded mock corpus, mock first pass and mock decoder."""
    mc = make_mock_corpus(seed, **corpus_kw)
    by_talk: dict[str, list] = {}
    for u in mc.utterances:
        by_talk.setdefault(u.talk_id, []).append(u)
    talks = [build_talk(us) for us in by_talk.values()]
    store = build_store(talks, ChunkingConfig(), make_embedder(EmbedderSpec()))
    deps = PipelineDeps(store, make_embedder(EmbedderSpec()), MockAsr(mc.hypotheses),
                        MockContextualDecoder(mc.hypotheses))
    return run_experiment(mc.dataset, ExperimentSpec.grid(strategy_modes(seed), workers=workers), deps)


def strategy_cers(result: ExperimentResult) -> dict[str, float]:
    out = {}
    for row in result.comparison.rows:
        out["rand" if row.label.startswith("rand") else row.label] = row.report.cer
    return out


def chain_holds(cers: dict[str, float]) -> bool:
    vals = [cers[k] for k in STRATEGY_ORDER]
    return all(a <= b for a, b in zip(vals, vals[1:]))


@dataclass(frozen=True)
class ToyRun:
    schedule: str
    seed: int
    final_dev_nll: float
    history: toy.TrainHistory


def toy_run(schedule: str, seed: int, epochs: tuple[int, int] = (10, 20), **data_kw) -> ToyRun:
    data = toy.make_disambiguation_data(seed, **data_kw)
    model = toy.ToyModel.init(np.random.default_rng(1000 + seed))
    _, hist = toy.train_schedule(model, data.train, data.dev, toy.named_schedule(schedule, epochs),
                                 toy.TrainConfig(seed=seed))
    return ToyRun(schedule, seed, hist.final_dev_nll, hist)
