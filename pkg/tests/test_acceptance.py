"""Acceptance criteria; each test records one PASS/FAIL line shown in the terminal summary."""

from __future__ import annotations

import itertools
import json
import re
import threading
import time
import urllib.request

import numpy as np
import pytest

from oracles import batched_distance, brute_ranking, directional_fd_check, edit_distance_rec, stored_unit
from rasr import toy
from rasr.cli import main
from rasr.corpus import ChunkingConfig, TalkRecord, split_chunks
from rasr.database import load_db
from rasr.evaluation import CerReport, ComparisonRow, StrategyComparison, cer, char_edit_distance, render_table
from rasr.experiments import chain_holds, mock_strategy_experiment, strategy_cers, toy_run
from rasr.prompting import (AUDIO_ONLY_TERMS, DEFAULT_INSTRUCTION, InstructionPrompt, SegmentKind, assemble_prompt,
                            parse_text, render_text)
from rasr.service import RasrServer
from rasr.store import QueryFilter, StoreEntry, VectorStore

pytestmark = pytest.mark.acceptance


def _random_store(rng, n, dim):
    vecs = rng.normal(size=(n, dim))
    dup = rng.random(n) < 0.1  # exact duplicates and power-of-two rescalings create score ties
    for i in np.flatnonzero(dup):
        vecs[i] = vecs[int(rng.integers(n))] * 2.0 ** int(rng.integers(-3, 4))
    talks = [f"t{int(t)}" for t in rng.integers(0, max(1, n // 20), size=n)]
    ids = [f"c{int(x):06d}" for x in rng.permutation(10 ** 6)[:n]]
    store = VectorStore(dim)
    store.upsert(StoreEntry(c, t, v) for c, t, v in zip(ids, talks, vecs))
    return store, {c: (t, stored_unit(v)) for c, t, v in zip(ids, talks, vecs)}, sorted(set(talks))


def test_retrieval_oracle_equivalence(acceptance_report):
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    cases = mismatches = 0
    for s in range(200):
        dim = (8, 256, 1024)[s % 3]
        store, rows, talks = _random_store(rng, int(rng.integers(1, 1001)), dim)
        for _ in range(2):
            q = rng.normal(size=dim)
            if rng.random() < 0.2:  # query equal to a stored row
                q = rows[store.chunk_ids[int(rng.integers(len(store)))]][1]
            excl = frozenset(t for t in talks if rng.random() < 0.3)
            ranking = brute_ranking(rows, q, excl)
            for k in (1, 2, 5):
                got = [(h.chunk_id, h.score) for h in store.top_k(q, k, QueryFilter(excl))]
                want = ranking[:k]
                cases += 1
                same = [c for c, _ in got] == [c for c, _ in want] and all(
                    abs(a - b) <= 1e-12 for (_, a), (_, b) in zip(got, want))
                mismatches += not same
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30
    acceptance_report(1, "top-k equals brute-force scan", ok, f"{cases - mismatches}/{cases} cases, {elapsed:.1f}s < 30s")
    assert ok


def test_chunking_invariants(acceptance_report):
    rng = np.random.default_rng(7)
    failures = 0
    for _ in range(1000):
        n = int(rng.integers(0, 5000))
        size = int(rng.integers(1, 700))
        overlap = int(rng.integers(0, size))
        text = "".join(chr(0x3041 + int(c)) for c in rng.integers(0, 80, size=n))
        chunks = split_chunks(TalkRecord("t", text, ()), ChunkingConfig(size, overlap))
        covered = np.zeros(n, dtype=bool)
        good = chunks[0].span[0] == 0 and chunks[-1].span[1] == n
        for c in chunks:
            covered[c.span[0]:c.span[1]] = True
            good &= c.text == text[c.span[0]:c.span[1]] and 0 <= c.span[1] - c.span[0] <= size
        for a, b in zip(chunks, chunks[1:]):
            good &= b.span[0] - a.span[0] == size - overlap and a.span[1] - b.span[0] == overlap
            good &= a.span[1] - a.span[0] == size
        good &= bool(covered.all())
        failures += not good
    default = [c.span for c in split_chunks(TalkRecord("t", "a" * 1000, ()))]
    ok = failures == 0 and default == [(0, 512), (462, 974), (924, 1000)]
    acceptance_report(2, "chunking invariants", ok, f"{1000 - failures}/1000 triples, default spans {default}")
    assert ok


def _strings(alphabet: str, n: int) -> list[str]:
    return ["".join(p) for p in itertools.product(alphabet, repeat=n)]


def test_cer_kernel(acceptance_report):
    alphabet = "abc"
    # the batched oracle is itself checked against plain recursion first
    rec_ok = True
    for n, m in itertools.product(range(5), repeat=2):
        a, b = _strings(alphabet, n), _strings(alphabet, m)
        pa = np.array([[ord(c) for c in s] for s in a for _ in b], dtype=np.int64).reshape(len(a) * len(b), n)
        pb = np.array([[ord(c) for c in s] for _ in a for s in b], dtype=np.int64).reshape(len(a) * len(b), m)
        want = [edit_distance_rec(x, y) for x in a for y in b]
        rec_ok &= batched_distance(pa, pb).tolist() == want

    start = time.perf_counter()
    pairs = bad = 0
    for n in range(8):
        refs = _strings(alphabet, n)
        ref_codes = np.array([[ord(c) for c in s] for s in refs], dtype=np.int64).reshape(len(refs), n)
        for m in range(8):
            hyps = _strings(alphabet, m)
            hyp_codes = np.array([[ord(c) for c in s] for s in hyps], dtype=np.int64).reshape(len(hyps), m)
            want = batched_distance(np.repeat(ref_codes, len(hyps), axis=0), np.tile(hyp_codes, (len(refs), 1)))
            sdi = np.array([char_edit_distance(r, h) for r, h in itertools.product(refs, hyps)],
                           dtype=np.int64).reshape(-1, 3)
            bad += int(np.count_nonzero(sdi.sum(axis=1) != want))
            bad += int(np.count_nonzero(n - sdi[:, 1] + sdi[:, 2] != m))  # lengths must reconcile
            pairs += len(sdi)
    elapsed = time.perf_counter() - start

    rng = np.random.default_rng(3)
    refs = ["".join(rng.choice(list("abcdeあい"), int(rng.integers(1, 60)))) for _ in range(200)]
    endpoints_ok = all(cer(r, "") == 1.0 and cer(r, r) == 0.0 for r in refs)

    cmp = StrategyComparison((ComparisonRow("ours", True, CerReport(37, 0, 0, 1000)),), "baseline",
                             baseline=CerReport(46, 0, 0, 1000))
    text, _ = render_table(cmp)
    shown = float(re.search(r"ours\s.*\s([+-]\d+\.\d)$", text, re.M).group(1))
    rel_ok = abs(shown - 19.6) <= 0.2

    ok = rec_ok and bad == 0 and endpoints_ok and rel_ok
    acceptance_report(3, "CER kernel", ok, f"{pairs} exhaustive pairs, {bad} mismatches, {elapsed:.0f}s; "
                      f"endpoints {'ok' if endpoints_ok else 'bad'}; 4.6->3.7 shows {shown:+.1f}%")
    assert ok


def test_prompt_fidelity(acceptance_report, fixtures_dir):
    golden = (fixtures_dir / "prompts" / "default_instruction.txt").read_bytes()
    full = assemble_prompt(InstructionPrompt(), "[doc 1] some context", "a.wav", "")
    instr_ok = DEFAULT_INSTRUCTION.encode("utf-8") == golden and \
        full.get(SegmentKind.INSTRUCTION).encode("utf-8") == golden and golden in render_text(full).encode("utf-8")
    ctx_ok = full.kinds == {SegmentKind.INSTRUCTION, SegmentKind.CONTEXT, SegmentKind.AUDIO, SegmentKind.HYPOTHESIS}
    bare_ok = assemble_prompt(None, "", "a.wav", "").kinds == AUDIO_ONLY_TERMS == {SegmentKind.AUDIO,
                                                                                   SegmentKind.HYPOTHESIS}
    rng = np.random.default_rng(11)
    pool = list("abcXYZ 日本語\n\t[]\"\\{}:#|<>") + ["[[context 3]]\n", "<|audio|>", "é", "\U0001F600"]

    def rand_text(lo=0):
        return "".join(pool[int(i)] for i in rng.integers(0, len(pool), size=int(rng.integers(lo, 60))))

    round_trips = 0
    for _ in range(500):
        instr = InstructionPrompt(rand_text(1)) if rng.random() < 0.5 else None
        hyp = rand_text() if rng.random() < 0.8 else None
        budget = int(rng.integers(150, 400)) if rng.random() < 0.3 and instr is None else None
        p = assemble_prompt(instr, rand_text(), rand_text(), hyp, budget)
        round_trips += parse_text(render_text(p)) == p
    ok = instr_ok and ctx_ok and bare_ok and round_trips == 500
    acceptance_report(4, "prompt fidelity", ok, f"instruction byte-identical={instr_ok}, term sets={ctx_ok and bare_ok}, "
                      f"{round_trips}/500 round trips")
    assert ok


def test_staged_training_soundness(acceptance_report):
    start = time.perf_counter()
    freeze_violations = runs = 0
    for seed in range(20):
        data = toy.make_disambiguation_data(seed, n_talks=10, utts_per_talk=8, dev_talks=2)
        for name in ("s1", "s2", "s3", "s4", "s5"):
            sched = toy.named_schedule(name, (3, 4))
            m0 = toy.ToyModel.init(np.random.default_rng(seed))
            snaps = [m0.copy()]
            toy.train_schedule(m0, data.train, data.dev, sched, toy.TrainConfig(seed=seed, batch_size=16),
                               on_stage_end=lambda i, m: snaps.append(m))
            for stage, before, after in zip(sched.stages, snaps, snaps[1:]):
                for group in toy.GROUPS:
                    frozen = group not in stage.trainable.groups
                    unchanged = np.array_equal(before.flat(group), after.flat(group))
                    freeze_violations += frozen != unchanged
            runs += 1

    rng = np.random.default_rng(99)
    worst = 0.0
    for draw in range(100):
        data = toy.make_disambiguation_data(int(rng.integers(1 << 30)), n_talks=3, utts_per_talk=4, dev_talks=1)
        m = toy.ToyModel.init(rng, scale=float(rng.uniform(0.5, 2)))
        m.params[toy.DECODER]["table"] = rng.normal(size=m.params[toy.DECODER]["table"].shape)
        m.params[toy.DECODER]["bag_bonus"] = rng.normal(size=m.vocab)
        batch = toy.make_batch([data.train[int(i)] for i in rng.choice(len(data.train), 4, replace=False)])
        cond = list(toy.Conditioning)[draw % 2]
        trainable = list(toy.Trainable)[draw % 3]
        worst = max(worst, directional_fd_check(m, batch, cond, trainable, rng, h=1e-5))
    elapsed = time.perf_counter() - start
    ok = freeze_violations == 0 and worst < 1e-5 and elapsed < 60
    acceptance_report(5, "staged-training soundness", ok, f"{runs} runs, {freeze_violations} freeze violations, "
                      f"max FD rel. err {worst:.1e} < 1e-5, {elapsed:.1f}s < 60s")
    assert ok


def test_strategy_ordering_on_mock_corpus(acceptance_report):
    start = time.perf_counter()
    held = []
    for seed in range(20):
        cers = strategy_cers(mock_strategy_experiment(seed))
        held.append(chain_holds(cers))
    elapsed = time.perf_counter() - start
    ok = sum(held) >= 18 and elapsed < 120
    failed = [s for s, h in enumerate(held) if not h]
    acceptance_report(6, "oracle <= full <= prefix:100 <= prefix:30 <= rand", ok,
                      f"{sum(held)}/20 seeds (need 18), failing seeds {failed}, {elapsed:.1f}s < 120s")
    assert ok


def test_toy_conditioning_benefit(acceptance_report):
    wins = []
    ratios = []
    for seed in range(20):
        s5 = toy_run("s5", seed).final_dev_nll
        s2 = toy_run("s2", seed).final_dev_nll
        ratios.append(s5 / s2)
        wins.append(s5 <= 0.9 * s2)
    ok = sum(wins) >= 18
    acceptance_report(7, "S5 dev NLL >= 10% below S2", ok,
                      f"{sum(wins)}/20 seeds (need 18), S5/S2 ratio range {min(ratios):.2f}-{max(ratios):.2f}")
    assert ok


def _http(url, payload):
    req = urllib.request.Request(url, data=json.dumps(payload).encode(), method="POST")
    with urllib.request.urlopen(req, timeout=10) as r:
        return json.loads(r.read())


def test_persistence_and_parity(acceptance_report, tmp_path, fixtures_dir, capsys):
    rng = np.random.default_rng(5)
    store, _, talks = _random_store(rng, 800, 64)
    path = tmp_path / "s.db"
    store.save(path)
    loaded = VectorStore.load(path)
    same_bytes = loaded.to_bytes() == store.to_bytes()
    batches_ok = 0
    for _ in range(20):
        batch_ok = True
        for _ in range(10):
            q = rng.normal(size=64)
            k = int(rng.integers(1, 10))
            flt = QueryFilter(frozenset(t for t in talks if rng.random() < 0.2))
            a = [(h.chunk_id, h.talk_id, h.score.hex()) for h in store.top_k(q, k, flt)]
            b = [(h.chunk_id, h.talk_id, h.score.hex()) for h in loaded.top_k(q, k, flt)]
            batch_ok &= a == b
        batches_ok += batch_ok

    db = tmp_path / "fx.db"
    assert main(["ingest", "--corpus", str(fixtures_dir / "corpus.jsonl"), "--chunk-size", "40", "--overlap", "10",
                 "--out", str(db)]) == 0
    capsys.readouterr()
    fstore, emb = load_db(db)
    srv = RasrServer(("127.0.0.1", 0), fstore, emb, None)
    th = threading.Thread(target=srv.serve_forever)
    th.start()
    url = f"http://127.0.0.1:{srv.server_address[1]}/v1/retrieve"
    requests = [("speech recognition with beam search", "full", 2, ["talk_a"]),
                ("protein folding on graphics processors", "prefix:15", 3, []),
                ("classical poetry", "rand:4", 2, ["talk_c"]),
                ("dialect variation", "full", 5, ["talk_a", "talk_b"])]
    parity = 0
    try:
        for hyp, mode, k, excl in requests:
            args = ["retrieve", "--db", str(db), "--mode", mode, "--hypothesis", hyp, "-k", str(k)]
            for t in excl:
                args += ["--exclude-talk", t]
            assert main(args) == 0
            cli = json.loads(capsys.readouterr().out)
            parity += cli == _http(url, {"hypothesis": hyp, "mode": mode, "k": k, "exclude_talk_ids": excl})
    finally:
        srv.drain()
        th.join()
    ok = same_bytes and batches_ok == 20 and parity == len(requests)
    acceptance_report(8, "persistence and CLI/HTTP parity", ok,
                      f"{batches_ok}/20 batches bit-exact, {parity}/{len(requests)} parity requests")
    assert ok
