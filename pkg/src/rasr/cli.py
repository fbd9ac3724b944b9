"""``rasr`` command line: ingest, query, retrieve, transcribe, evaluate, train-toy, serve, prompt."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

import numpy as np

from rasr import logs
from rasr.config import AppConfig, build_config
from rasr.corpus import load_corpus
from rasr.database import build_store, load_db, save_db
from rasr.embedding import make_embedder
from rasr.errors import RasrError
from rasr.evaluation import SCHEMA, cer_report, pool_cer, render_table
from rasr.mockcorpus import corrupt_text
from rasr.pipeline import (Cell, EvalUtterance, ExperimentSpec, HttpAsr, HttpDecoder, MockAsr,
                           MockContextualDecoder, PipelineDeps, read_dataset, run_experiment)
from rasr.prompting import DEFAULT_INSTRUCTION, InstructionPrompt, assemble_prompt, render_text
from rasr.retrieval import QueryMode
from rasr.service import RasrServer, RequestError, retrieval_payload
from rasr.store import QueryFilter
from rasr import toy

log = logging.getLogger("rasr.cli")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False))


def _mock_tables(cfg: AppConfig, dataset: list[EvalUtterance], raw: list[dict], corruption: float,
                 seed: int) -> dict[str, str]:
    """audio_ref -> first-pass text: the record's ``first_pass`` or a seeded corruption of its reference."""
    rng = np.random.default_rng(seed)
    out = {}
    for u, r in zip(dataset, raw):
        if isinstance(r.get("first_pass"), str):
            out[u.audio_ref] = r["first_pass"]
        elif u.reference:
            out[u.audio_ref] = corrupt_text(u.reference, corruption, rng)
    return out


def _backends(cfg: AppConfig, dataset_path: str | None, corruption: float, seed: int):
    dataset: list[EvalUtterance] = []
    raw: list[dict] = []
    if dataset_path:
        lines = Path(dataset_path).read_text(encoding="utf-8").splitlines()
        dataset = read_dataset(lines)
        raw = [json.loads(line) for line in lines if line.strip()]
    table = _mock_tables(cfg, dataset, raw, corruption, seed)
    if cfg.asr == "mock":
        if not dataset_path:
            raise UsageError("--asr mock needs --dataset to supply first-pass hypotheses")
        asr = MockAsr(table)
    else:
        asr = HttpAsr(cfg.asr[len("http:"):])
    if cfg.decoder == "mock":
        if not dataset_path:
            raise UsageError("--decoder mock needs --dataset")
        decoder = MockContextualDecoder(table)
    else:
        decoder = HttpDecoder(cfg.decoder[len("http:"):])
    return dataset, asr, decoder


def cmd_ingest(args, cfg: AppConfig) -> int:
    with open(args.corpus, "rb") as fh:
        talks = load_corpus(fh)
    spec = cfg.embedder
    store = build_store(talks, cfg.chunking, make_embedder(spec))
    out = args.out or cfg.db_path
    save_db(store, out, spec, cfg.chunking)
    log.info("ingested", extra={"path": str(out), "count": len(store)})
    _print_json({"talks": len(talks), "chunks": len(store), "db": str(out)})
    return EXIT_OK


def cmd_query(args, cfg: AppConfig) -> int:
    store, embedder = load_db(args.db or cfg.db_path, cfg.embedder)
    hits = store.top_k(embedder.embed(args.text), args.k or cfg.k, QueryFilter(frozenset(args.exclude_talk)))
    _print_json({"query_text": args.text,
                 "chunks": [{"chunk_id": h.entry.chunk_id, "talk_id": h.entry.talk_id, "score": h.score,
                             "text": h.entry.text} for h in hits]})
    return EXIT_OK


def cmd_retrieve(args, cfg: AppConfig) -> int:
    store, embedder = load_db(args.db or cfg.db_path, cfg.embedder)
    try:
        payload = retrieval_payload(store, embedder, hypothesis=args.hypothesis, mode=args.mode,
                                    k=args.k or cfg.k, transcript=args.transcript,
                                    exclude_talk_ids=args.exclude_talk)
    except RequestError as exc:
        raise UsageError(str(exc)) from None
    _print_json(payload)
    return EXIT_OK


def _parse_modes(text: str) -> list[QueryMode | None]:
    try:
        return [None if m.strip() == "none" else QueryMode.parse(m) for m in text.split(",")]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_transcribe(args, cfg: AppConfig) -> int:
    store, embedder = load_db(args.db or cfg.db_path, cfg.embedder)
    dataset, asr, decoder = _backends(cfg, cfg.dataset, args.corruption, args.seed)
    if not dataset:
        raise UsageError("--dataset is empty")
    flags = {"on": (True,), "off": (False,), "both": (False, True)}[args.instruction]
    spec = ExperimentSpec(tuple(Cell(m, i) for i in flags for m in _parse_modes(args.mode)),
                          k=args.k or cfg.k, workers=cfg.workers)
    deps = PipelineDeps(store, embedder, asr, decoder, spec.k)
    result = run_experiment(dataset, spec, deps)
    if args.out:
        result.write(args.out)
    text, _ = render_table(result.comparison)
    print(text, end="")
    return EXIT_OK


def cmd_evaluate(args, cfg: AppConfig) -> int:
    reports, items = [], []
    for lineno, line in enumerate(Path(args.pairs).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        obj = json.loads(line)
        try:
            rep = cer_report(obj["reference"], obj["hypothesis"])
        except KeyError as exc:
            raise RasrError(f"line {lineno}: missing field {exc.args[0]!r}") from None
        reports.append(rep)
        items.append({"id": obj.get("id", str(lineno)), **rep.to_dict()})
    report = {"schema": SCHEMA, "pooled": pool_cer(reports).to_dict(), "pairs": items}
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, ensure_ascii=False), encoding="utf-8")
    _print_json(report["pooled"])
    return EXIT_OK


def cmd_train_toy(args, cfg: AppConfig) -> int:
    try:
        a, b = (int(x) for x in args.epochs_override.split(",")) if args.epochs_override else (10, 20)
        schedule = toy.named_schedule(args.schedule, (a, b))
    except ValueError as exc:
        raise UsageError(f"bad schedule/epochs: {exc}") from None
    data = toy.make_disambiguation_data(args.seed)
    model = toy.ToyModel.init(np.random.default_rng(args.seed))
    train_cfg = toy.TrainConfig(seed=args.seed, **({"learning_rate": args.lr} if args.lr is not None else {}))
    _, history = toy.train_schedule(model, data.train, data.dev, schedule, train_cfg)
    out = json.dumps(history.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
    last = history.records[-1]
    _print_json({"schedule": schedule.name, "epochs": len(history.records), "final_dev_nll": last.dev_nll})
    return EXIT_OK


def cmd_serve(args, cfg: AppConfig) -> int:
    store, embedder = load_db(args.db or cfg.db_path, cfg.embedder)
    deps = None
    if cfg.dataset or (cfg.asr != "mock" and cfg.decoder != "mock"):
        _, asr, decoder = _backends(cfg, cfg.dataset, args.corruption, args.seed)
        deps = PipelineDeps(store, embedder, asr, decoder, cfg.k)
    server = RasrServer((cfg.host, cfg.port), store, embedder, deps, cfg.k)

    def stop(signum, frame):
        log.info("shutdown_requested", extra={"detail": signal.Signals(signum).name})
        threading.Thread(target=server.drain, daemon=True).start()

    signal.signal(signal.SIGINT, stop)
    signal.signal(signal.SIGTERM, stop)
    log.info("serving", extra={"detail": f"http://{cfg.host}:{server.server_address[1]}", "count": len(store)})
    server.serve_forever()
    server.server_close()
    log.info("stopped")
    return EXIT_OK


def cmd_prompt(args, cfg: AppConfig) -> int:
    if args.show_default_instruction:
        sys.stdout.write(DEFAULT_INSTRUCTION + "\n")
        return EXIT_OK
    instruction = None if args.no_instruction else InstructionPrompt()
    p = assemble_prompt(instruction, args.context, args.audio_ref, args.hypothesis, args.budget)
    sys.stdout.write(render_text(p))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rasr", description="Retrieval-augmented two-pass speech recognition toolkit.")
    p.add_argument("--config", help="JSON or YAML config file")
    p.add_argument("--log-level", dest="log_level")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("ingest", help="build a chunk database from a transcript corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--chunk-size", dest="chunk_size", type=int)
    s.add_argument("--overlap", type=int)
    s.add_argument("--dim", dest="embedder_dim", type=int)
    s.add_argument("--embedder", help="ngram or remote:<url>")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ingest)

    def db_args(s):
        s.add_argument("--db")
        s.add_argument("-k", type=int)
        s.add_argument("--exclude-talk", dest="exclude_talk", action="append", default=[])

    s = sub.add_parser("query", help="top-k chunks for a raw query text")
    db_args(s)
    s.add_argument("--text", required=True)
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("retrieve", help="retrieve context for a hypothesis under a query mode")
    db_args(s)
    s.add_argument("--mode", default="full", help="prefix:<n> | full | oracle | rand:<seed>")
    s.add_argument("--hypothesis", required=True)
    s.add_argument("--transcript")
    s.set_defaults(func=cmd_retrieve)

    def backend_args(s):
        s.add_argument("--asr", help="mock | http:<url>")
        s.add_argument("--decoder", help="mock | http:<url>")
        s.add_argument("--dataset", help="JSONL of utterance_id, talk_id, audio_ref, reference[, first_pass]")
        s.add_argument("--corruption", type=float, default=0.10, help="mock first-pass token corruption rate")
        s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("transcribe", help="two-pass transcription and CER over a dataset")
    s.add_argument("--db")
    s.add_argument("-k", type=int)
    s.add_argument("--mode", default="full", help="comma-separated modes; 'none' disables retrieval")
    s.add_argument("--instruction", choices=("on", "off", "both"), default="on")
    s.add_argument("--out")
    backend_args(s)
    s.set_defaults(func=cmd_transcribe)

    s = sub.add_parser("evaluate", help="CER over reference/hypothesis pairs")
    s.add_argument("--pairs", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("train-toy", help="run a staged-training schedule on the toy model")
    s.add_argument("--schedule", default="s5", choices=("s1", "s2", "s3", "s4", "s5"))
    s.add_argument("--epochs-override", dest="epochs_override", help="a,b epochs of stage 1 and 2")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--lr", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("serve", help="HTTP service for retrieval and transcription")
    s.add_argument("--db")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    backend_args(s)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("prompt", help="show or render decoder prompts")
    s.add_argument("--show-default-instruction", action="store_true")
    s.add_argument("--context", default="")
    s.add_argument("--audio-ref", dest="audio_ref", default="audio")
    s.add_argument("--hypothesis", default="")
    s.add_argument("--no-instruction", action="store_true")
    s.add_argument("--budget", type=int)
    s.set_defaults(func=cmd_prompt)
    return p


def _flags(args) -> dict:
    flags = {k: v for k, v in vars(args).items() if k in ("chunk_size", "overlap", "embedder_dim", "log_level",
                                                          "host", "port", "asr", "decoder", "dataset", "k")}
    if getattr(args, "db", None):
        flags["db_path"] = args.db
    embedder = getattr(args, "embedder", None)
    if embedder:
        if embedder.startswith("remote:"):
            flags["embedder_provider"] = "remote"
            flags["embedder_endpoint"] = embedder[len("remote:"):]
        elif embedder == "ngram":
            flags["embedder_provider"] = "ngram"
        else:
            raise UsageError(f"--embedder must be 'ngram' or 'remote:<url>', got {embedder!r}")
    return flags


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return EXIT_OK if not exc.code else EXIT_USAGE
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        cfg = build_config(args.config, flags=_flags(args))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"rasr: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logs.configure(cfg.log_level)
    try:
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"rasr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RasrError, OSError, ValueError) as exc:
        log.error("command_failed", extra={"detail": f"{type(exc).__name__}: {exc}"})
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
