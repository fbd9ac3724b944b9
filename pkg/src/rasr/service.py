"""HTTP service for retrieval and two-pass transcription, plus payload builders shared with the CLI."""

from __future__ import annotations

import json
import logging
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from rasr.embedding import Embedder
from rasr.errors import BackendError, DimensionMismatch, RasrError, RemoteProtocolError, RemoteUnavailable
from rasr.pipeline import EvalUtterance, PipelineDeps, transcribe_two_pass
from rasr.retrieval import QueryMode, RetrievalRequest, build_query, retrieve
from rasr.store import VectorStore

log = logging.getLogger(__name__)


class RequestError(ValueError):
    def __init__(self, status: int, message: str):
        self.status = status
        super().__init__(message)


def _str_list(value: Any, name: str) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise RequestError(422, f"{name} must be a list of strings")
    return value


def retrieval_payload(store: VectorStore, embedder: Embedder, *, hypothesis: str, mode: str,
                      k: int, transcript: str | None = None, exclude_talk_ids=()) -> dict:
    """The JSON document returned by both ``rasr retrieve`` and ``POST /v1/retrieve``."""
    try:
        qmode = QueryMode.parse(mode)
        query = build_query(hypothesis, transcript, qmode)
        req = RetrievalRequest(query, k, frozenset(exclude_talk_ids))
    except (ValueError, RasrError) as exc:
        raise RequestError(422, str(exc)) from None
    try:
        return retrieve(req, qmode, store, embedder).to_dict()
    except DimensionMismatch as exc:
        raise RequestError(422, str(exc)) from None


def transcription_payload(deps: PipelineDeps, *, utterance_id: str, talk_id: str, audio_ref: str,
                          mode: str | None, instruction: bool, reference: str | None = None) -> dict:
    try:
        qmode = QueryMode.parse(mode) if mode not in (None, "none") else None
        u = EvalUtterance(utterance_id, talk_id, audio_ref, reference or "")
    except ValueError as exc:
        raise RequestError(422, str(exc)) from None
    try:
        res = transcribe_two_pass(u, qmode, instruction, deps)
    except BackendError as exc:
        raise RequestError(502, str(exc)) from None
    return {"utterance_id": utterance_id, "talk_id": talk_id, **res.to_dict()}


class RasrServer(ThreadingHTTPServer):
    """Threaded server over a read-only store; ``drain`` finishes in-flight requests before closing."""

    daemon_threads = False
    block_on_close = True

    def __init__(self, address, store: VectorStore, embedder: Embedder, deps: PipelineDeps | None, k: int = 2):
        super().__init__(address, _Handler)
        self.store = store
        self.embedder = embedder
        self.deps = deps
        self.k = k
        self.draining = threading.Event()

    def drain(self) -> None:
        """Stop accepting, answer late requests with 503, and wait for in-flight ones."""
        self.draining.set()
        self.shutdown()
        self.server_close()


class _Handler(BaseHTTPRequestHandler):
    server: RasrServer
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("http_request", extra={"detail": fmt % args})

    def _send(self, status: int, payload: Any) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length)
        try:
            obj = json.loads(raw)
        except ValueError:
            raise RequestError(400, "body is not valid JSON") from None
        if not isinstance(obj, dict):
            raise RequestError(400, "body must be a JSON object")
        return obj

    @staticmethod
    def _field(obj: dict, name: str, typ, default=...):
        if name not in obj or obj[name] is None:
            if default is ...:
                raise RequestError(400, f"missing field {name!r}")
            return default
        value = obj[name]
        if typ is int and isinstance(value, bool) or not isinstance(value, typ):
            raise RequestError(400, f"field {name!r} has the wrong type")
        return value

    def do_GET(self):
        if self.server.draining.is_set():
            return self._send(503, {"error": "shutting down"})
        if self.path == "/health":
            return self._send(200, {"status": "ok", "chunks": len(self.server.store)})
        self._send(404, {"error": f"no route {self.path}"})

    def do_POST(self):
        if self.server.draining.is_set():
            return self._send(503, {"error": "shutting down"})
        try:
            if self.path == "/v1/retrieve":
                obj = self._body()
                hypothesis = obj.get("hypothesis", obj.get("query_text"))
                if not isinstance(hypothesis, str):
                    raise RequestError(400, "missing field 'hypothesis'")
                payload = retrieval_payload(
                    self.server.store, self.server.embedder,
                    hypothesis=hypothesis,
                    mode=self._field(obj, "mode", str, "full"),
                    k=self._field(obj, "k", int, self.server.k),
                    transcript=self._field(obj, "transcript", str, None),
                    exclude_talk_ids=_str_list(obj.get("exclude_talk_ids"), "exclude_talk_ids"))
            elif self.path == "/v1/transcribe":
                if self.server.deps is None:
                    raise RequestError(502, "no ASR/decoder backends configured")
                obj = self._body()
                payload = transcription_payload(
                    self.server.deps,
                    utterance_id=self._field(obj, "utterance_id", str),
                    talk_id=self._field(obj, "talk_id", str),
                    audio_ref=self._field(obj, "audio_ref", str),
                    mode=self._field(obj, "mode", str, "full"),
                    instruction=self._field(obj, "instruction", bool, True),
                    reference=self._field(obj, "transcript", str, None))
            else:
                return self._send(404, {"error": f"no route {self.path}"})
        except RequestError as exc:
            return self._send(exc.status, {"error": str(exc)})
        except (RemoteUnavailable, RemoteProtocolError) as exc:
            return self._send(502, {"error": str(exc)})
        except RasrError as exc:
            log.error("request_failed", extra={"detail": str(exc)})
            return self._send(500, {"error": str(exc)})
        self._send(int(HTTPStatus.OK), payload)
