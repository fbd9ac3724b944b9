from __future__ import annotations

import json
import os
import signal
import socket
import subprocess
import sys
import threading
import time
import urllib.error
import urllib.request

import pytest

from rasr.cli import main
from rasr.database import load_db
from rasr.pipeline import MockAsr, MockContextualDecoder, PipelineDeps
from rasr.service import RasrServer


def _call(url, payload=None, raw: bytes | None = None):
    data = raw if raw is not None else (json.dumps(payload).encode() if payload is not None else None)
    req = urllib.request.Request(url, data=data, method="POST" if data is not None else "GET")
    try:
        with urllib.request.urlopen(req, timeout=10) as r:
            return r.status, json.loads(r.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


@pytest.fixture
def db(tmp_path, fixtures_dir, capsys):
    out = tmp_path / "fx.db"
    assert main(["ingest", "--corpus", str(fixtures_dir / "corpus.jsonl"), "--chunk-size", "40", "--overlap", "10",
                 "--out", str(out)]) == 0
    capsys.readouterr()
    return out


@pytest.fixture
def server(db):
    store, emb = load_db(db)
    heard = {"audio/x.wav": "protein foldinq simulations"}
    deps = PipelineDeps(store, emb, MockAsr(heard), MockContextualDecoder(heard))
    srv = RasrServer(("127.0.0.1", 0), store, emb, deps)
    th = threading.Thread(target=srv.serve_forever)
    th.start()
    yield srv, f"http://127.0.0.1:{srv.server_address[1]}"
    if not srv.draining.is_set():
        srv.drain()
    th.join()


def test_health(server):
    srv, url = server
    assert _call(url + "/health") == (200, {"status": "ok", "chunks": len(srv.store)})
    assert _call(url + "/nope")[0] == 404


@pytest.mark.parametrize("mode", ["full", "prefix:12", "rand:3"])
def test_cli_http_parity(server, db, capsys, mode):
    _, url = server
    args = ["retrieve", "--db", str(db), "--mode", mode, "--hypothesis", "protein folding on gpus",
            "--exclude-talk", "talk_c", "-k", "3"]
    assert main(args) == 0
    cli = json.loads(capsys.readouterr().out)
    status, http = _call(url + "/v1/retrieve", {"hypothesis": "protein folding on gpus", "mode": mode, "k": 3,
                                                "exclude_talk_ids": ["talk_c"]})
    assert status == 200 and http == cli


def test_retrieve_errors(server):
    _, url = server
    assert _call(url + "/v1/retrieve", raw=b"{not json")[0] == 400
    assert _call(url + "/v1/retrieve", {"mode": "full"})[0] == 400
    assert _call(url + "/v1/retrieve", {"hypothesis": "x", "k": "2"})[0] == 400
    assert _call(url + "/v1/retrieve", {"hypothesis": "x", "mode": "prefix:0"})[0] == 422
    assert _call(url + "/v1/retrieve", {"hypothesis": "x", "k": 0})[0] == 422
    assert _call(url + "/v1/retrieve", {"hypothesis": "x", "mode": "oracle"})[0] == 422
    assert _call(url + "/v1/retrieve", {"hypothesis": "x", "exclude_talk_ids": [1]})[0] == 422


def test_transcribe(server):
    _, url = server
    status, body = _call(url + "/v1/transcribe", {"utterance_id": "u", "talk_id": "talk_a", "audio_ref": "audio/x.wav"})
    assert status == 200
    assert body["first_pass"] == "protein foldinq simulations" and body["final"] == "protein folding simulations"
    assert all(c["talk_id"] != "talk_a" for c in body["retrieval"]["chunks"])
    status, body = _call(url + "/v1/transcribe", {"utterance_id": "u", "talk_id": "t", "audio_ref": "a",
                                                  "mode": "none"})
    assert status == 502
    assert _call(url + "/v1/transcribe", {"utterance_id": "u"})[0] == 400


def test_draining_rejects_new_requests(server):
    srv, url = server
    srv.draining.set()
    # the listener is still up until shutdown; new work is refused
    assert _call(url + "/health")[0] == 503
    assert _call(url + "/v1/retrieve", {"hypothesis": "x"})[0] == 503
    srv.draining.clear()


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_command_shuts_down_on_sigterm(db, tmp_path):
    port = _free_port()
    env = {**os.environ, "PYTHONUNBUFFERED": "1"}
    proc = subprocess.Popen([sys.executable, "-m", "rasr", "serve", "--db", str(db), "--port", str(port)],
                            stderr=subprocess.PIPE, env=env)
    try:
        for _ in range(100):
            try:
                if _call(f"http://127.0.0.1:{port}/health")[0] == 200:
                    break
            except urllib.error.URLError:
                time.sleep(0.05)
        else:
            pytest.fail("server did not come up")
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=10) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
    events = [json.loads(l)["event"] for l in proc.stderr.read().decode().splitlines() if l.startswith("{")]
    assert "serving" in events and "stopped" in events
