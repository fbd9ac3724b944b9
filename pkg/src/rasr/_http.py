"""Minimal JSON-over-HTTP client used by the remote embedder and backends."""

from __future__ import annotations

import json
import socket
import time
import urllib.error
import urllib.request
from typing import Any

from rasr.errors import RemoteProtocolError, RemoteUnavailable


def post_json(url: str, payload: Any, timeout: float = 30.0) -> Any:
    body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
    req = urllib.request.Request(url, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        if exc.code >= 500 or exc.code == 429:
            raise RemoteUnavailable(f"{url}: HTTP {exc.code}") from None
        raise RemoteProtocolError(f"{url}: HTTP {exc.code}") from None
    except (urllib.error.URLError, socket.timeout, ConnectionError) as exc:
        raise RemoteUnavailable(f"{url}: {exc}") from None
    try:
        return json.loads(raw)
    except ValueError:
        raise RemoteProtocolError(f"{url}: response is not JSON") from None


def post_json_with_retry(url: str, payload: Any, *, timeout: float = 30.0,
                         retries: int = 3, backoff_s: float = 0.5) -> Any:
    """POST with exponential backoff; only ``RemoteUnavailable`` is retried."""
    delay = backoff_s
    for attempt in range(retries + 1):
        try:
            return post_json(url, payload, timeout=timeout)
        except RemoteUnavailable:
            if attempt == retries:
                raise
            time.sleep(delay)
            delay *= 2
