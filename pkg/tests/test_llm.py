import json
import logging
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from snapstories.errors import ConfigError, TransportError
from snapstories.llm import API_KEY_ENV, LLMClient


class _Handler(BaseHTTPRequestHandler):
    mode = "ok"
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((dict(self.headers), body))
        if self.mode == "slow":
            time.sleep(0.5)
        if self.mode == "auth":
            self.send_response(401)
            self.end_headers()
            return
        if self.mode == "error":
            self.send_response(503)
            self.end_headers()
            return
        if "messages" in body:
            payload = {"choices": [{"message": {"content": "chat ⟨sequence⟩"}}]}
        else:
            payload = {"choices": [{"text": "text ⟨sequence⟩"}]}
        data = json.dumps(payload).encode()
        try:
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
        except BrokenPipeError:
            pass

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    _Handler.mode = "ok"
    _Handler.seen = []
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{srv.server_port}/v1/completions"
    srv.shutdown()
    srv.server_close()


def test_completions_style(server, monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "sk-secret")
    assert LLMClient(server, "m1").complete("hello") == "text ⟨sequence⟩"
    headers, body = _Handler.seen[0]
    assert headers["Authorization"] == "Bearer sk-secret"
    assert body["prompt"] == "hello" and body["model"] == "m1"


def test_chat_style(server):
    assert LLMClient(server, "m", api_style="chat").complete("hi") == "chat ⟨sequence⟩"
    assert _Handler.seen[0][1]["messages"] == [{"role": "user", "content": "hi"}]


def test_timeout_reports_attempts(server):
    _Handler.mode = "slow"
    client = LLMClient(server, "m", timeout=0.1, max_retries=2, backoff=0)
    with pytest.raises(TransportError) as info:
        client.complete("x")
    assert info.value.attempts == 3
    assert info.value.exit_code == 4


def test_server_error_is_retried(server):
    _Handler.mode = "error"
    with pytest.raises(TransportError, match="HTTP 503") as info:
        LLMClient(server, "m", max_retries=1, backoff=0).complete("x")
    assert info.value.attempts == 2


def test_auth_failure_not_retried(server):
    _Handler.mode = "auth"
    with pytest.raises(TransportError, match="authentication") as info:
        LLMClient(server, "m", api_key="k", max_retries=3, backoff=0).complete("x")
    assert info.value.attempts == 1


def test_key_never_logged(server, caplog):
    caplog.set_level(logging.INFO, logger="snapstories.llm")
    LLMClient(server, "m", api_key="sk-very-secret").complete("x")
    assert "sk-very-secret" not in caplog.text
    assert "Bearer ***" in caplog.text
    assert '"prompt": "x"' in caplog.text


def test_config_errors():
    with pytest.raises(ConfigError):
        LLMClient("", "m")
    with pytest.raises(ConfigError):
        LLMClient("http://x", "m", api_style="grpc")
