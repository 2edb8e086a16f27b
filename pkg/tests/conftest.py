from __future__ import annotations

import json
import shutil
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from glave.gateway import Gateway, GatewayConfig

DATA = Path(__file__).parent / "data"
CORPUS = DATA / "corpus"


@pytest.fixture(scope="session")
def corpus_workspace() -> Path:
    return CORPUS / "workspace"


@pytest.fixture(scope="session")
def corpus_fixtures() -> Path:
    return CORPUS / "fixtures"


@pytest.fixture
def workspace_copy(corpus_workspace, tmp_path) -> Path:
    ws = tmp_path / "workspace"
    shutil.copytree(corpus_workspace, ws)
    return ws


class ScriptedGateway(Gateway):
    """Gateway whose transport is a plain function of the prompt text."""

    def __init__(self, script, config: GatewayConfig | None = None):
        super().__init__(config or GatewayConfig(transport="live"))
        self.script = script
        self.sent: list[str] = []

    def _send(self, request):
        prompt = request.prompt_text()
        self.sent.append(prompt)
        return self.script(prompt), {}


class _StubState:
    def __init__(self, reply):
        self.reply = reply
        self.lock = threading.Lock()
        self.inflight = 0
        self.peak_inflight = 0
        self.requests: list[dict] = []
        self.fail_next: list[int] = []  # status codes to emit before succeeding
        self.barrier: threading.Barrier | None = None


class _StubHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        state: _StubState = self.server.state
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        with state.lock:
            state.requests.append(body)
            state.inflight += 1
            state.peak_inflight = max(state.peak_inflight, state.inflight)
            status = state.fail_next.pop(0) if state.fail_next else 200
        try:
            if state.barrier is not None:
                state.barrier.wait(timeout=10)
            if status != 200:
                payload = {"error": "injected"}
            else:
                text = state.reply(body)
                payload = {"choices": [{"message": {"content": text}}],
                           "usage": {"total_tokens": 7}}
            raw = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)
        finally:
            with state.lock:
                state.inflight -= 1


@pytest.fixture
def stub_server():
    """Local chat-completions stand-in; yields (endpoint, state)."""
    state = _StubState(lambda body: "stub reply")
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    server.state = state
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}", state
    finally:
        server.shutdown()
        thread.join(timeout=5)
