"""Fixtures: a real HTTP server around the sidecar app on a free port."""

import socket
import threading
import time

import pytest
import uvicorn

from clip_sidecar import create_app
from clip_sidecar.encoders import EchoCritic, TinyDualEncoder


class SidecarServer:
    def __init__(self, app):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        self.port = probe.getsockname()[1]
        probe.close()
        config = uvicorn.Config(app, host="127.0.0.1", port=self.port, log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)
        self.thread.start()
        deadline = time.time() + 10
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("sidecar server did not start")
            time.sleep(0.01)

    @property
    def endpoint(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def close(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=5)


@pytest.fixture()
def echo_server():
    server = SidecarServer(create_app(EchoCritic()))
    yield server
    server.close()


@pytest.fixture()
def tiny_server():
    server = SidecarServer(create_app(TinyDualEncoder()))
    yield server
    server.close()
