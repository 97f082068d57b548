"""Shared fixtures: deterministic patch files, a session patch library
and a throwaway HTTP critic double.  Plain builders live in support.py."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from collage_forge.patches import load_library
from support import write_png


@pytest.fixture(scope="session")
def patch_dir(tmp_path_factory):
    """Three small deterministic patch files: gradient, ring, noise."""
    d = tmp_path_factory.mktemp("patches")
    rng = np.random.default_rng(1234)

    gx = np.linspace(0, 255, 16, dtype=np.uint8)
    gy = np.linspace(0, 255, 12, dtype=np.uint8)
    gradient = np.zeros((12, 16, 3), dtype=np.uint8)
    gradient[..., 0] = gx[None, :]
    gradient[..., 1] = gy[:, None]
    gradient[..., 2] = 128
    write_png(d / "a_gradient.png", gradient)

    yy, xx = np.mgrid[0:14, 0:14]
    r = np.sqrt((yy - 6.5) ** 2 + (xx - 6.5) ** 2)
    ring = np.zeros((14, 14, 4), dtype=np.uint8)
    ring[..., 0] = 220
    ring[..., 1] = 40
    ring[..., 2] = 90
    ring[..., 3] = np.where((r > 2.0) & (r < 6.0), 255, 0).astype(np.uint8)
    write_png(d / "b_ring.png", ring)

    noise = (rng.random((10, 10, 3)) * 255).astype(np.uint8)
    write_png(d / "c_noise.png", noise)
    return d


@pytest.fixture(scope="session")
def library(patch_dir):
    return load_library(patch_dir, target_lo_res=8)


class _CriticHandler(BaseHTTPRequestHandler):
    server_version = "CriticDouble/0"

    def log_message(self, fmt, *args):  # keep pytest output clean
        pass

    def do_POST(self):
        server = self.server
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length) or b"{}")
        server.requests.append(
            {"path": self.path, "proto": self.headers.get("X-Critic-Proto"), "body_keys": sorted(body)}
        )
        behavior = server.behavior
        if behavior == "http500":
            self.send_response(500)
            self.end_headers()
            return

        if behavior == "echo":
            import base64

            raw = base64.b64decode(body["pixels_b64"])
            pixels = np.frombuffer(raw, dtype="<f4").reshape(
                body["height"], body["width"], 3
            )
            loss = float(pixels.mean())
            grad = np.full(pixels.shape, 1.0 / pixels.size, dtype="<f4")
            payload = {
                "loss": loss,
                "grad_b64": base64.b64encode(grad.tobytes()).decode("ascii"),
            }
        elif behavior == "malformed_b64":
            payload = {"loss": 0.5, "grad_b64": "@@@not-base64@@@"}
        elif behavior == "nan_loss":
            import base64

            grad = np.zeros((body["height"], body["width"], 3), dtype="<f4")
            payload = {
                "loss": float("nan"),
                "grad_b64": base64.b64encode(grad.tobytes()).decode("ascii"),
            }
        elif behavior == "missing_key":
            payload = {"unexpected": 1}
        else:
            raise AssertionError(f"unknown behavior {behavior}")

        data = json.dumps(payload).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class CriticDouble:
    """A real HTTP server impersonating a sidecar critic."""

    def __init__(self, behavior: str = "echo"):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _CriticHandler)
        self.server.behavior = behavior
        self.server.requests = []
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def endpoint(self) -> str:
        return f"http://127.0.0.1:{self.server.server_address[1]}"

    @property
    def requests(self):
        return self.server.requests

    def set_behavior(self, behavior: str) -> None:
        self.server.behavior = behavior

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)


@pytest.fixture
def critic_double():
    double = CriticDouble()
    yield double
    double.close()


_ACCEPTANCE_LABELS: dict[str, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        doc = getattr(item.function, "__doc__", None) if hasattr(item, "function") else None
        if item.module.__name__.endswith("acceptance") and doc:
            _ACCEPTANCE_LABELS[item.nodeid] = doc.strip().splitlines()[0]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL row per acceptance guarantee, in file order."""
    outcomes = {}
    for key in ("failed", "error", "passed"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", None)
            if nodeid in _ACCEPTANCE_LABELS and nodeid not in outcomes:
                outcomes[nodeid] = "PASS" if key == "passed" else "FAIL"
    if not outcomes:
        return
    terminalreporter.section("acceptance")
    for nodeid, label in _ACCEPTANCE_LABELS.items():
        if nodeid in outcomes:
            terminalreporter.write_line(f"{outcomes[nodeid]}: {label}")
