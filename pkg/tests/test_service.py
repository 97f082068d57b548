import base64
import hashlib
import json

import pytest
from fastapi.testclient import TestClient

from collage_forge.service import create_app
from collage_forge.session import SessionRegistry


@pytest.fixture()
def registry():
    reg = SessionRegistry()
    yield reg
    reg.close_all()


@pytest.fixture()
def client(registry):
    with TestClient(create_app(registry)) as c:
        yield c


def config_body(patch_dir, tmp_path, **over) -> dict:
    body = {
        "patch_dir": str(patch_dir),
        "canvas": 32,
        "mode": "masked_transparency",
        "critic": "pseudo",
        "num_patches": 3,
        "base_scale": 0.6,
        "patch_lo_res": 32,
        "out_dir": str(tmp_path / "out"),
        "optimizer": {"steps": 50, "seed": 11},
        "evolution": {"population": 2, "tournament_period": 5},
    }
    body.update(over)
    return body


@pytest.fixture()
def sid(client, patch_dir, tmp_path):
    resp = client.post("/session", json=config_body(patch_dir, tmp_path))
    assert resp.status_code == 200, resp.text
    return resp.json()["session_id"]


class TestSessionEndpoints:
    def test_create_returns_initial_state(self, client, patch_dir, tmp_path):
        resp = client.post("/session", json=config_body(patch_dir, tmp_path))
        assert resp.status_code == 200
        body = resp.json()
        assert body["state"]["phase"] == "paused"
        assert body["state"]["step"] == 0
        assert body["state"]["population"] == 2
        assert body["session_id"] == body["state"]["session_id"]

    def test_single_session_gate_conflicts(self, client, sid, patch_dir, tmp_path):
        resp = client.post("/session", json=config_body(patch_dir, tmp_path))
        assert resp.status_code == 409

    def test_bad_patch_dir_is_400(self, client, tmp_path):
        empty = tmp_path / "nothing"
        empty.mkdir()
        resp = client.post("/session", json=config_body(empty, tmp_path))
        assert resp.status_code == 400

    def test_invalid_mode_is_400(self, client, patch_dir, tmp_path):
        resp = client.post(
            "/session", json=config_body(patch_dir, tmp_path, mode="alpha_blend")
        )
        assert resp.status_code == 400

    def test_state_roundtrip_and_unknown_404(self, client, sid):
        resp = client.get(f"/session/{sid}/state")
        assert resp.status_code == 200
        assert resp.json()["step"] == 0
        assert client.get("/session/zzz/state").status_code == 404

    def test_delete_removes_session(self, client, sid):
        assert client.delete(f"/session/{sid}").status_code == 200
        assert client.get(f"/session/{sid}/state").status_code == 404
        assert client.delete(f"/session/{sid}").status_code == 404


class TestControl:
    def test_step_n_blocks_and_advances(self, client, sid):
        resp = client.post(f"/session/{sid}/control", json={"action": "step_n", "n": 4})
        assert resp.status_code == 200
        body = resp.json()
        assert body["step"] == 4
        assert body["phase"] == "paused"
        assert all(loss is not None for loss in body["genome_losses"])

    def test_run_then_pause(self, client, sid):
        assert (
            client.post(f"/session/{sid}/control", json={"action": "run"}).json()["phase"]
            == "running"
        )
        paused = client.post(f"/session/{sid}/control", json={"action": "pause"}).json()
        assert paused["phase"] == "paused"

    def test_unknown_action_is_400(self, client, sid):
        resp = client.post(f"/session/{sid}/control", json={"action": "warp"})
        assert resp.status_code == 400

    def test_control_after_finish_is_409(self, client, patch_dir, tmp_path, registry):
        body = config_body(patch_dir, tmp_path, optimizer={"steps": 2, "seed": 1})
        sid = client.post("/session", json=body).json()["session_id"]
        client.post(f"/session/{sid}/control", json={"action": "step_n", "n": 2})
        resp = client.post(f"/session/{sid}/control", json={"action": "step_n", "n": 1})
        assert resp.status_code == 409

    def test_unreachable_remote_critic_pauses_with_error(
        self, client, patch_dir, tmp_path
    ):
        body = config_body(
            patch_dir,
            tmp_path,
            critic="remote",
            critic_endpoint="http://127.0.0.1:1",
        )
        sid = client.post("/session", json=body).json()["session_id"]
        state = client.post(
            f"/session/{sid}/control", json={"action": "step_n", "n": 1}
        ).json()
        assert state["phase"] == "paused"
        assert state["step"] == 0
        assert "unreachable" in state["last_error"]


class TestEditAndHit:
    def test_edit_moves_pose(self, client, sid):
        snap = client.get(f"/session/{sid}/snapshot").json()
        pose = snap["poses"][0]
        dx = 8.0 if pose["x"] < 16 else -8.0
        resp = client.post(
            f"/session/{sid}/edit",
            json={"genome_id": 0, "patch_index": 0, "x": pose["x"] + dx},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["clamped"] is False
        assert abs(body["pose"]["x"] - (pose["x"] + dx)) < 1e-6
        # dims travel with every pose so clients can draw overlay quads
        assert body["pose"]["patch_width"] == pose["patch_width"]
        assert body["pose"]["patch_height"] == pose["patch_height"]

    def test_edit_clamp_reported(self, client, sid):
        resp = client.post(
            f"/session/{sid}/edit",
            json={"genome_id": 0, "patch_index": 0, "scale": 99.0},
        )
        assert resp.status_code == 200
        assert resp.json()["clamped"] is True

    def test_edit_while_running_is_409(self, client, sid):
        client.post(f"/session/{sid}/control", json={"action": "run"})
        resp = client.post(
            f"/session/{sid}/edit", json={"genome_id": 0, "patch_index": 0, "x": 16.0}
        )
        assert resp.status_code == 409
        client.post(f"/session/{sid}/control", json={"action": "pause"})

    def test_edit_unknown_patch_is_404(self, client, sid):
        resp = client.post(
            f"/session/{sid}/edit", json={"genome_id": 0, "patch_index": 40, "x": 1.0}
        )
        assert resp.status_code == 404

    def test_edit_without_patch_index_is_422(self, client, sid):
        resp = client.post(f"/session/{sid}/edit", json={"x": 1.0})
        assert resp.status_code == 422

    def test_hit_returns_index_or_null(self, client, sid):
        resp = client.get(f"/session/{sid}/hit", params={"x": 16, "y": 16})
        assert resp.status_code == 200
        idx = resp.json()["patch_index"]
        assert idx is None or 0 <= idx < 3

    def test_hit_out_of_bounds_is_400(self, client, sid):
        resp = client.get(f"/session/{sid}/hit", params={"x": 32, "y": 0})
        assert resp.status_code == 400


class TestSnapshot:
    def test_json_snapshot_with_poses(self, client, sid):
        client.post(f"/session/{sid}/control", json={"action": "step_n", "n": 2})
        resp = client.get(f"/session/{sid}/snapshot")
        assert resp.status_code == 200
        body = resp.json()
        assert body["step"] == 2
        assert len(body["poses"]) == 3
        dims = {(p["patch_width"], p["patch_height"]) for p in body["poses"]}
        assert dims == {(16, 12), (14, 14), (10, 10)}
        png = base64.b64decode(body["png_base64"])
        assert png.startswith(b"\x89PNG")

    def test_accept_header_yields_raw_png(self, client, sid):
        json_body = client.get(f"/session/{sid}/snapshot").json()
        raw = client.get(
            f"/session/{sid}/snapshot", headers={"Accept": "image/png"}
        )
        assert raw.status_code == 200
        assert raw.headers["content-type"] == "image/png"
        assert raw.content == base64.b64decode(json_body["png_base64"])


class TestExportAndCheckpoint:
    def test_export_writes_file_with_digest(self, client, sid, tmp_path):
        client.post(f"/session/{sid}/control", json={"action": "step_n", "n": 1})
        resp = client.post(
            f"/session/{sid}/export", json={"width": 64, "height": 64}
        )
        assert resp.status_code == 200
        body = resp.json()
        data = (tmp_path / "out" / body["path"].split("/")[-1]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == body["sha256"]
        assert body["step"] == 1

    def test_export_too_small_is_400(self, client, sid):
        resp = client.post(f"/session/{sid}/export", json={"width": 8, "height": 8})
        assert resp.status_code == 400

    def test_checkpoint_save_load_roundtrip(self, client, sid, tmp_path):
        ckpt = tmp_path / "svc.ckpt"
        client.post(f"/session/{sid}/control", json={"action": "step_n", "n": 3})
        resp = client.post(
            f"/session/{sid}/checkpoint", json={"action": "save", "path": str(ckpt)}
        )
        assert resp.status_code == 200
        assert ckpt.exists()
        client.post(f"/session/{sid}/control", json={"action": "step_n", "n": 2})
        resp = client.post(
            f"/session/{sid}/checkpoint", json={"action": "load", "path": str(ckpt)}
        )
        assert resp.status_code == 200
        assert resp.json()["state"]["step"] == 3

    def test_corrupt_checkpoint_is_400(self, client, sid, tmp_path):
        ckpt = tmp_path / "bad.ckpt"
        client.post(
            f"/session/{sid}/checkpoint", json={"action": "save", "path": str(ckpt)}
        )
        raw = bytearray(ckpt.read_bytes())
        raw[-1] ^= 0xFF
        ckpt.write_bytes(bytes(raw))
        resp = client.post(
            f"/session/{sid}/checkpoint", json={"action": "load", "path": str(ckpt)}
        )
        assert resp.status_code == 400

    def test_unknown_checkpoint_action_is_400(self, client, sid, tmp_path):
        resp = client.post(
            f"/session/{sid}/checkpoint",
            json={"action": "export", "path": str(tmp_path / "x")},
        )
        assert resp.status_code == 400


class TestOpenApiSurface:
    def test_documented_routes_exist(self, client):
        spec = client.get("/openapi.json").json()
        paths = spec["paths"]
        assert set(paths) >= {
            "/session",
            "/session/{session_id}/state",
            "/session/{session_id}/control",
            "/session/{session_id}/edit",
            "/session/{session_id}/hit",
            "/session/{session_id}/snapshot",
            "/session/{session_id}/export",
            "/session/{session_id}/checkpoint",
        }
