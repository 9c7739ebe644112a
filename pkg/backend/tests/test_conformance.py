"""The toolkit's wire-protocol contract tests, run against this server."""

from __future__ import annotations

from mmcurate.protocol import run_conformance


def test_wire_protocol_conformance(client):
    def post(path, payload):
        resp = client.post(path, json=payload)
        return resp.status_code, resp.json()

    def get(path):
        resp = client.get(path)
        return resp.status_code, resp.json()

    # the bundled loss model is text-only, so image requests must 422
    passed = run_conformance(post, supports_images=False, get=get)
    assert "token_loss/image-unsupported" in passed
    assert "healthz" in passed
    assert len(passed) >= 15


def test_malformed_json_body(client):
    resp = client.post("/v1/token_loss", content=b"{nope", headers={"content-type": "application/json"})
    assert resp.status_code == 400
    assert resp.json()["error"]["code"] == "malformed"


def test_loading_state_returns_503(monkeypatch):
    import threading

    from fastapi.testclient import TestClient

    import modelbackend.server as server_mod

    gate = threading.Event()
    original = server_mod.build_engines

    def slow_build(config):
        gate.wait(timeout=10)
        return original(config)

    monkeypatch.setattr(server_mod, "build_engines", slow_build)
    app = server_mod.create_app(preload=False)
    client = TestClient(app)
    resp = client.post("/v1/token_loss", json={"context": "", "target": "a"})
    assert resp.status_code == 503
    assert resp.json()["error"]["code"] == "loading"
    assert client.get("/healthz").json()["status"] == "loading"
    gate.set()
    for _ in range(100):
        if client.get("/healthz").json().get("status") == "ok":
            break
        import time

        time.sleep(0.05)
    assert client.post("/v1/token_loss", json={"context": "", "target": "a"}).status_code == 200
