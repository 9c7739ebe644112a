"""FastAPI app implementing the provider wire protocol.

Endpoints and error shapes follow the protocol the curation toolkit's
clients speak: 400 for malformed bodies, 422 with codes ``empty_target`` /
``image_unsupported``, 503 while models are loading.
"""

from __future__ import annotations

import threading
from typing import Any, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .config import BackendConfig
from .engine import EmptyTargetError, ImageUnsupportedError, build_engines


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message}})


def create_app(config: Optional[BackendConfig] = None, preload: bool = True) -> FastAPI:
    config = config or BackendConfig()
    app = FastAPI(title="mmcurate-backend")
    state: dict[str, Any] = {"engines": None, "error": None}
    load_lock = threading.Lock()

    def load() -> None:
        with load_lock:
            if state["engines"] is None and state["error"] is None:
                try:
                    state["engines"] = build_engines(config)
                except Exception as exc:  # surfaced via /healthz
                    state["error"] = str(exc)
                    raise

    if preload:
        load()
    else:
        threading.Thread(target=lambda: _safe_load(load), daemon=True).start()

    def engines() -> Optional[dict]:
        return state["engines"]

    @app.get("/healthz")
    def healthz():
        if state["error"] is not None:
            return JSONResponse(status_code=500, content={"status": "error", "detail": state["error"]})
        if engines() is None:
            return JSONResponse(status_code=200, content={"status": "loading"})
        return {"status": "ok", "roles": sorted(engines().keys())}

    async def parse_body(request: Request) -> tuple[Optional[dict], Optional[JSONResponse]]:
        try:
            body = await request.json()
        except Exception:
            return None, _error(400, "malformed", "body is not valid JSON")
        if not isinstance(body, dict):
            return None, _error(400, "malformed", "body must be a JSON object")
        return body, None

    @app.post("/v1/token_loss")
    async def token_loss(request: Request):
        if engines() is None:
            return _error(503, "loading", "models are still loading")
        engine = engines().get("loss")
        if engine is None:
            return _error(400, "malformed", "no loss model configured")
        body, err = await parse_body(request)
        if err:
            return err
        if not isinstance(body.get("target"), str):
            return _error(400, "malformed", "target must be a string")
        if not isinstance(body.get("context", ""), str):
            return _error(400, "malformed", "context must be a string")
        image = body.get("image")
        if image is not None and not isinstance(image, dict):
            return _error(400, "malformed", "image must be an object or null")
        try:
            result = engine.token_loss(body.get("context", ""), body["target"], image)
        except EmptyTargetError as exc:
            return _error(422, "empty_target", str(exc))
        except ImageUnsupportedError as exc:
            return _error(422, "image_unsupported", str(exc))
        return result

    @app.post("/v1/chat")
    async def chat(request: Request):
        if engines() is None:
            return _error(503, "loading", "models are still loading")
        engine = engines().get("chat")
        if engine is None:
            return _error(400, "malformed", "no chat model configured")
        body, err = await parse_body(request)
        if err:
            return err
        messages = body.get("messages")
        if not isinstance(messages, list) or not messages:
            return _error(400, "malformed", "messages must be a non-empty list")
        for m in messages:
            if (
                not isinstance(m, dict)
                or not isinstance(m.get("role"), str)
                or not isinstance(m.get("content"), str)
            ):
                return _error(400, "malformed", "each message needs string role and content")
        if "images" in body and not isinstance(body["images"], list):
            return _error(400, "malformed", "images must be a list")
        text = engine.chat(
            messages,
            temperature=float(body.get("temperature", 0.0)),
            max_tokens=int(body.get("max_tokens", 64)),
            seed=body.get("seed"),
        )
        return {"text": text}

    @app.post("/v1/embed")
    async def embed(request: Request):
        if engines() is None:
            return _error(503, "loading", "models are still loading")
        engine = engines().get("embed")
        if engine is None:
            return _error(400, "malformed", "no embed model configured")
        body, err = await parse_body(request)
        if err:
            return err
        texts = body.get("texts")
        if not isinstance(texts, list) or not texts or not all(isinstance(t, str) for t in texts):
            return _error(400, "malformed", "texts must be a non-empty list of strings")
        return {"vectors": engine.embed(texts)}

    return app


def _safe_load(load) -> None:
    try:
        load()
    except Exception:
        pass
