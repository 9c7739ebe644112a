"""Provider wire protocol: request/response shapes, a stub server, and the
conformance checks any server implementation must pass.

Endpoints (JSON bodies, bearer auth optional):

  POST /v1/chat        {messages:[{role,content}], images:[{id,uri,...}],
                        temperature, max_tokens, seed}        -> {text}
  POST /v1/token_loss  {image?, context, target}              -> {sum_nll, token_count}
  POST /v1/embed       {texts:[...]}                          -> {vectors:[[...]]}
  GET  /healthz                                               -> {status:"ok"}

Errors are ``{"error": {"code", "message"}}`` with status 400 for malformed
bodies, 422 for ``empty_target`` / ``image_unsupported``, 503 while loading.
The sum over the target span uses natural-log NLL; the target's token
boundaries are found by tokenizing ``context`` and ``context+target`` and
diffing, so tokenizers that merge across the boundary stay consistent.
"""

from __future__ import annotations

import json
from typing import Callable, Optional

import httpx

from .errors import EmptyTarget, ImageUnsupported, UnknownToken
from .providers import HashEmbedder, MockLm, MockLmSpec, LossRequest
from .records import ImageRef

PostFn = Callable[[str, dict], tuple[int, dict]]


def _error(status: int, code: str, message: str) -> tuple[int, dict]:
    return status, {"error": {"code": code, "message": message}}


def image_from_wire(data: Optional[dict]) -> Optional[ImageRef]:
    if data is None:
        return None
    return ImageRef(
        id=str(data.get("id", "")),
        uri=str(data.get("uri", "")),
        width=data.get("width"),
        height=data.get("height"),
    )


def validate_chat_request(body: dict) -> Optional[str]:
    msgs = body.get("messages")
    if not isinstance(msgs, list) or not msgs:
        return "messages must be a non-empty list"
    for m in msgs:
        if not isinstance(m, dict) or not isinstance(m.get("role"), str) or not isinstance(
            m.get("content"), str
        ):
            return "each message needs string role and content"
    if "images" in body and not isinstance(body["images"], list):
        return "images must be a list"
    return None


def validate_token_loss_request(body: dict) -> Optional[str]:
    if not isinstance(body.get("target"), str):
        return "target must be a string"
    if not isinstance(body.get("context", ""), str):
        return "context must be a string"
    img = body.get("image")
    if img is not None and not isinstance(img, dict):
        return "image must be an object or null"
    return None


def validate_embed_request(body: dict) -> Optional[str]:
    texts = body.get("texts")
    if not isinstance(texts, list) or not texts or not all(isinstance(t, str) for t in texts):
        return "texts must be a non-empty list of strings"
    return None


class StubWireServer:
    """In-process protocol implementation backed by the deterministic mocks.

    Primary reference for the wire contract: the HTTP clients are tested
    against it, and the same conformance checks run against any real server.
    """

    def __init__(self, chat_fn: Optional[Callable[[dict], str]] = None, loss=None, embedder=None):
        self.chat_fn = chat_fn or (lambda body: "stub response")
        self.loss = loss or MockLm(MockLmSpec(vocab=("a", "b", "c", "d")))
        self.embedder = embedder or HashEmbedder(dim=16, seed=0)

    def handle(self, method: str, path: str, raw_body: bytes) -> tuple[int, dict]:
        if path == "/healthz" and method == "GET":
            return 200, {"status": "ok"}
        if method != "POST":
            return _error(400, "malformed", f"unsupported method {method}")
        try:
            body = json.loads(raw_body.decode("utf-8")) if raw_body else {}
        except Exception:
            return _error(400, "malformed", "body is not valid JSON")
        if not isinstance(body, dict):
            return _error(400, "malformed", "body must be a JSON object")
        if path == "/v1/chat":
            return self._chat(body)
        if path == "/v1/token_loss":
            return self._token_loss(body)
        if path == "/v1/embed":
            return self._embed(body)
        return _error(400, "malformed", f"unknown path {path}")

    def _chat(self, body: dict) -> tuple[int, dict]:
        problem = validate_chat_request(body)
        if problem:
            return _error(400, "malformed", problem)
        return 200, {"text": self.chat_fn(body)}

    def _token_loss(self, body: dict) -> tuple[int, dict]:
        problem = validate_token_loss_request(body)
        if problem:
            return _error(400, "malformed", problem)
        req = LossRequest(
            target=body["target"],
            context=body.get("context", ""),
            image=image_from_wire(body.get("image")),
        )
        try:
            result = self.loss.token_loss(req)
        except EmptyTarget as exc:
            return _error(422, "empty_target", str(exc))
        except ImageUnsupported as exc:
            return _error(422, "image_unsupported", str(exc))
        except UnknownToken as exc:
            return _error(400, "malformed", str(exc))
        return 200, {"sum_nll": result.sum_nll, "token_count": result.token_count}

    def _embed(self, body: dict) -> tuple[int, dict]:
        problem = validate_embed_request(body)
        if problem:
            return _error(400, "malformed", problem)
        vectors = self.embedder.embed(body["texts"])
        return 200, {"vectors": [v.tolist() for v in vectors]}


def stub_transport(server: StubWireServer) -> httpx.MockTransport:
    """Adapt the stub server to an httpx transport for client tests."""

    def handler(request: httpx.Request) -> httpx.Response:
        status, body = server.handle(request.method, request.url.path, request.content)
        return httpx.Response(status, json=body)

    return httpx.MockTransport(handler)


def post_via(server: StubWireServer) -> PostFn:
    def post(path: str, payload: dict) -> tuple[int, dict]:
        return server.handle("POST", path, json.dumps(payload).encode("utf-8"))

    return post


# --- conformance checks -------------------------------------------------------------


def run_conformance(
    post: PostFn,
    supports_images: bool = True,
    get: Optional[Callable[[str], tuple[int, dict]]] = None,
) -> list[str]:
    """Exercise the wire contract through ``post``; returns the checks passed.

    ``post(path, payload)`` must return ``(status_code, parsed_json_body)``.
    Raises AssertionError on the first violation. Probe texts stick to the
    tokens "a" and "b" so closed-vocabulary stub servers qualify.
    """
    passed: list[str] = []

    def check(name: str, cond: bool, detail: str = "") -> None:
        assert cond, f"protocol violation [{name}] {detail}"
        passed.append(name)

    status, body = post("/v1/token_loss", {"context": "", "target": "a b"})
    check("token_loss/ok-status", status == 200, f"got {status}: {body}")
    check(
        "token_loss/shape",
        isinstance(body.get("sum_nll"), (int, float)) and isinstance(body.get("token_count"), int),
        f"body {body}",
    )
    check("token_loss/nonneg", body["sum_nll"] >= 0.0)
    check("token_loss/count", body["token_count"] >= 1)

    status2, body2 = post("/v1/token_loss", {"context": "", "target": "a b"})
    check("token_loss/deterministic", status2 == 200 and body2 == body, f"{body} vs {body2}")

    status, body = post("/v1/token_loss", {"context": "", "target": ""})
    check("token_loss/empty-target-status", status == 422, f"got {status}: {body}")
    check(
        "token_loss/empty-target-code",
        body.get("error", {}).get("code") == "empty_target",
        f"body {body}",
    )

    status, body = post("/v1/token_loss", {"context": "", "target": "   "})
    check("token_loss/whitespace-target", status == 422, f"got {status}: {body}")

    status, body = post("/v1/token_loss", {"context": ""})
    check("token_loss/missing-target", status == 400, f"got {status}: {body}")

    image = {"id": "img-0", "uri": "fixtures/img-0.png"}
    status, body = post("/v1/token_loss", {"context": "", "target": "a", "image": image})
    if supports_images:
        check("token_loss/image-ok", status == 200, f"got {status}: {body}")
    else:
        check(
            "token_loss/image-unsupported",
            status == 422 and body.get("error", {}).get("code") == "image_unsupported",
            f"got {status}: {body}",
        )

    status, body = post(
        "/v1/chat",
        {
            "messages": [
                {"role": "system", "content": "You are a test."},
                {"role": "user", "content": "a b"},
            ],
            "images": [],
            "temperature": 0.0,
            "max_tokens": 16,
            "seed": 0,
        },
    )
    check("chat/ok-status", status == 200, f"got {status}: {body}")
    check("chat/shape", isinstance(body.get("text"), str), f"body {body}")

    status, body = post("/v1/chat", {"messages": "not-a-list"})
    check("chat/malformed", status == 400, f"got {status}: {body}")

    status, body = post("/v1/embed", {"texts": ["a", "b b"]})
    check("embed/ok-status", status == 200, f"got {status}: {body}")
    vectors = body.get("vectors")
    check(
        "embed/shape",
        isinstance(vectors, list) and len(vectors) == 2 and all(isinstance(v, list) for v in vectors),
        f"body {body}",
    )
    check("embed/consistent-dims", len(vectors[0]) == len(vectors[1]) and len(vectors[0]) >= 1)

    status, body = post("/v1/embed", {"texts": "x"})
    check("embed/malformed", status == 400, f"got {status}: {body}")

    status, body = post("/v1/embed", {"texts": []})
    check("embed/empty", status == 400, f"got {status}: {body}")

    if get is not None:
        status, body = get("/healthz")
        check("healthz", status == 200 and body.get("status") == "ok", f"got {status}: {body}")

    return passed
