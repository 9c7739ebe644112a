"""Provider layer: chat completion, token-level loss, and text embedding.

Each capability has an HTTP client speaking the wire protocol described in
``protocol.py`` and at least one deterministic in-process mock. The mocks are
the test oracles for the scoring stack: their probability tables are simple
enough to enumerate by hand.
"""

from __future__ import annotations

import hashlib
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, Sequence

import httpx
import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyTarget,
    ImageUnsupported,
    ProviderError,
    RateLimited,
    Timeout,
    UnknownToken,
)
from .prompts import PromptBundle, Stage
from .records import ImageRef, LossResult


@dataclass(frozen=True)
class LossRequest:
    """One summed-NLL query: target text, optional text context and image."""

    target: str
    context: str = ""
    image: Optional[ImageRef] = None


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: Optional[int] = None


class ChatProvider(Protocol):
    provider_id: str

    def chat_complete(self, bundle: PromptBundle, gen: GenerationParams) -> str: ...


class LossProvider(Protocol):
    provider_id: str
    supports_images: bool

    def token_loss(self, req: LossRequest) -> LossResult: ...


class EmbedProvider(Protocol):
    provider_id: str

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


# --- mock language model (loss oracle) ----------------------------------------


def whitespace_tokens(text: str) -> list[str]:
    return text.split()


@dataclass(frozen=True)
class MockLmSpec:
    """A closed-vocabulary toy LM with an analytically known distribution.

    Modes:
      uniform   every token has probability 1/V regardless of context/image.
      copycat   p(next == previous token) = p_repeat, remaining mass uniform
                over the other tokens; with no preceding token, uniform.
      imagebag  with an image attached, mass p_inbag is spread uniformly over
                the image's token bag and the rest over the out-of-bag tokens;
                without an image (or without a bag), uniform.
    """

    vocab: tuple[str, ...]
    mode: str = "uniform"
    p_repeat: Optional[float] = None
    p_inbag: Optional[float] = None
    default_bag: Optional[frozenset[str]] = None
    image_bags: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.vocab:
            raise ValueError("vocab must be non-empty")
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocab tokens must be unique")
        if self.mode not in ("uniform", "copycat", "imagebag"):
            raise ValueError(f"unknown mock mode {self.mode!r}")
        if self.mode == "copycat":
            if self.p_repeat is None or not (0.0 < self.p_repeat < 1.0):
                raise ValueError("copycat requires p_repeat in (0,1)")
            if len(self.vocab) < 2:
                raise ValueError("copycat requires vocab size >= 2")
        if self.mode == "imagebag":
            if self.p_inbag is None or not (0.0 < self.p_inbag < 1.0):
                raise ValueError("imagebag requires p_inbag in (0,1)")
            vocab_set = set(self.vocab)
            for bag in [self.default_bag, *self.image_bags.values()]:
                if bag is None:
                    continue
                if not bag or not bag < vocab_set:
                    raise ValueError("bags must be non-empty proper subsets of the vocab")


class MockLm:
    """Deterministic loss provider over a MockLmSpec."""

    supports_images = True

    def __init__(self, spec: MockLmSpec):
        self.spec = spec
        self._vocab_set = set(spec.vocab)
        self._v = len(spec.vocab)

    @property
    def provider_id(self) -> str:
        s = self.spec
        if s.mode == "copycat":
            detail = f"p={s.p_repeat}"
        elif s.mode == "imagebag":
            detail = f"p={s.p_inbag}"
        else:
            detail = ""
        return f"mock-lm:{s.mode}({detail}v={self._v})"

    def _bag_for(self, image: Optional[ImageRef]) -> Optional[frozenset[str]]:
        if image is None:
            return None
        return self.spec.image_bags.get(image.id, self.spec.default_bag)

    def next_token_prob(
        self, token: str, prev: Optional[str], bag: Optional[frozenset[str]]
    ) -> float:
        s = self.spec
        if s.mode == "copycat" and prev is not None:
            if token == prev:
                return s.p_repeat
            return (1.0 - s.p_repeat) / (self._v - 1)
        if s.mode == "imagebag" and bag is not None:
            if token in bag:
                return s.p_inbag / len(bag)
            return (1.0 - s.p_inbag) / (self._v - len(bag))
        return 1.0 / self._v

    def token_loss(self, req: LossRequest) -> LossResult:
        target = whitespace_tokens(req.target)
        if not target:
            raise EmptyTarget("target tokenizes to zero tokens")
        context = whitespace_tokens(req.context)
        for tok in context + target:
            if tok not in self._vocab_set:
                raise UnknownToken(f"token {tok!r} not in mock vocabulary")
        bag = self._bag_for(req.image)
        sum_nll = 0.0
        prev = context[-1] if context else None
        for tok in target:
            sum_nll += -math.log(self.next_token_prob(tok, prev, bag))
            prev = tok
        return LossResult(sum_nll=sum_nll, token_count=len(target), provider_id=self.provider_id)


# --- mock chat providers ----------------------------------------------------------


class EchoChat:
    """Returns one canned fixture text for every call."""

    def __init__(self, text: str):
        self.text = text
        self.provider_id = "mock-chat:echo"

    def chat_complete(self, bundle: PromptBundle, gen: GenerationParams) -> str:
        return self.text


def _stable_int(*parts: str) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "big")


class SyntheticChat:
    """Deterministic stage-aware generator for pipeline runs without a real LM.

    Output text is derived purely from the bundle content and the seed, and
    is composed from the payload's own words plus a small fixed lexicon, so a
    closed-vocabulary mock LM can score everything downstream.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.provider_id = f"mock-chat:synthetic/{seed}"

    def chat_complete(self, bundle: PromptBundle, gen: GenerationParams) -> str:
        payload = bundle.messages[-1].content
        caption, ocr_texts = _parse_payload(payload)
        key = _stable_int(str(self.seed), bundle.stage.value, payload)
        if bundle.stage is Stage.CAPTION_ENRICH:
            shown = " and ".join(ocr_texts) if ocr_texts else "no text"
            return f"{caption} it also shows the text {shown} near the top edge"
        if bundle.stage is Stage.EXTRACTIVE_GEN:
            return self._extractive(caption, ocr_texts, key)
        if bundle.stage is Stage.SELF_EXPLAIN_GEN:
            return self._selfexplain(payload, ocr_texts, key)
        raise ValueError(f"unknown stage {bundle.stage}")

    def _extractive(self, caption: str, ocr_texts: list[str], key: int) -> str:
        nouns = ("sign", "poster", "banner", "label", "board")
        qwords = ("what does the {n} say", "where is the {n}", "which words are on the {n}")
        count = 2 + key % 2
        blocks = []
        for i in range(count):
            k = key // (i + 3)
            noun = nouns[k % len(nouns)]
            q = qwords[(k // 7) % len(qwords)].format(n=noun)
            src = ocr_texts[k % len(ocr_texts)] if ocr_texts else "nothing"
            repeat = " it says" if (k // 11) % 3 else ""
            a = f"the {noun} says {src}{repeat}"
            blocks.append(f"Question: {q}\nAnswer: {a}")
        return "\n".join(blocks)

    def _selfexplain(self, payload: str, ocr_texts: list[str], key: int) -> str:
        ref_answer = ""
        in_ref = False
        for line in payload.splitlines():
            if line.startswith("Reference QA:"):
                in_ref = True
            elif in_ref and line.startswith("Answer: "):
                ref_answer = line[len("Answer: ") :]
        sides = ("top", "bottom", "left", "right")
        side = sides[key % len(sides)]
        q_forms = (
            "how is that answer found in the image",
            "where does the answer come from",
            "why is that the answer",
        )
        q = q_forms[(key // 5) % len(q_forms)]
        return (
            f"Reasoning Question: {q}\n"
            f"Reasoning Answer: the words {ref_answer} appear near the {side} edge of the image"
        )


def _parse_payload(payload: str) -> tuple[str, list[str]]:
    caption = ""
    ocr_texts: list[str] = []
    section = ""
    for line in payload.splitlines():
        if line.startswith("Image caption:"):
            section = "caption"
        elif line.startswith("OCR result:"):
            section = "ocr"
        elif line.startswith("Reference QA:"):
            section = "ref"
        elif section == "caption" and line.strip():
            caption = line.strip()
        elif section == "ocr" and line.strip():
            # OCR lines look like "[[...], text, confidence]"
            inner = line.strip()
            try:
                body = inner[inner.index("], ") + 3 : inner.rindex(", ")]
                ocr_texts.append(body)
            except ValueError:
                continue
    return caption, ocr_texts


# --- mock embedder -----------------------------------------------------------------


class HashEmbedder:
    """Deterministic bag-of-words embedding via signed feature hashing."""

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.seed = seed
        self.provider_id = f"mock-embed:hash/{dim}/{seed}"

    def _token_slot(self, token: str) -> tuple[int, float]:
        h = _stable_int(str(self.seed), token)
        return h % self.dim, 1.0 if (h >> 17) & 1 else -1.0

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        out = []
        for text in texts:
            vec = np.zeros(self.dim, dtype=np.float64)
            tokens = text.lower().split()
            for tok in tokens:
                slot, sign = self._token_slot(tok)
                vec[slot] += sign
            if tokens:
                vec /= len(tokens)
            out.append(vec)
        return out


# --- HTTP providers ------------------------------------------------------------------


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str
    model_id: str = ""
    auth_env: Optional[str] = None
    timeout: float = 30.0
    max_retries: int = 3
    rate_limit: float = 10.0  # requests per second
    backoff_base: float = 0.25

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.rate_limit <= 0:
            raise ValueError("rate_limit must be > 0")


_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


class WireClient:
    """Shared HTTP transport: auth header, rate limiting, retry with backoff.

    The rate limiter is the single synchronization point; callers may share
    one client across threads.
    """

    def __init__(
        self,
        config: ProviderConfig,
        transport: Optional[httpx.BaseTransport] = None,
        sleep=time.sleep,
    ):
        self.config = config
        self._client = httpx.Client(
            base_url=config.endpoint, timeout=config.timeout, transport=transport
        )
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_allowed = 0.0
        self.last_call_retries = 0

    def _headers(self) -> dict[str, str]:
        if not self.config.auth_env:
            return {}
        import os

        token = os.environ.get(self.config.auth_env)
        if not token:
            return {}
        return {"Authorization": f"Bearer {token}"}

    def _respect_rate_limit(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_allowed - now
            self._next_allowed = max(self._next_allowed, now) + 1.0 / self.config.rate_limit
        if wait > 0:
            self._sleep(wait)

    def post(self, path: str, payload: dict) -> dict:
        last_exc: Exception = ProviderError(0, "no attempt made")
        self.last_call_retries = 0
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                self._sleep(self.config.backoff_base * (2 ** (attempt - 1)))
                self.last_call_retries += 1
            self._respect_rate_limit()
            try:
                resp = self._client.post(path, json=payload, headers=self._headers())
            except httpx.TimeoutException as exc:
                last_exc = Timeout(str(exc))
                continue
            except httpx.TransportError as exc:
                last_exc = ProviderError(0, str(exc))
                continue
            if resp.status_code == 200:
                return resp.json()
            if resp.status_code in _RETRYABLE_STATUSES:
                if resp.status_code == 429:
                    last_exc = RateLimited(resp.text)
                else:
                    last_exc = ProviderError(resp.status_code, resp.text)
                continue
            raise _map_client_error(resp)
        raise last_exc

    def close(self) -> None:
        self._client.close()


def _map_client_error(resp: httpx.Response) -> Exception:
    try:
        code = resp.json().get("error", {}).get("code", "")
    except Exception:
        code = ""
    if resp.status_code == 422 and code == "empty_target":
        return EmptyTarget(resp.text)
    if resp.status_code == 422 and code == "image_unsupported":
        return ImageUnsupported(resp.text)
    return ProviderError(resp.status_code, resp.text)


def image_to_wire(image: Optional[ImageRef]) -> Optional[dict]:
    if image is None:
        return None
    return {"id": image.id, "uri": image.uri, "width": image.width, "height": image.height}


def bundle_to_wire(bundle: PromptBundle, gen: GenerationParams) -> dict:
    images = [
        image_to_wire(getattr(m, "image", None))
        for m in bundle.messages
        if m.image_attached
    ]
    return {
        "messages": [{"role": m.role, "content": m.content} for m in bundle.messages],
        "images": [img for img in images if img is not None],
        "temperature": gen.temperature,
        "max_tokens": gen.max_tokens,
        "seed": gen.seed,
    }


class HttpChatProvider:
    def __init__(self, config: ProviderConfig, transport: Optional[httpx.BaseTransport] = None):
        self.client = WireClient(config, transport=transport)
        self.provider_id = f"http-chat:{config.model_id or config.endpoint}"

    def chat_complete(self, bundle: PromptBundle, gen: GenerationParams) -> str:
        body = self.client.post("/v1/chat", bundle_to_wire(bundle, gen))
        return body["text"]


class HttpLossProvider:
    supports_images = True

    def __init__(self, config: ProviderConfig, transport: Optional[httpx.BaseTransport] = None):
        self.client = WireClient(config, transport=transport)
        self.provider_id = f"http-loss:{config.model_id or config.endpoint}"

    def token_loss(self, req: LossRequest) -> LossResult:
        body = self.client.post(
            "/v1/token_loss",
            {"image": image_to_wire(req.image), "context": req.context, "target": req.target},
        )
        return LossResult(
            sum_nll=float(body["sum_nll"]),
            token_count=int(body["token_count"]),
            provider_id=self.provider_id,
        )


class HttpEmbedProvider:
    def __init__(self, config: ProviderConfig, transport: Optional[httpx.BaseTransport] = None):
        self.client = WireClient(config, transport=transport)
        self.provider_id = f"http-embed:{config.model_id or config.endpoint}"

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        body = self.client.post("/v1/embed", {"texts": list(texts)})
        vectors = [np.asarray(v, dtype=np.float64) for v in body["vectors"]]
        if len(vectors) != len(texts):
            raise DimensionMismatch("provider returned wrong number of vectors")
        dims = {v.shape for v in vectors}
        if len(dims) > 1:
            raise DimensionMismatch(f"inconsistent embedding dimensions: {sorted(dims)}")
        return vectors
