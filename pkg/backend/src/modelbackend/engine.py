"""Model engines behind the three wire-protocol roles.

Model ids:
  "tiny"           the bundled seeded GRU language model (default; no
                   downloads, reproducible on the same hardware)
  "hf:<model_id>"  any causal LM loadable through transformers from the
                   local cache (lazy import; text only unless the loaded
                   model exposes image inputs)

Model access is serialized with a per-engine lock: FastAPI handlers run in a
thread pool, the models are not thread-safe.
"""

from __future__ import annotations

import threading
from typing import Optional

import numpy as np
import torch

from .tiny import TinyCausalLm, bundled_model
from .tokenizer import WordTokenizer, target_span


class EmptyTargetError(ValueError):
    pass


class ImageUnsupportedError(ValueError):
    pass


class LossEngine:
    """Summed next-token NLL over the target span (tokenize-and-diff rule)."""

    def __init__(self, model: TinyCausalLm, tokenizer: WordTokenizer, model_id: str = "tiny"):
        self.model = model
        self.tokenizer = tokenizer
        self.model_id = model_id
        self.supports_images = False
        self._lock = threading.Lock()

    def token_loss(self, context: str, target: str, image: Optional[dict] = None) -> dict:
        if image is not None and not self.supports_images:
            raise ImageUnsupportedError("loss model is text-only")
        full_ids, span_start = target_span(self.tokenizer, context, target)
        if span_start >= len(full_ids):
            raise EmptyTargetError("target contributes no tokens")
        with self._lock:
            sum_nll, per_token = self.model.span_nll(full_ids, span_start)
        return {
            "sum_nll": sum_nll,
            "token_count": len(per_token),
        }

    def token_logprob_dump(self, context: str, target: str) -> list[float]:
        """Per-token NLLs for golden-file verification."""
        full_ids, span_start = target_span(self.tokenizer, context, target)
        if span_start >= len(full_ids):
            raise EmptyTargetError("target contributes no tokens")
        with self._lock:
            _, per_token = self.model.span_nll(full_ids, span_start)
        return per_token


class ChatEngine:
    def __init__(self, model: TinyCausalLm, tokenizer: WordTokenizer, model_id: str = "tiny"):
        self.model = model
        self.tokenizer = tokenizer
        self.model_id = model_id
        self._lock = threading.Lock()

    def chat(self, messages: list[dict], temperature: float, max_tokens: int,
             seed: Optional[int]) -> str:
        prompt = "\n".join(f"{m['role']}: {m['content']}" for m in messages) + "\nassistant:"
        ids = self.tokenizer.encode(prompt)
        with self._lock:
            out = self.model.greedy_generate(
                ids, max_tokens=min(max_tokens, 128), temperature=temperature, seed=seed
            )
        return self.tokenizer.decode(out)


class EmbedEngine:
    def __init__(self, model: TinyCausalLm, tokenizer: WordTokenizer, model_id: str = "tiny",
                 normalize: bool = True, max_batch: int = 64):
        self.model = model
        self.tokenizer = tokenizer
        self.model_id = model_id
        self.normalize = normalize
        self.max_batch = max_batch
        self._lock = threading.Lock()

    def embed(self, texts: list[str]) -> list[list[float]]:
        out: list[list[float]] = []
        for start in range(0, len(texts), self.max_batch):
            for text in texts[start : start + self.max_batch]:
                ids = self.tokenizer.encode(text)
                with self._lock:
                    hidden = self.model.hidden_states(ids if ids else [1])
                vec = hidden.mean(dim=0).double().numpy()
                if self.normalize:
                    norm = np.linalg.norm(vec)
                    if norm > 0:
                        vec = vec / norm
                out.append([float(v) for v in vec])
        return out


def _load_hf_loss_engine(model_id: str) -> "HfLossEngine":
    return HfLossEngine(model_id)


class HfLossEngine:
    """Token loss over a transformers causal LM from the local cache."""

    def __init__(self, model_id: str):
        from transformers import AutoModelForCausalLM, AutoTokenizer  # lazy; optional dep

        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModelForCausalLM.from_pretrained(model_id)
        self.model.eval()
        self.model_id = model_id
        self.supports_images = False
        self._lock = threading.Lock()

    def token_loss(self, context: str, target: str, image: Optional[dict] = None) -> dict:
        if image is not None:
            raise ImageUnsupportedError("loss model is text-only")
        ctx_ids = self.tokenizer.encode(context, add_special_tokens=False)
        full_ids = self.tokenizer.encode(context + target, add_special_tokens=False)
        prefix = 0
        for a, b in zip(ctx_ids, full_ids):
            if a != b:
                break
            prefix += 1
        if prefix >= len(full_ids):
            raise EmptyTargetError("target contributes no tokens")
        bos = self.tokenizer.bos_token_id
        inputs = ([bos] if bos is not None else []) + full_ids
        offset = 1 if bos is not None else 0
        with self._lock, torch.no_grad():
            logits = self.model(torch.tensor([inputs])).logits[0]
        logprobs = torch.log_softmax(logits.double(), dim=-1)
        total = 0.0
        count = 0
        for pos in range(max(prefix, 1 - offset), len(full_ids)):
            # row (pos + offset - 1) predicts token full_ids[pos]
            total += -float(logprobs[pos + offset - 1, full_ids[pos]])
            count += 1
        if count == 0:
            raise EmptyTargetError("target span empty after boundary diff")
        return {"sum_nll": total, "token_count": count}


def build_engines(config) -> dict:
    """Instantiate the configured role engines; shares the tiny model."""
    tiny_cache: dict[str, tuple] = {}

    def tiny() -> tuple:
        if "m" not in tiny_cache:
            tiny_cache["m"] = bundled_model()
        return tiny_cache["m"]

    engines: dict = {}
    if config.loss_model:
        if config.loss_model == "tiny":
            model, tok = tiny()
            engines["loss"] = LossEngine(model, tok)
        elif config.loss_model.startswith("hf:"):
            engines["loss"] = _load_hf_loss_engine(config.loss_model[3:])
        else:
            raise ValueError(f"unknown loss model {config.loss_model!r}")
    if config.chat_model:
        if config.chat_model != "tiny":
            raise ValueError(f"unknown chat model {config.chat_model!r}")
        model, tok = tiny()
        engines["chat"] = ChatEngine(model, tok)
    if config.embed_model:
        if config.embed_model != "tiny":
            raise ValueError(f"unknown embed model {config.embed_model!r}")
        model, tok = tiny()
        engines["embed"] = EmbedEngine(
            model, tok, normalize=config.normalize_embeddings, max_batch=config.max_batch
        )
    if not engines:
        raise ValueError("at least one of chat/loss/embed must be configured")
    return engines
