"""Bundled tiny causal language model.

A two-layer GRU LM with seeded parameter initialization: the checked-in
vocabulary plus the seed fully pin the model, so losses reproduce across
runs on the same hardware without downloading any weights.
"""

from __future__ import annotations

import torch
from torch import nn

from .tokenizer import BOS_ID, WordTokenizer

TINY_SEED = 20260101
TINY_DIM = 64
TINY_LAYERS = 2


class TinyCausalLm(nn.Module):
    def __init__(self, vocab_size: int, dim: int = TINY_DIM, layers: int = TINY_LAYERS,
                 seed: int = TINY_SEED):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, dim)
        self.rnn = nn.GRU(dim, dim, num_layers=layers, batch_first=True)
        self.head = nn.Linear(dim, vocab_size)
        self.seed = seed
        self._seeded_init(seed)
        self.eval()

    def _seeded_init(self, seed: int) -> None:
        gen = torch.Generator(device="cpu").manual_seed(seed)
        with torch.no_grad():
            for name, param in sorted(self.named_parameters()):
                param.normal_(0.0, 0.1, generator=gen)

    @torch.no_grad()
    def logits(self, ids: list[int]) -> torch.Tensor:
        """(len(ids), vocab) logits; row i conditions on ids[:i+1]."""
        x = torch.tensor([ids], dtype=torch.long)
        hidden, _ = self.rnn(self.embed(x))
        return self.head(hidden)[0]

    @torch.no_grad()
    def span_nll(self, full_ids: list[int], span_start: int) -> tuple[float, list[float]]:
        """Summed NLL of full_ids[span_start:], conditioned left-to-right.

        A BOS token is prepended, so even the first token of an empty-context
        request has a well-defined probability.
        """
        inputs = [BOS_ID] + full_ids
        logits = self.logits(inputs[:-1])  # row i predicts inputs[i+1]
        logprobs = torch.log_softmax(logits.double(), dim=-1)
        per_token = []
        for pos in range(span_start, len(full_ids)):
            per_token.append(-float(logprobs[pos, full_ids[pos]]))
        return float(sum(per_token)), per_token

    @torch.no_grad()
    def greedy_generate(self, prompt_ids: list[int], max_tokens: int,
                        temperature: float = 0.0, seed: int | None = None) -> list[int]:
        ids = [BOS_ID] + prompt_ids
        gen = None
        if temperature > 0:
            gen = torch.Generator(device="cpu").manual_seed(seed if seed is not None else 0)
        out: list[int] = []
        for _ in range(max_tokens):
            logits = self.logits(ids)[-1]
            if temperature > 0:
                probs = torch.softmax(logits.double() / temperature, dim=-1)
                nxt = int(torch.multinomial(probs, 1, generator=gen).item())
            else:
                nxt = int(torch.argmax(logits).item())
            out.append(nxt)
            ids.append(nxt)
        return out

    @torch.no_grad()
    def hidden_states(self, ids: list[int]) -> torch.Tensor:
        x = torch.tensor([[BOS_ID] + ids], dtype=torch.long)
        hidden, _ = self.rnn(self.embed(x))
        return hidden[0, 1:, :]  # drop the BOS position


def bundled_model() -> tuple[TinyCausalLm, WordTokenizer]:
    tokenizer = WordTokenizer.bundled()
    model = TinyCausalLm(tokenizer.vocab_size)
    return model, tokenizer
