"""Word-level tokenizer for the bundled tiny model.

Lowercased whitespace tokens over a fixed vocabulary file; out-of-vocabulary
words map to <unk>. Ids 0 and 1 are reserved for <bos> and <unk>.
"""

from __future__ import annotations

from importlib import resources

BOS_ID = 0
UNK_ID = 1


class WordTokenizer:
    def __init__(self, words: list[str]):
        self.words = list(words)
        self.index = {w: i + 2 for i, w in enumerate(self.words)}
        self.vocab_size = len(self.words) + 2

    @classmethod
    def bundled(cls) -> "WordTokenizer":
        raw = resources.files("modelbackend.assets").joinpath("tiny_vocab.txt").read_text("utf-8")
        return cls([w for w in raw.split() if w])

    def encode(self, text: str) -> list[int]:
        return [self.index.get(tok, UNK_ID) for tok in text.lower().split()]

    def decode(self, ids: list[int]) -> str:
        out = []
        for i in ids:
            if i == BOS_ID:
                continue
            if i == UNK_ID:
                out.append("<unk>")
            else:
                out.append(self.words[i - 2])
        return " ".join(out)


def target_span(tokenizer: WordTokenizer, context: str, target: str) -> tuple[list[int], int]:
    """Token ids of context+target and the index where the target span starts.

    The span is found by tokenizing ``context`` and ``context + target`` and
    taking everything after their longest common prefix, so a token that
    merges across the boundary is attributed to the target.
    """
    ctx_ids = tokenizer.encode(context)
    full_ids = tokenizer.encode(context + target)
    prefix = 0
    for a, b in zip(ctx_ids, full_ids):
        if a != b:
            break
        prefix += 1
    return full_ids, prefix
