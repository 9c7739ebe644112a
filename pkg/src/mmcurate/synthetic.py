"""Deterministic synthetic fixture corpora.

The lexicon is closed on purpose: everything the synthetic chat provider can
emit (and everything the dialogue template adds) is inside MOCK_VOCAB, so
the closed-vocabulary mock loss providers can score a full pipeline run.
"""

from __future__ import annotations

import numpy as np

from .records import ImageRef, InstructionRecord, OcrLine, PairKind, QAPair

# Words usable in captions, OCR text, and generated QA content.
WORDS = (
    "sign", "poster", "banner", "label", "menu", "badge", "board", "card",
    "title", "price", "name", "logo", "date", "street", "window", "shelf",
    "door", "wall", "table", "cover", "red", "blue", "green", "large",
    "small", "open", "daily", "sale", "fresh", "coffee", "market", "museum",
    "station", "library", "garden", "bakery", "hotel", "cinema", "harbor",
    "gallery",
)

# Connectives and question words the synthetic chat provider may add.
GLUE = (
    "the", "a", "it", "also", "shows", "text", "and", "near", "on", "in",
    "of", "top", "bottom", "left", "right", "edge", "corner", "says", "is",
    "what", "where", "how", "which", "why", "that", "answer", "found",
    "come", "from", "image", "this", "are", "words", "appear", "nothing",
    "no", "does", "say",
)

# Tokens the default dialogue template contributes when pairs are serialized.
TEMPLATE_TOKENS = ("Question:", "Answer:")

MOCK_VOCAB: tuple[str, ...] = tuple(dict.fromkeys(WORDS + GLUE + TEMPLATE_TOKENS))


def make_corpus(n_records: int, seed: int = 0, with_pairs: bool = False) -> list[InstructionRecord]:
    """Build n image records with captions and OCR (QA pairs optional)."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_records):
        n_ocr = int(rng.integers(2, 5))
        ocr = []
        for j in range(n_ocr):
            x0, y0 = int(rng.integers(0, 400)), int(rng.integers(0, 300))
            w, h = int(rng.integers(20, 200)), int(rng.integers(10, 40))
            text = " ".join(rng.choice(WORDS, size=int(rng.integers(1, 4)), replace=False))
            ocr.append(
                OcrLine(
                    bbox=((x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)),
                    text=text,
                    confidence=float(np.round(rng.uniform(0.55, 1.0), 2)),
                )
            )
        caption_words = rng.choice(WORDS, size=int(rng.integers(6, 12)), replace=True)
        caption = "a " + " ".join(caption_words)
        record = InstructionRecord(
            image=ImageRef(id=f"img-{i:04d}", uri=f"images/img-{i:04d}.png", width=640, height=480),
            manual_caption=caption,
            ocr=tuple(ocr),
        )
        if with_pairs:
            record = record.with_pairs(_pairs_for(rng, ocr))
        records.append(record)
    return records


def _pairs_for(rng: np.random.Generator, ocr: list[OcrLine]) -> list[QAPair]:
    pairs: list[QAPair] = []
    for line in ocr[:2]:
        q = f"what does the {rng.choice(WORDS[:8])} say"
        a = f"it says {line.text}"
        extractive = QAPair.make(PairKind.EXTRACTIVE, q, a)
        pairs.append(extractive)
        explain = QAPair.make(
            PairKind.SELF_EXPLAIN,
            "where is that answer found",
            f"the words {line.text} appear near the top edge",
            explains=extractive.pair_id,
        )
        pairs.append(explain)
    return pairs


def random_token_text(rng: np.random.Generator, vocab: tuple[str, ...], length: int) -> str:
    return " ".join(rng.choice(vocab, size=length, replace=True))
