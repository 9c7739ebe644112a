"""Synthetic corpora shared between unit tests and the acceptance suite."""

from __future__ import annotations

import numpy as np

from mmcurate.records import (
    DialogueTemplate,
    ImageRef,
    InstructionRecord,
    PairKind,
    QAPair,
    ScoreCard,
)

TOKEN_VOCAB = tuple(f"t{i}" for i in range(8))
TOKEN_TEMPLATE = DialogueTemplate(qa_format="{q} {a}", turn_separator=" ")


def family_a_instructions(rng: np.random.Generator, n: int) -> list[str]:
    objs = ["sign", "poster", "menu", "label", "banner", "card"]
    places = ["window", "door", "wall", "shelf", "counter", "gate"]
    return [f"what does the {rng.choice(objs)} near the {rng.choice(places)} say" for _ in range(n)]


def family_b_instructions(rng: np.random.Generator, n: int) -> list[str]:
    ideas = ["layout", "palette", "contrast", "spacing", "symmetry", "hierarchy"]
    verbs = ["improve", "affect", "define", "shape", "balance", "guide"]
    return [f"why would the {rng.choice(ideas)} {rng.choice(verbs)} the overall design" for _ in range(n)]


def make_ffd_band_corpus(
    n: int, repeat_frac: float = 0.05, unrelated_frac: float = 0.05, seed: int = 7
) -> tuple[list[InstructionRecord], dict[tuple[str, str], str]]:
    """Explain pairs in three planted populations, scored under copycat.

    normal     explain opens with the source's final token, then wanders
    repeat     explain is the source's final token repeated (over-related)
    unrelated  explain opens with a token that breaks the copy chain

    Returns the records plus (image_id, pair_id) -> population ground truth
    (pair_ids are content hashes and recur across records for repeats).
    """
    rng = np.random.default_rng(seed)
    n_repeat = int(n * repeat_frac)
    n_unrelated = int(n * unrelated_frac)
    kinds = (
        ["repeat"] * n_repeat
        + ["unrelated"] * n_unrelated
        + ["normal"] * (n - n_repeat - n_unrelated)
    )
    rng.shuffle(kinds)
    records: list[InstructionRecord] = []
    truth: dict[tuple[str, str], str] = {}
    for i, kind in enumerate(kinds):
        src_tokens = list(rng.choice(TOKEN_VOCAB, size=int(rng.integers(3, 6))))
        source = QAPair.make(
            PairKind.EXTRACTIVE, " ".join(src_tokens[:2]), " ".join(src_tokens[2:])
        )
        last = src_tokens[-1]
        if kind == "repeat":
            k = int(rng.integers(3, 8))
            q, a = last, " ".join([last] * (k - 1))
        elif kind == "unrelated":
            others = [t for t in TOKEN_VOCAB if t != last]
            toks = [str(rng.choice(others))] + list(
                rng.choice(TOKEN_VOCAB, size=int(rng.integers(5, 8)))
            )
            q, a = toks[0], " ".join(toks[1:])
        else:
            toks = [last] + list(rng.choice(TOKEN_VOCAB, size=int(rng.integers(5, 8))))
            q, a = toks[0], " ".join(toks[1:])
        explain = QAPair.make(PairKind.SELF_EXPLAIN, q, a, explains=source.pair_id)
        image_id = f"img-{i:04d}"
        truth[(image_id, explain.pair_id)] = kind
        records.append(
            InstructionRecord(
                image=ImageRef(id=image_id, uri=f"u/{i}"),
                manual_caption="c",
                pairs=(source, explain),
            )
        )
    return records, truth


def make_scored_extractive_set(n: int, seed: int = 0) -> list[tuple[str, float]]:
    """(pair_id, mifd) tuples with distinct ids and continuous scores."""
    rng = np.random.default_rng(seed)
    return [(f"p{i:05d}", float(rng.uniform(0.01, 2.0))) for i in range(n)]


def scored_record(idx: int, mifd_values, ffd_values) -> InstructionRecord:
    pairs: list[QAPair] = []
    scores: dict[str, ScoreCard] = {}
    for j, value in enumerate(mifd_values):
        pair = QAPair.make(PairKind.EXTRACTIVE, f"q {idx} {j}", f"a {idx} {j}")
        pairs.append(pair)
        scores[pair.pair_id] = ScoreCard(
            pair_id=pair.pair_id, ifd=1.0, vfd=float(value), mifd=float(value),
            provider_id="fixture", template_id="fixture",
        )
    sources = [p for p in pairs]
    for j, value in enumerate(ffd_values):
        source = sources[j % len(sources)]
        explain = QAPair.make(
            PairKind.SELF_EXPLAIN, f"eq {idx} {j}", f"ea {idx} {j}", explains=source.pair_id
        )
        pairs.append(explain)
        scores[explain.pair_id] = ScoreCard(
            pair_id=explain.pair_id, ffd=float(value), provider_id="fixture", template_id="fixture"
        )
    return InstructionRecord(
        image=ImageRef(id=f"img-{idx:04d}", uri=f"u/{idx}"),
        manual_caption="cap",
        pairs=tuple(pairs),
        scores=scores,
    )
