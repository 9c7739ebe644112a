"""Independent brute-force oracles the implementation is checked against.

The mock-LM oracle builds the full next-token probability table for every
conditioning case by explicit enumeration (asserting each table normalizes),
then walks the target accumulating -log p. It deliberately shares no code
with the provider implementation.
"""

from __future__ import annotations

import math
from typing import Optional


def _tables_for(spec) -> dict:
    """Enumerate every conditional distribution the mock can be in.

    Keys: ("uniform",), ("prev", tok), ("bag", frozenset). Values are full
    token->probability dicts.
    """
    vocab = list(spec.vocab)
    v = len(vocab)
    tables: dict = {("uniform",): {tok: 1.0 / v for tok in vocab}}
    if spec.mode == "copycat":
        for prev in vocab:
            table = {}
            for tok in vocab:
                if tok == prev:
                    table[tok] = spec.p_repeat
                else:
                    table[tok] = (1.0 - spec.p_repeat) / (v - 1)
            tables[("prev", prev)] = table
    if spec.mode == "imagebag":
        bags = set()
        if spec.default_bag:
            bags.add(frozenset(spec.default_bag))
        for bag in spec.image_bags.values():
            bags.add(frozenset(bag))
        for bag in bags:
            table = {}
            for tok in vocab:
                if tok in bag:
                    table[tok] = spec.p_inbag / len(bag)
                else:
                    table[tok] = (1.0 - spec.p_inbag) / (v - len(bag))
            tables[("bag", bag)] = table
    for key, table in tables.items():
        total = sum(table.values())
        assert abs(total - 1.0) < 1e-12, f"table {key} sums to {total}"
    return tables


def _resolve_bag(spec, image_id: Optional[str]) -> Optional[frozenset]:
    if image_id is None:
        return None
    bag = spec.image_bags.get(image_id, spec.default_bag)
    return frozenset(bag) if bag else None


def oracle_sum_nll(spec, context: str, target: str, image_id: Optional[str] = None) -> float:
    """Walk the probability tables; independent of the provider code path."""
    tables = _tables_for(spec)
    bag = _resolve_bag(spec, image_id)
    ctx = context.split()
    tgt = target.split()
    assert tgt, "oracle needs a non-empty target"
    total = 0.0
    stream = ctx + tgt
    for pos in range(len(ctx), len(stream)):
        tok = stream[pos]
        prev = stream[pos - 1] if pos > 0 else None
        if spec.mode == "copycat" and prev is not None:
            table = tables[("prev", prev)]
        elif spec.mode == "imagebag" and bag is not None:
            table = tables[("bag", bag)]
        else:
            table = tables[("uniform",)]
        total += -math.log(table[tok])
    return total


def oracle_ifd(spec, question: str, answer: str) -> float:
    return oracle_sum_nll(spec, question, answer) / oracle_sum_nll(spec, "", answer)


def oracle_vfd(spec, dialogue: str, image_id: str) -> float:
    return oracle_sum_nll(spec, "", dialogue, image_id) / oracle_sum_nll(spec, "", dialogue)


def oracle_mifd(spec, question: str, answer: str, dialogue: str, image_id: str) -> float:
    return oracle_vfd(spec, dialogue, image_id) * oracle_ifd(spec, question, answer)


def oracle_ffd(spec, source_text: str, explain_text: str, image_id: Optional[str]) -> float:
    num = oracle_sum_nll(spec, source_text, explain_text, image_id)
    den = oracle_sum_nll(spec, "", explain_text, image_id)
    return num / den


# --- naive recount oracle for dataset statistics --------------------------------


def recount_words(text: str) -> int:
    count = 0
    in_word = False
    for ch in text:
        if ch.isspace():
            in_word = False
        elif not in_word:
            count += 1
            in_word = True
    return count


def recount_mean(lengths: list[int]) -> Optional[float]:
    if not lengths:
        return None
    return sum(lengths) / len(lengths)
