"""Establish the token_loss golden file for the bundled tiny model.

The engine values are only frozen after an independent per-token check: the
same span probabilities are recomputed here with a plain softmax (exp/sum in
float64) straight off the model logits, token by token, and must agree to
1e-6 before anything is written (the naive softmax carries ~1e-8 rounding
relative to the engine's log_softmax path).

Run from backend/:  python scripts/make_golden.py
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import torch

from modelbackend.engine import LossEngine
from modelbackend.tiny import bundled_model
from modelbackend.tokenizer import BOS_ID, target_span

FIXTURES = [
    # (context, target) covering empty context, clean boundaries, a merge
    # across the context/target boundary, and out-of-vocabulary words
    ("", "the sign says open daily"),
    ("what does the sign say ", "the sign says open"),
    ("describe the image in detail ", "a red banner above the door"),
    ("the title", " reads coffee market"),
    ("where is the price", "label printed near the bottom corner"),
]


def independent_span_nll(model, tokenizer, context: str, target: str) -> list[float]:
    full_ids, span_start = target_span(tokenizer, context, target)
    inputs = [BOS_ID] + full_ids
    per_token = []
    for pos in range(span_start, len(full_ids)):
        logits = model.logits(inputs[: pos + 1])[-1].double()
        probs = torch.exp(logits)
        probs = probs / probs.sum()
        per_token.append(-math.log(float(probs[full_ids[pos]])))
    return per_token


def main() -> None:
    model, tokenizer = bundled_model()
    engine = LossEngine(model, tokenizer)
    entries = []
    for context, target in FIXTURES:
        result = engine.token_loss(context, target)
        dump = engine.token_logprob_dump(context, target)
        check = independent_span_nll(model, tokenizer, context, target)
        assert len(dump) == len(check) == result["token_count"]
        for a, b in zip(dump, check):
            assert abs(a - b) < 1e-6, f"per-token mismatch: {a} vs {b}"
        assert abs(sum(dump) - result["sum_nll"]) < 1e-10
        entries.append(
            {
                "context": context,
                "target": target,
                "sum_nll": result["sum_nll"],
                "token_count": result["token_count"],
                "per_token_nll": dump,
            }
        )
        print(f"ok  {context!r} + {target!r}  sum_nll={result['sum_nll']:.6f}"
              f"  tokens={result['token_count']}")
    out = Path(__file__).parent.parent / "tests" / "golden" / "token_loss_golden.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"model": "tiny", "fixtures": entries}, indent=2) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
