"""IFD / VFD / mIFD / FFD difficulty scores from token-loss ratios.

All four scores are ratios of summed next-token NLL:

  ifd(Q, A)            = s(A | Q) / s(A)
  vfd(dialogue, image) = s(dialogue | image) / s(dialogue)
  mifd                 = vfd * ifd
  ffd(explain, source) = s(explain | source, image) / s(explain | image)

``s`` is the sum (not mean) of per-token NLL, so ratios are tokenization
dependent; the dialogue template id is recorded with every score. Dialogues
are scored as one jointly serialized string.
"""

from __future__ import annotations

import csv
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

from .errors import CurationError, ImageUnsupported, PairMismatch, WrongPairKind, ZeroDenominator
from .providers import LossProvider, LossRequest
from .records import (
    DialogueTemplate,
    ImageRef,
    InstructionRecord,
    LossResult,
    PairKind,
    QAPair,
    ScoreCard,
    scorecard_from_dict,
    scorecard_to_dict,
    serialize_dialogue,
)

_DENOMINATOR_FLOOR = 1e-12


def _ratio(num: LossResult, den: LossResult) -> float:
    if den.sum_nll < _DENOMINATOR_FLOOR:
        raise ZeroDenominator(
            f"denominator loss {den.sum_nll!r} below {_DENOMINATOR_FLOOR}"
        )
    return num.sum_nll / den.sum_nll


def ifd(question: str, answer: str, provider: LossProvider) -> float:
    """Instruction-following difficulty: s(A|Q) / s(A)."""
    num = provider.token_loss(LossRequest(target=answer, context=question))
    den = provider.token_loss(LossRequest(target=answer, context=""))
    return _ratio(num, den)


def vfd(dialogue: str, image: Optional[ImageRef], provider: LossProvider) -> float:
    """Visual-following difficulty: s(dialogue|image) / s(dialogue)."""
    if image is None or not provider.supports_images:
        raise ImageUnsupported("vfd requires an image and an image-capable provider")
    num = provider.token_loss(LossRequest(target=dialogue, context="", image=image))
    den = provider.token_loss(LossRequest(target=dialogue, context="", image=None))
    return _ratio(num, den)


def ffd(
    explain: QAPair,
    source: QAPair,
    image: Optional[ImageRef],
    provider: LossProvider,
    template: DialogueTemplate = DialogueTemplate(),
    allow_text_only: bool = False,
) -> float:
    """Fact-following difficulty of a self-explain pair given its source pair."""
    card = ffd_scorecard(explain, source, image, provider, template, allow_text_only)
    if card.ffd is None:
        raise CurationError(card.error or "ffd unavailable")
    return card.ffd


def mifd(
    pair: QAPair,
    image: Optional[ImageRef],
    provider: LossProvider,
    template: DialogueTemplate = DialogueTemplate(),
) -> ScoreCard:
    """Score one extractive pair: ifd, vfd, and their product mifd."""
    if pair.kind is not PairKind.EXTRACTIVE:
        raise WrongPairKind(f"mifd is defined on extractive pairs, got {pair.kind.value}")
    if image is None or not provider.supports_images:
        raise ImageUnsupported("mifd requires an image and an image-capable provider")

    answer_given_q = provider.token_loss(LossRequest(target=pair.answer, context=pair.question))
    answer_alone = provider.token_loss(LossRequest(target=pair.answer, context=""))
    dialogue = serialize_dialogue([pair], template)
    dialogue_given_image = provider.token_loss(
        LossRequest(target=dialogue, context="", image=image)
    )
    dialogue_alone = provider.token_loss(LossRequest(target=dialogue, context="", image=None))

    ifd_value = _ratio(answer_given_q, answer_alone)
    vfd_value = _ratio(dialogue_given_image, dialogue_alone)
    return ScoreCard(
        pair_id=pair.pair_id,
        ifd=ifd_value,
        vfd=vfd_value,
        mifd=vfd_value * ifd_value,
        provider_id=provider.provider_id,
        template_id=template.template_id,
        loss_details={
            "answer_given_question": answer_given_q,
            "answer": answer_alone,
            "dialogue_given_image": dialogue_given_image,
            "dialogue": dialogue_alone,
        },
    )


def ffd_scorecard(
    explain: QAPair,
    source: QAPair,
    image: Optional[ImageRef],
    provider: LossProvider,
    template: DialogueTemplate = DialogueTemplate(),
    allow_text_only: bool = False,
) -> ScoreCard:
    if explain.kind is not PairKind.SELF_EXPLAIN:
        raise WrongPairKind(f"ffd is defined on self-explain pairs, got {explain.kind.value}")
    if explain.explains != source.pair_id:
        raise PairMismatch(
            f"explain {explain.pair_id} references {explain.explains}, not {source.pair_id}"
        )
    notes: tuple[str, ...] = ()
    cond_image = image
    if image is None or not provider.supports_images:
        if not allow_text_only:
            raise ImageUnsupported("ffd conditions on the image; no image available")
        cond_image = None
        notes = ("ffd-text-only",)  # non-canonical: both sides scored without the image

    explain_text = serialize_dialogue([explain], template)
    source_text = serialize_dialogue([source], template)
    num = provider.token_loss(
        LossRequest(target=explain_text, context=source_text, image=cond_image)
    )
    den = provider.token_loss(LossRequest(target=explain_text, context="", image=cond_image))
    return ScoreCard(
        pair_id=explain.pair_id,
        ffd=_ratio(num, den),
        provider_id=provider.provider_id,
        template_id=template.template_id,
        loss_details={"explain_given_source": num, "explain": den},
        notes=notes,
    )


# --- dataset-level scoring --------------------------------------------------------


@dataclass
class ScoreReport:
    records: list[InstructionRecord]
    failures: list[tuple[str, str, str]]  # (image_id, pair_id, error)

    @property
    def failed_pair_ids(self) -> list[str]:
        return [pid for _, pid, _ in self.failures]


def _record_key(record: InstructionRecord, index: int) -> str:
    return record.image.id if record.image is not None else f"record-{index}"


def score_dataset(
    records: Iterable[InstructionRecord],
    provider: LossProvider,
    template: DialogueTemplate = DialogueTemplate(),
    parallelism: int = 1,
    checkpoint_path: Optional[str | Path] = None,
    allow_text_only_ffd: bool = False,
) -> ScoreReport:
    """Attach a ScoreCard to every scoreable pair.

    Extractive pairs get ifd/vfd/mifd, self-explain pairs get ffd; caption
    pairs are not scored. Failures are recorded on the pair (error card) and
    in the report, never dropped. With a checkpoint path, already-scored
    pairs are skipped on resume and results merge deterministically.
    """
    records = list(records)
    done: dict[tuple[str, str], ScoreCard] = {}
    if checkpoint_path is not None and Path(checkpoint_path).exists():
        with open(checkpoint_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                done[(entry["record_key"], entry["pair_id"])] = scorecard_from_dict(entry["card"])

    tasks = []
    for idx, record in enumerate(records):
        key = _record_key(record, idx)
        by_id = {p.pair_id: p for p in record.pairs}
        for pair in record.pairs:
            if pair.kind is PairKind.CAPTION or (key, pair.pair_id) in done:
                continue
            source = by_id.get(pair.explains) if pair.explains else None
            tasks.append((key, record, pair, source))

    lock = threading.Lock()
    ckpt_fh = open(checkpoint_path, "a", encoding="utf-8") if checkpoint_path else None

    def run_task(task) -> tuple[str, str, ScoreCard]:
        key, record, pair, source = task
        try:
            if pair.kind is PairKind.EXTRACTIVE:
                card = mifd(pair, record.image, provider, template)
            else:
                if source is None:
                    raise PairMismatch(f"explain {pair.pair_id} has no source pair in record")
                card = ffd_scorecard(
                    pair, source, record.image, provider, template, allow_text_only_ffd
                )
        except CurationError as exc:
            card = ScoreCard(
                pair_id=pair.pair_id,
                provider_id=provider.provider_id,
                template_id=template.template_id,
                error=f"{type(exc).__name__}: {exc}",
            )
        if ckpt_fh is not None:
            line = json.dumps(
                {"record_key": key, "pair_id": pair.pair_id, "card": scorecard_to_dict(card)},
                ensure_ascii=False,
                sort_keys=True,
            )
            with lock:
                ckpt_fh.write(line + "\n")
                ckpt_fh.flush()
        return key, pair.pair_id, card

    try:
        if parallelism > 1 and tasks:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                results = list(pool.map(run_task, tasks))
        else:
            results = [run_task(t) for t in tasks]
    finally:
        if ckpt_fh is not None:
            ckpt_fh.close()

    for key, pid, card in results:
        done[(key, pid)] = card

    out_records: list[InstructionRecord] = []
    failures: list[tuple[str, str, str]] = []
    for idx, record in enumerate(records):
        key = _record_key(record, idx)
        scores = dict(record.scores)
        for pair in record.pairs:
            card = done.get((key, pair.pair_id))
            if card is None:
                continue
            scores[pair.pair_id] = card
            if card.error is not None:
                failures.append((key, pair.pair_id, card.error))
        out_records.append(replace(record, scores=scores))
    failures.sort()
    return ScoreReport(records=out_records, failures=failures)


# --- distribution export -----------------------------------------------------------


def collect_scores(records: Iterable[InstructionRecord], metric: str) -> list[float]:
    values = []
    for record in records:
        for card in record.scores.values():
            v = getattr(card, metric, None)
            if v is not None:
                values.append(v)
    return values


def histogram_bins(
    values: list[float], bins: int = 40, value_range: Optional[tuple[float, float]] = None
) -> list[tuple[float, float, int]]:
    """Equal-width bins as (lo, hi, count); the last bin includes its upper edge."""
    if not values:
        return []
    lo, hi = value_range if value_range else (min(values), max(values))
    if hi <= lo:
        return [(lo, hi, len(values))]
    width = (hi - lo) / bins
    counts = [0] * bins
    for v in values:
        idx = min(int((v - lo) / width), bins - 1)
        if 0 <= idx < bins:
            counts[idx] += 1
    return [(lo + i * width, lo + (i + 1) * width, counts[i]) for i in range(bins)]


def write_distribution_csv(
    records: Iterable[InstructionRecord],
    metric: str,
    path: str | Path,
    bins: int = 40,
) -> int:
    """Export one metric's score distribution for external plotting."""
    values = collect_scores(records, metric)
    rows = histogram_bins(values, bins=bins)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, count in rows:
            writer.writerow([f"{lo:.6g}", f"{hi:.6g}", count])
    return len(values)


def validate_scorecard(card: ScoreCard, kind: PairKind) -> list[str]:
    """Invariant checks used by tests and the filter stage preconditions."""
    problems = []
    if card.error is not None:
        if any(v is not None for v in (card.ifd, card.vfd, card.mifd, card.ffd)):
            problems.append("error card must not carry scores")
        return problems
    if kind is PairKind.EXTRACTIVE:
        if card.ffd is not None:
            problems.append("ffd set on an extractive pair")
        if card.ifd is not None and card.vfd is not None and card.mifd is not None:
            expected = card.vfd * card.ifd
            denom = max(abs(expected), 1e-300)
            if abs(card.mifd - expected) / denom > 1e-12:
                problems.append("mifd != vfd * ifd")
        else:
            problems.append("extractive card missing ifd/vfd/mifd")
    elif kind is PairKind.SELF_EXPLAIN:
        if card.ffd is None:
            problems.append("self-explain card missing ffd")
        if any(v is not None for v in (card.ifd, card.vfd, card.mifd)):
            problems.append("ifd/vfd/mifd set on a self-explain pair")
    return problems
