"""Dataset record model, dialogue serialization, and JSONL persistence.

Every pipeline stage consumes and produces ``InstructionRecord`` values.
Records are frozen dataclasses: stages never mutate a record in place, they
build updated copies, which keeps them safe to share across worker threads.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Optional

from .errors import EmptyDialogue, MalformedLine

SCHEMA_ID = "llavar2-curation/1"


class PairKind(str, Enum):
    EXTRACTIVE = "extractive"
    SELF_EXPLAIN = "self_explain"
    CAPTION = "caption"


def pair_id_for(kind: PairKind, question: str, answer: str) -> str:
    """Stable content-hash id, identical across re-runs for the same pair."""
    h = hashlib.blake2b(digest_size=8)
    for part in (kind.value, question, answer):
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


@dataclass(frozen=True)
class OcrLine:
    """One OCR detection: four bbox corner points, text, and confidence."""

    bbox: tuple[tuple[float, float], ...]
    text: str
    confidence: float

    def render(self) -> str:
        """Format as ``[[coords], text, confidence]`` for prompt payloads."""
        pts = ",".join(f"[{_fmt_num(x)},{_fmt_num(y)}]" for x, y in self.bbox)
        return f"[[{pts}], {self.text}, {_fmt_num(self.confidence)}]"


def _fmt_num(v: float) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class ImageRef:
    id: str
    uri: str
    width: Optional[int] = None
    height: Optional[int] = None


@dataclass(frozen=True)
class QAPair:
    kind: PairKind
    question: str
    answer: str
    pair_id: str
    explains: Optional[str] = None

    @classmethod
    def make(
        cls,
        kind: PairKind,
        question: str,
        answer: str,
        explains: Optional[str] = None,
    ) -> "QAPair":
        return cls(
            kind=kind,
            question=question,
            answer=answer,
            pair_id=pair_id_for(kind, question, answer),
            explains=explains,
        )


@dataclass(frozen=True)
class LossResult:
    """Summed next-token NLL (nats) over a target span."""

    sum_nll: float
    token_count: int
    provider_id: str


@dataclass(frozen=True)
class ScoreCard:
    """Difficulty scores attached to one QA pair.

    ``ifd``/``vfd``/``mifd`` are set on extractive pairs, ``ffd`` on
    self-explain pairs. ``loss_details`` keeps the raw loss queries the
    ratios were computed from, so every score is auditable. ``error`` is set
    instead of scores when scoring the pair failed.
    """

    pair_id: str
    ifd: Optional[float] = None
    vfd: Optional[float] = None
    mifd: Optional[float] = None
    ffd: Optional[float] = None
    provider_id: str = ""
    template_id: str = ""
    loss_details: dict[str, LossResult] = field(default_factory=dict)
    error: Optional[str] = None
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class ProvenanceEntry:
    generator: str
    at: str


@dataclass(frozen=True)
class InstructionRecord:
    image: Optional[ImageRef]
    manual_caption: str
    enriched_caption: Optional[str] = None
    ocr: tuple[OcrLine, ...] = ()
    pairs: tuple[QAPair, ...] = ()
    scores: dict[str, ScoreCard] = field(default_factory=dict)
    provenance: dict[str, ProvenanceEntry] = field(default_factory=dict)

    def pair_by_id(self, pair_id: str) -> Optional[QAPair]:
        for p in self.pairs:
            if p.pair_id == pair_id:
                return p
        return None

    def with_pairs(self, pairs: Iterable[QAPair]) -> "InstructionRecord":
        return replace(self, pairs=tuple(pairs))


@dataclass(frozen=True)
class DialogueTemplate:
    """How QA pairs are rendered to one string for loss scoring.

    Loss ratios are only comparable across runs that used the same template,
    so the template id is recorded on every ScoreCard.
    """

    qa_format: str = "Question: {q}\nAnswer: {a}"
    turn_separator: str = "\n"

    def __post_init__(self) -> None:
        for ph in ("{q}", "{a}"):
            if self.qa_format.count(ph) != 1:
                raise ValueError(f"qa_format must contain {ph} exactly once")

    @property
    def template_id(self) -> str:
        h = hashlib.blake2b(digest_size=4)
        h.update(self.qa_format.encode("utf-8"))
        h.update(b"\x00")
        h.update(self.turn_separator.encode("utf-8"))
        return f"qa-{h.hexdigest()}"


def serialize_dialogue(pairs: Iterable[QAPair], template: DialogueTemplate) -> str:
    """Deterministically render an ordered list of QA pairs to one string."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyDialogue("cannot serialize an empty dialogue")
    blocks = [
        template.qa_format.replace("{q}", p.question).replace("{a}", p.answer)
        for p in pairs
    ]
    return template.turn_separator.join(blocks)


# --- validation ---------------------------------------------------------------


def validate_record(record: InstructionRecord) -> list[str]:
    """Check every type invariant; returns one message per violation."""
    violations: list[str] = []

    if record.image is not None and not record.image.id:
        violations.append("image: id empty")

    for i, line in enumerate(record.ocr):
        if not (0.0 <= line.confidence <= 1.0) or math.isnan(line.confidence):
            violations.append(f"ocr[{i}]: confidence out of range")
        if len(line.bbox) != 4:
            violations.append(f"ocr[{i}]: bbox must have exactly 4 points")
        elif any(x < 0 or y < 0 for x, y in line.bbox):
            violations.append(f"ocr[{i}]: bbox has negative coordinates")

    seen_ids: set[str] = set()
    extractive_ids = {p.pair_id for p in record.pairs if p.kind is PairKind.EXTRACTIVE}
    for p in record.pairs:
        label = f"pair {p.pair_id}"
        if p.pair_id in seen_ids:
            violations.append(f"{label}: duplicate pair_id")
        seen_ids.add(p.pair_id)
        if not p.question.strip():
            violations.append(f"{label}: question empty")
        if not p.answer.strip():
            violations.append(f"{label}: answer empty")
        if p.kind is PairKind.SELF_EXPLAIN:
            if p.explains is None:
                violations.append(f"{label}: explains unset")
            elif p.explains not in extractive_ids:
                violations.append(f"{label}: explains references no extractive pair")
        elif p.explains is not None:
            violations.append(f"{label}: explains set on non-self-explain pair")

    return violations


# --- JSON (de)serialization -----------------------------------------------------


def record_to_dict(record: InstructionRecord) -> dict[str, Any]:
    return {
        "schema": SCHEMA_ID,
        "image": None
        if record.image is None
        else {
            "id": record.image.id,
            "uri": record.image.uri,
            "width": record.image.width,
            "height": record.image.height,
        },
        "manual_caption": record.manual_caption,
        "enriched_caption": record.enriched_caption,
        "ocr": [
            {"bbox": [list(pt) for pt in o.bbox], "text": o.text, "confidence": o.confidence}
            for o in record.ocr
        ],
        "pairs": [
            {
                "kind": p.kind.value,
                "question": p.question,
                "answer": p.answer,
                "pair_id": p.pair_id,
                "explains": p.explains,
            }
            for p in record.pairs
        ],
        "scores": {pid: scorecard_to_dict(sc) for pid, sc in record.scores.items()},
        "provenance": {
            stage: {"generator": e.generator, "at": e.at}
            for stage, e in record.provenance.items()
        },
    }


def scorecard_to_dict(sc: ScoreCard) -> dict[str, Any]:
    return {
        "pair_id": sc.pair_id,
        "ifd": sc.ifd,
        "vfd": sc.vfd,
        "mifd": sc.mifd,
        "ffd": sc.ffd,
        "provider_id": sc.provider_id,
        "template_id": sc.template_id,
        "loss_details": {
            k: {"sum_nll": lr.sum_nll, "token_count": lr.token_count, "provider_id": lr.provider_id}
            for k, lr in sc.loss_details.items()
        },
        "error": sc.error,
        "notes": list(sc.notes),
    }


def scorecard_from_dict(d: dict[str, Any]) -> ScoreCard:
    return ScoreCard(
        pair_id=d["pair_id"],
        ifd=d.get("ifd"),
        vfd=d.get("vfd"),
        mifd=d.get("mifd"),
        ffd=d.get("ffd"),
        provider_id=d.get("provider_id", ""),
        template_id=d.get("template_id", ""),
        loss_details={
            k: LossResult(v["sum_nll"], v["token_count"], v.get("provider_id", ""))
            for k, v in d.get("loss_details", {}).items()
        },
        error=d.get("error"),
        notes=tuple(d.get("notes", ())),
    )


def record_from_dict(d: dict[str, Any]) -> InstructionRecord:
    img = d.get("image")
    return InstructionRecord(
        image=None
        if img is None
        else ImageRef(
            id=img["id"], uri=img["uri"], width=img.get("width"), height=img.get("height")
        ),
        manual_caption=d["manual_caption"],
        enriched_caption=d.get("enriched_caption"),
        ocr=tuple(
            OcrLine(
                bbox=tuple((float(x), float(y)) for x, y in o["bbox"]),
                text=o["text"],
                confidence=float(o["confidence"]),
            )
            for o in d.get("ocr", ())
        ),
        pairs=tuple(
            QAPair(
                kind=PairKind(p["kind"]),
                question=p["question"],
                answer=p["answer"],
                pair_id=p["pair_id"],
                explains=p.get("explains"),
            )
            for p in d.get("pairs", ())
        ),
        scores={pid: scorecard_from_dict(sd) for pid, sd in d.get("scores", {}).items()},
        provenance={
            stage: ProvenanceEntry(generator=e["generator"], at=e["at"])
            for stage, e in d.get("provenance", {}).items()
        },
    )


def dumps_record(record: InstructionRecord) -> str:
    return json.dumps(record_to_dict(record), ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def read_jsonl(
    path: str | Path,
    strict: bool = True,
    on_error: Optional[Callable[[MalformedLine], None]] = None,
) -> Iterator[InstructionRecord]:
    """Stream records from a JSONL file, one record per line.

    Strict mode (default) aborts on the first malformed line. Lenient mode
    skips malformed lines, reporting each through ``on_error``.
    """
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                record = record_from_dict(data)
            except MalformedLine:
                raise
            except Exception as exc:
                err = MalformedLine(line_no, line.rstrip("\n"), reason=str(exc))
                if strict:
                    raise err from exc
                if on_error is not None:
                    on_error(err)
                continue
            yield record


def write_jsonl(records: Iterable[InstructionRecord], path: str | Path) -> int:
    """Write records one per line; returns the number written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(dumps_record(record))
            fh.write("\n")
            count += 1
    return count
