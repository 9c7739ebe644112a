"""Prompt assembly for the three generation stages, and generation parsing.

System messages ship as verbatim text assets under ``assets/``; a checksum
test pins them. Assembly is pure: the same record and demonstrations always
produce a byte-identical bundle, so bundles can be built in parallel workers.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from .errors import MissingCaption, MissingOcr, ParseFailure, WrongPairKind
from .records import ImageRef, InstructionRecord, PairKind, QAPair


class Stage(str, Enum):
    CAPTION_ENRICH = "caption_enrich"
    EXTRACTIVE_GEN = "extractive_gen"
    SELF_EXPLAIN_GEN = "self_explain_gen"


_SYSTEM_ASSETS = {
    Stage.CAPTION_ENRICH: "caption_enrich_system.txt",
    Stage.EXTRACTIVE_GEN: "extractive_gen_system.txt",
    Stage.SELF_EXPLAIN_GEN: "selfexplain_gen_system.txt",
}

# Questions used to pair an enriched caption into a single-round caption QA.
CAPTION_QUESTIONS = (
    "Describe the image in detail.",
    "What is going on in this image? Describe it thoroughly.",
    "Give a detailed description of everything visible in the image.",
    "Provide a comprehensive summary of the image, including any text it contains.",
)


def system_message(stage: Stage) -> str:
    return resources.files("mmcurate.assets").joinpath(_SYSTEM_ASSETS[stage]).read_text("utf-8")


def asset_checksum(stage: Stage) -> str:
    raw = resources.files("mmcurate.assets").joinpath(_SYSTEM_ASSETS[stage]).read_bytes()
    return hashlib.sha256(raw).hexdigest()


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str
    image_attached: bool = False
    image: Optional[ImageRef] = None  # the attached image's reference, when known


@dataclass(frozen=True)
class PromptBundle:
    stage: Stage
    messages: tuple[Message, ...]

    def __post_init__(self) -> None:
        if not self.messages or self.messages[0].role != "system":
            raise ValueError("bundle must start with a system message")
        if sum(1 for m in self.messages if m.role == "system") != 1:
            raise ValueError("bundle must contain exactly one system message")
        if sum(1 for m in self.messages if m.image_attached) != 1:
            raise ValueError("bundle must attach the image exactly once")


@dataclass(frozen=True)
class Demonstration:
    caption: str
    ocr_text: str
    target_output: str

    def __post_init__(self) -> None:
        if not (self.caption and self.ocr_text and self.target_output):
            raise ValueError("demonstration fields must be non-empty")


def load_demonstrations(path: Optional[str | Path] = None) -> list[Demonstration]:
    """Load in-context demonstrations from a JSONL fixtures file.

    Falls back to the placeholder demonstrations shipped with the package.
    """
    if path is None:
        raw = resources.files("mmcurate.assets").joinpath("demonstrations.jsonl").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    demos = []
    for line in raw.splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        demos.append(Demonstration(d["caption"], d["ocr_text"], d["target_output"]))
    return demos


def _require_caption_and_ocr(record: InstructionRecord) -> None:
    if not record.manual_caption.strip():
        raise MissingCaption("record has no manual caption")
    if not record.ocr:
        raise MissingOcr("record has no OCR lines")


def render_ocr(record: InstructionRecord) -> str:
    return "\n".join(line.render() for line in record.ocr)


def _record_payload(record: InstructionRecord) -> str:
    return f"Image caption:\n{record.manual_caption}\n\nOCR result:\n{render_ocr(record)}"


def build_caption_enrichment(record: InstructionRecord) -> PromptBundle:
    _require_caption_and_ocr(record)
    return PromptBundle(
        stage=Stage.CAPTION_ENRICH,
        messages=(
            Message("system", system_message(Stage.CAPTION_ENRICH)),
            Message("user", _record_payload(record), image_attached=True, image=record.image),
        ),
    )


def build_extractive_gen(
    record: InstructionRecord, demos: list[Demonstration]
) -> PromptBundle:
    """Demonstrations become user/assistant turn pairs ahead of the target.

    Demo turns are text-only; the image rides on the target user turn.
    """
    _require_caption_and_ocr(record)
    messages = [Message("system", system_message(Stage.EXTRACTIVE_GEN))]
    for demo in demos:
        messages.append(
            Message("user", f"Image caption:\n{demo.caption}\n\nOCR result:\n{demo.ocr_text}")
        )
        messages.append(Message("assistant", demo.target_output))
    messages.append(
        Message("user", _record_payload(record), image_attached=True, image=record.image)
    )
    return PromptBundle(stage=Stage.EXTRACTIVE_GEN, messages=tuple(messages))


def build_selfexplain_gen(record: InstructionRecord, extractive_pair: QAPair) -> PromptBundle:
    if extractive_pair.kind is not PairKind.EXTRACTIVE:
        raise WrongPairKind(f"expected an extractive pair, got {extractive_pair.kind.value}")
    if record.pair_by_id(extractive_pair.pair_id) is None:
        raise WrongPairKind("extractive pair does not belong to the record")
    _require_caption_and_ocr(record)
    payload = (
        f"{_record_payload(record)}\n\n"
        "Reference QA:\n"
        f"Question: {extractive_pair.question}\nAnswer: {extractive_pair.answer}"
    )
    return PromptBundle(
        stage=Stage.SELF_EXPLAIN_GEN,
        messages=(
            Message("system", system_message(Stage.SELF_EXPLAIN_GEN)),
            Message("user", payload, image_attached=True, image=record.image),
        ),
    )


# --- generation parsing ---------------------------------------------------------

# Marker lines tolerate numbered prefixes: "Q1:", "1. Question:", "Answer 2:".
_QUESTION_RE = re.compile(
    r"^\s*(?:\d+[\.\)]\s*)?(?:question|q)\s*\d*\s*:\s*(.*)$", re.IGNORECASE
)
_ANSWER_RE = re.compile(r"^\s*(?:\d+[\.\)]\s*)?(?:answer|a)\s*\d*\s*:\s*(.*)$", re.IGNORECASE)
_RQ_RE = re.compile(r"^\s*(?:\d+[\.\)]\s*)?reasoning\s+question\s*\d*\s*:\s*(.*)$", re.IGNORECASE)
_RA_RE = re.compile(r"^\s*(?:\d+[\.\)]\s*)?reasoning\s+answer\s*\d*\s*:\s*(.*)$", re.IGNORECASE)


def parse_generation(text: str, stage: Stage) -> Union[str, list[QAPair]]:
    """Turn raw generation text into structured output for the stage.

    Raises ParseFailure carrying the raw text; callers quarantine the record
    rather than dropping it.
    """
    if stage is Stage.CAPTION_ENRICH:
        caption = text.strip()
        if not caption:
            raise ParseFailure(stage.value, text, "empty caption generation")
        return caption
    if stage is Stage.EXTRACTIVE_GEN:
        return _parse_extractive(text)
    if stage is Stage.SELF_EXPLAIN_GEN:
        return _parse_selfexplain(text)
    raise ValueError(f"unknown stage {stage}")


def _parse_extractive(text: str) -> list[QAPair]:
    pairs: list[QAPair] = []
    question: Optional[list[str]] = None
    answer: Optional[list[str]] = None

    def flush() -> None:
        nonlocal question, answer
        if question is None and answer is None:
            return
        if question is None or answer is None:
            raise ParseFailure(Stage.EXTRACTIVE_GEN.value, text, "unpaired question/answer block")
        q = "\n".join(question).strip()
        a = "\n".join(answer).strip()
        if not q or not a:
            raise ParseFailure(Stage.EXTRACTIVE_GEN.value, text, "empty question or answer")
        pairs.append(QAPair.make(PairKind.EXTRACTIVE, q, a))
        question = answer = None

    for line in text.splitlines():
        qm = _QUESTION_RE.match(line)
        am = _ANSWER_RE.match(line)
        if qm:
            flush()
            question = [qm.group(1)]
        elif am:
            if question is None:
                raise ParseFailure(Stage.EXTRACTIVE_GEN.value, text, "answer before any question")
            answer = [am.group(1)]
        elif answer is not None:
            answer.append(line)
        elif question is not None:
            question.append(line)
        # leading prose before the first marker is ignored
    flush()
    if not pairs:
        raise ParseFailure(Stage.EXTRACTIVE_GEN.value, text, "no question/answer markers found")
    return pairs


def _parse_selfexplain(text: str) -> list[QAPair]:
    question: Optional[list[str]] = None
    answer: Optional[list[str]] = None
    for line in text.splitlines():
        qm = _RQ_RE.match(line)
        am = _RA_RE.match(line)
        if qm and question is None:
            question = [qm.group(1)]
        elif am and question is not None and answer is None:
            answer = [am.group(1)]
        elif am is None and qm is None:
            if answer is not None:
                answer.append(line)
            elif question is not None:
                question.append(line)
        elif (qm or am) and answer is not None:
            break  # a second pair starts; keep only the first
    if question is None or answer is None:
        raise ParseFailure(Stage.SELF_EXPLAIN_GEN.value, text, "reasoning markers not found")
    q = "\n".join(question).strip()
    a = "\n".join(answer).strip()
    if not q or not a:
        raise ParseFailure(Stage.SELF_EXPLAIN_GEN.value, text, "empty reasoning question or answer")
    return [QAPair.make(PairKind.SELF_EXPLAIN, q, a)]


def render_generation(pairs: list[QAPair], stage: Stage) -> str:
    """Render pairs with the canonical markers (inverse of parse_generation)."""
    if stage is Stage.EXTRACTIVE_GEN:
        return "\n".join(f"Question: {p.question}\nAnswer: {p.answer}" for p in pairs)
    if stage is Stage.SELF_EXPLAIN_GEN:
        (p,) = pairs
        return f"Reasoning Question: {p.question}\nReasoning Answer: {p.answer}"
    raise ValueError(f"no canonical rendering for stage {stage}")


def caption_question_for(record: InstructionRecord) -> str:
    """Deterministically pick a descriptive question for a record's caption pair."""
    key = record.image.id if record.image is not None else record.manual_caption
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=4).digest()
    return CAPTION_QUESTIONS[int.from_bytes(digest, "big") % len(CAPTION_QUESTIONS)]
