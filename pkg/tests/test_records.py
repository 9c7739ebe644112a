"""Record model, dialogue serialization, and JSONL round-trip tests."""

from __future__ import annotations

import json

import numpy as np
import pytest

from mmcurate.errors import EmptyDialogue, MalformedLine
from mmcurate.records import (
    DialogueTemplate,
    ImageRef,
    InstructionRecord,
    LossResult,
    OcrLine,
    PairKind,
    ProvenanceEntry,
    QAPair,
    ScoreCard,
    pair_id_for,
    read_jsonl,
    record_from_dict,
    record_to_dict,
    serialize_dialogue,
    validate_record,
    write_jsonl,
)


class TestValidateRecord:
    def test_missing_explains_is_flagged(self):
        pair = QAPair(kind=PairKind.SELF_EXPLAIN, question="Why?", answer="Because.", pair_id="p3")
        record = InstructionRecord(
            image=ImageRef(id="i", uri="u"), manual_caption="c", pairs=(pair,)
        )
        assert validate_record(record) == ["pair p3: explains unset"]

    def test_wellformed_caption_fixture_is_clean(self, caption_record):
        assert validate_record(caption_record) == []

    def test_wellformed_vqa_fixture_is_clean(self, sale_record):
        assert validate_record(sale_record) == []

    def test_confidence_out_of_range(self):
        record = InstructionRecord(
            image=ImageRef(id="i", uri="u"),
            manual_caption="c",
            ocr=(OcrLine(bbox=((0, 0), (1, 0), (1, 1), (0, 1)), text="x", confidence=1.3),),
        )
        assert validate_record(record) == ["ocr[0]: confidence out of range"]

    def test_bbox_must_have_four_points(self):
        record = InstructionRecord(
            image=ImageRef(id="i", uri="u"),
            manual_caption="c",
            ocr=(OcrLine(bbox=((0, 0), (1, 0), (1, 1)), text="x", confidence=0.5),),
        )
        assert validate_record(record) == ["ocr[0]: bbox must have exactly 4 points"]

    def test_negative_bbox_coordinates(self):
        record = InstructionRecord(
            image=ImageRef(id="i", uri="u"),
            manual_caption="c",
            ocr=(OcrLine(bbox=((0, 0), (-1, 0), (1, 1), (0, 1)), text="x", confidence=0.5),),
        )
        assert validate_record(record) == ["ocr[0]: bbox has negative coordinates"]

    def test_explains_must_reference_extractive_pair(self):
        explain = QAPair(
            kind=PairKind.SELF_EXPLAIN, question="q", answer="a", pair_id="e1", explains="nope"
        )
        record = InstructionRecord(
            image=ImageRef(id="i", uri="u"), manual_caption="c", pairs=(explain,)
        )
        assert validate_record(record) == ["pair e1: explains references no extractive pair"]

    def test_duplicate_pair_ids(self):
        p = QAPair(kind=PairKind.EXTRACTIVE, question="q", answer="a", pair_id="dup")
        record = InstructionRecord(
            image=ImageRef(id="i", uri="u"), manual_caption="c", pairs=(p, p)
        )
        assert "pair dup: duplicate pair_id" in validate_record(record)

    def test_explains_on_extractive_is_a_violation(self):
        p = QAPair(kind=PairKind.EXTRACTIVE, question="q", answer="a", pair_id="x", explains="y")
        record = InstructionRecord(
            image=ImageRef(id="i", uri="u"), manual_caption="c", pairs=(p,)
        )
        assert validate_record(record) == ["pair x: explains set on non-self-explain pair"]


class TestSerializeDialogue:
    def test_direct_substitution(self):
        pair = QAPair.make(PairKind.EXTRACTIVE, "What?", "Cat.")
        template = DialogueTemplate(qa_format="Question: {q}\nAnswer: {a}")
        assert serialize_dialogue([pair], template) == "Question: What?\nAnswer: Cat."

    def test_two_pairs_joined_by_separator(self):
        pairs = [
            QAPair.make(PairKind.EXTRACTIVE, "A?", "B."),
            QAPair.make(PairKind.EXTRACTIVE, "C?", "D."),
        ]
        template = DialogueTemplate(qa_format="Q {q} A {a}", turn_separator="\n\n")
        assert serialize_dialogue(pairs, template) == "Q A? A B.\n\nQ C? A D."

    def test_deterministic(self):
        pairs = [QAPair.make(PairKind.EXTRACTIVE, "A?", "B.")]
        template = DialogueTemplate()
        assert serialize_dialogue(pairs, template) == serialize_dialogue(pairs, template)

    def test_empty_dialogue_raises(self):
        with pytest.raises(EmptyDialogue):
            serialize_dialogue([], DialogueTemplate())

    def test_template_requires_both_placeholders(self):
        with pytest.raises(ValueError):
            DialogueTemplate(qa_format="only {q}")
        with pytest.raises(ValueError):
            DialogueTemplate(qa_format="{q} {a} {a}")

    def test_injective_for_distinct_content(self):
        # distinct (q, a) word-lists must yield distinct serializations when
        # the separators do not occur in the content
        rng = np.random.default_rng(11)
        template = DialogueTemplate(qa_format="Question: {q}\nAnswer: {a}", turn_separator="\n\n")
        seen = {}
        for _ in range(300):
            n = int(rng.integers(1, 3))
            pairs = tuple(
                (
                    " ".join(rng.choice(list("abcdef"), size=int(rng.integers(1, 4)))),
                    " ".join(rng.choice(list("uvwxyz"), size=int(rng.integers(1, 4)))),
                )
                for _ in range(n)
            )
            rendered = serialize_dialogue(
                [QAPair.make(PairKind.EXTRACTIVE, q, a) for q, a in pairs], template
            )
            if rendered in seen:
                assert seen[rendered] == pairs
            seen[rendered] = pairs


class TestPairIds:
    def test_content_hash_is_stable(self):
        a = QAPair.make(PairKind.EXTRACTIVE, "q", "a")
        b = QAPair.make(PairKind.EXTRACTIVE, "q", "a")
        assert a.pair_id == b.pair_id == pair_id_for(PairKind.EXTRACTIVE, "q", "a")

    def test_kind_participates_in_the_hash(self):
        assert (
            pair_id_for(PairKind.EXTRACTIVE, "q", "a")
            != pair_id_for(PairKind.SELF_EXPLAIN, "q", "a")
        )


def _random_record(rng: np.random.Generator, idx: int) -> InstructionRecord:
    words = ["sign", "cat", "menu", "total", "open", "red"]
    extractive = QAPair.make(
        PairKind.EXTRACTIVE,
        " ".join(rng.choice(words, size=3)),
        " ".join(rng.choice(words, size=4)),
    )
    explain = QAPair.make(
        PairKind.SELF_EXPLAIN,
        " ".join(rng.choice(words, size=2)) + " why",
        " ".join(rng.choice(words, size=5)),
        explains=extractive.pair_id,
    )
    card = ScoreCard(
        pair_id=extractive.pair_id,
        ifd=float(rng.uniform(0.1, 2.0)),
        vfd=0.5,
        mifd=None,
        provider_id="test",
        template_id="tpl",
        loss_details={"answer": LossResult(1.5, 3, "test")},
    )
    return InstructionRecord(
        image=ImageRef(id=f"img-{idx}", uri=f"u/{idx}.png", width=int(rng.integers(10, 99))),
        manual_caption=" ".join(rng.choice(words, size=5)),
        enriched_caption=None if rng.random() < 0.3 else " ".join(rng.choice(words, size=8)),
        ocr=(
            OcrLine(
                bbox=((0, 0), (4, 0), (4, 2), (0, 2)),
                text=str(rng.choice(words)),
                confidence=float(np.round(rng.uniform(0, 1), 3)),
            ),
        ),
        pairs=(extractive, explain),
        scores={extractive.pair_id: card},
        provenance={"enrich": ProvenanceEntry("gen-x", "2026-01-01T00:00:00Z")},
    )


class TestJsonlRoundTrip:
    def test_write_three_read_three(self, tmp_path):
        rng = np.random.default_rng(5)
        records = [_random_record(rng, i) for i in range(3)]
        path = tmp_path / "data.jsonl"
        assert write_jsonl(records, path) == 3
        back = list(read_jsonl(path))
        assert back == records

    def test_roundtrip_property(self, tmp_path):
        rng = np.random.default_rng(7)
        records = [_random_record(rng, i) for i in range(40)]
        path = tmp_path / "many.jsonl"
        write_jsonl(records, path)
        assert list(read_jsonl(path)) == records

    def test_dict_roundtrip_identity(self, sale_record):
        assert record_from_dict(record_to_dict(sale_record)) == sale_record

    def test_schema_field_present_on_every_line(self, tmp_path, sale_record):
        path = tmp_path / "schema.jsonl"
        write_jsonl([sale_record], path)
        line = path.read_text().splitlines()[0]
        assert json.loads(line)["schema"] == "llavar2-curation/1"

    def test_garbage_line_strict(self, tmp_path, sale_record):
        path = tmp_path / "bad.jsonl"
        lines = [json.dumps(record_to_dict(sale_record)), "{not json", json.dumps(record_to_dict(sale_record))]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(MalformedLine) as err:
            list(read_jsonl(path, strict=True))
        assert err.value.line_no == 2
        assert err.value.line == "{not json"

    def test_garbage_line_lenient_yields_the_rest(self, tmp_path, sale_record):
        path = tmp_path / "bad.jsonl"
        lines = [json.dumps(record_to_dict(sale_record)), "garbage", json.dumps(record_to_dict(sale_record))]
        path.write_text("\n".join(lines) + "\n")
        errors = []
        records = list(read_jsonl(path, strict=False, on_error=errors.append))
        assert len(records) == 2
        assert [e.line_no for e in errors] == [2]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert list(read_jsonl(path)) == []
        assert write_jsonl([], tmp_path / "out.jsonl") == 0
