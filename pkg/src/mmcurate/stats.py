"""Dataset composition statistics: question taxonomy, length histograms, and
the summary table, with CSV export.

The taxonomy splits questions into Extract / Abstract / Other by keyword
match (Extract checked first: extraction phrasing is the more specific), and
attributes a questioning word to every question. Keyword lists ship as a data
file and are meant to be overridden; the defaults are not canonical.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import yaml

from .records import InstructionRecord, PairKind

CATEGORY_EXTRACT = "Extract"
CATEGORY_ABSTRACT = "Abstract"
CATEGORY_OTHER = "Other"
CATEGORIES = (CATEGORY_EXTRACT, CATEGORY_ABSTRACT, CATEGORY_OTHER)

# Composition of the upstream 424k-pair corpus release, kept for
# documentation and sanity context only; nothing here is a test target.
REFERENCE_DATASET_STATS = {
    "images": 42870,
    "detail_enriched_captions": 42870,
    "caption_pairs": 42870,
    "avg_words_per_enriched_caption": 114.5,
    "vqa_pairs": 382406,
    "avg_words_per_vqa_question": 12.4,
    "avg_words_per_vqa_answer": 38.9,
}

_PUNCT = ".,!?;:\"'()[]"


@dataclass(frozen=True)
class Taxonomy:
    extract_keywords: tuple[str, ...]
    abstract_keywords: tuple[str, ...]
    question_words: tuple[str, ...]
    fallback_category: str = CATEGORY_OTHER

    def __post_init__(self) -> None:
        if not self.question_words:
            raise ValueError("question_words must be non-empty")
        overlap = set(self.extract_keywords) & set(self.abstract_keywords)
        if overlap:
            raise ValueError(f"keyword lists must be disjoint, both contain {sorted(overlap)}")

    @classmethod
    def load(cls, path: Optional[str | Path] = None) -> "Taxonomy":
        if path is None:
            raw = resources.files("mmcurate.assets").joinpath("taxonomy.yaml").read_text("utf-8")
        else:
            raw = Path(path).read_text("utf-8")
        data = yaml.safe_load(raw)
        return cls(
            extract_keywords=tuple(k.lower() for k in data["extract_keywords"]),
            abstract_keywords=tuple(k.lower() for k in data["abstract_keywords"]),
            question_words=tuple(w.lower() for w in data["question_words"]),
        )


def classify_question(question: str, taxonomy: Taxonomy) -> tuple[str, str]:
    """Assign (category, question_word) to a question; total and deterministic."""
    lowered = question.lower()
    if any(kw in lowered for kw in taxonomy.extract_keywords):
        category = CATEGORY_EXTRACT
    elif any(kw in lowered for kw in taxonomy.abstract_keywords):
        category = CATEGORY_ABSTRACT
    else:
        category = CATEGORY_OTHER

    tokens = [t.strip(_PUNCT).lower() for t in lowered.split()]
    tokens = [t for t in tokens if t]
    qword = "other"
    if tokens:
        if tokens[0] in taxonomy.question_words:
            qword = tokens[0]
        else:
            for tok in tokens[1:]:
                if tok in taxonomy.question_words:
                    qword = tok
                    break
    return category, qword


def word_count(text: str) -> int:
    return len(text.split())


@dataclass
class LengthSummary:
    count: int
    mean: Optional[float]  # None on empty input
    histogram: dict[int, int]  # bin start -> count

    @property
    def mean_1dp(self) -> Optional[float]:
        return None if self.mean is None else round(self.mean, 1)


def _summarize(lengths: list[int], bin_width: int) -> LengthSummary:
    hist: dict[int, int] = {}
    for n in lengths:
        start = (n // bin_width) * bin_width
        hist[start] = hist.get(start, 0) + 1
    mean = sum(lengths) / len(lengths) if lengths else None
    return LengthSummary(count=len(lengths), mean=mean, histogram=dict(sorted(hist.items())))


@dataclass
class LengthStats:
    questions: LengthSummary
    answers: LengthSummary
    per_kind: dict[str, tuple[LengthSummary, LengthSummary]]
    bin_width: int


def length_stats(records: Iterable[InstructionRecord], bin_width: int = 1) -> LengthStats:
    """Whitespace word-count distributions for questions and answers."""
    q_all: list[int] = []
    a_all: list[int] = []
    per_kind_raw: dict[str, tuple[list[int], list[int]]] = {}
    for record in records:
        for pair in record.pairs:
            qn, an = word_count(pair.question), word_count(pair.answer)
            q_all.append(qn)
            a_all.append(an)
            qs, ans = per_kind_raw.setdefault(pair.kind.value, ([], []))
            qs.append(qn)
            ans.append(an)
    return LengthStats(
        questions=_summarize(q_all, bin_width),
        answers=_summarize(a_all, bin_width),
        per_kind={
            kind: (_summarize(qs, bin_width), _summarize(ans, bin_width))
            for kind, (qs, ans) in sorted(per_kind_raw.items())
        },
        bin_width=bin_width,
    )


@dataclass
class DatasetSummary:
    images: int
    enriched_captions: int
    caption_pairs: int
    vqa_pairs: int
    extractive_pairs: int
    self_explain_pairs: int
    avg_words_per_enriched_caption: Optional[float]
    avg_words_per_vqa_question: Optional[float]
    avg_words_per_vqa_answer: Optional[float]

    def as_rows(self) -> list[tuple[str, object]]:
        return [
            ("images", self.images),
            ("enriched_captions", self.enriched_captions),
            ("caption_pairs", self.caption_pairs),
            ("vqa_pairs", self.vqa_pairs),
            ("extractive_pairs", self.extractive_pairs),
            ("self_explain_pairs", self.self_explain_pairs),
            ("avg_words_per_enriched_caption", _fmt_mean(self.avg_words_per_enriched_caption)),
            ("avg_words_per_vqa_question", _fmt_mean(self.avg_words_per_vqa_question)),
            ("avg_words_per_vqa_answer", _fmt_mean(self.avg_words_per_vqa_answer)),
        ]


def _fmt_mean(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.1f}"


def dataset_summary(records: Iterable[InstructionRecord]) -> DatasetSummary:
    image_ids = set()
    imageless = 0
    enriched = 0
    cap_words: list[int] = []
    kind_counts: Counter[PairKind] = Counter()
    vqa_q_words: list[int] = []
    vqa_a_words: list[int] = []
    for record in records:
        if record.image is not None:
            image_ids.add(record.image.id)
        else:
            imageless += 1
        if record.enriched_caption is not None:
            enriched += 1
            cap_words.append(word_count(record.enriched_caption))
        for pair in record.pairs:
            kind_counts[pair.kind] += 1
            if pair.kind in (PairKind.EXTRACTIVE, PairKind.SELF_EXPLAIN):
                vqa_q_words.append(word_count(pair.question))
                vqa_a_words.append(word_count(pair.answer))
    vqa = kind_counts[PairKind.EXTRACTIVE] + kind_counts[PairKind.SELF_EXPLAIN]
    return DatasetSummary(
        images=len(image_ids) + imageless,
        enriched_captions=enriched,
        caption_pairs=kind_counts[PairKind.CAPTION],
        vqa_pairs=vqa,
        extractive_pairs=kind_counts[PairKind.EXTRACTIVE],
        self_explain_pairs=kind_counts[PairKind.SELF_EXPLAIN],
        avg_words_per_enriched_caption=(sum(cap_words) / len(cap_words)) if cap_words else None,
        avg_words_per_vqa_question=(sum(vqa_q_words) / len(vqa_q_words)) if vqa_q_words else None,
        avg_words_per_vqa_answer=(sum(vqa_a_words) / len(vqa_a_words)) if vqa_a_words else None,
    )


@dataclass
class TaxonomyReport:
    inner: dict[str, int]  # category -> count
    outer: dict[tuple[str, str], int]  # (category, question_word) -> count
    lengths: LengthStats
    summary: DatasetSummary

    def check_sums(self) -> None:
        """Inner totals, outer totals, and question count must agree."""
        inner_total = sum(self.inner.values())
        outer_total = sum(self.outer.values())
        if inner_total != outer_total:
            raise AssertionError(f"sum mismatch: inner={inner_total} outer={outer_total}")
        for cat in self.inner:
            cat_outer = sum(c for (c2, _), c in self.outer.items() if c2 == cat)
            if cat_outer != self.inner[cat]:
                raise AssertionError(f"category {cat}: inner={self.inner[cat]} outer={cat_outer}")


def build_taxonomy_report(
    records: Iterable[InstructionRecord],
    taxonomy: Optional[Taxonomy] = None,
    bin_width: int = 1,
) -> TaxonomyReport:
    """Classify every VQA question and collect lengths plus the summary."""
    records = list(records)
    taxonomy = taxonomy or Taxonomy.load()
    inner: dict[str, int] = {c: 0 for c in CATEGORIES}
    outer: Counter[tuple[str, str]] = Counter()
    for record in records:
        for pair in record.pairs:
            if pair.kind is PairKind.CAPTION:
                continue
            category, qword = classify_question(pair.question, taxonomy)
            inner[category] += 1
            outer[(category, qword)] += 1
    report = TaxonomyReport(
        inner=inner,
        outer=dict(sorted(outer.items())),
        lengths=length_stats(records, bin_width),
        summary=dataset_summary(records),
    )
    report.check_sums()
    return report


# --- angles + CSV export -------------------------------------------------------------


def arc_spans(counts: list[tuple[str, int]], start_deg: float = 90.0) -> list[tuple[str, float, float]]:
    """(label, start, extent) arcs proportional to counts, clockwise from top."""
    total = sum(c for _, c in counts)
    spans = []
    cursor = start_deg
    for label, count in counts:
        extent = 360.0 * count / total if total else 0.0
        spans.append((label, cursor, extent))
        cursor -= extent
    return spans


def write_report_csvs(report: TaxonomyReport, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / "taxonomy_inner.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "count"])
        for cat in CATEGORIES:
            writer.writerow([cat, report.inner.get(cat, 0)])
    written.append(path)

    path = out_dir / "taxonomy_outer.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "question_word", "count"])
        for (cat, qword), count in report.outer.items():
            writer.writerow([cat, qword, count])
    written.append(path)

    for name, summary in (
        ("question_lengths.csv", report.lengths.questions),
        ("answer_lengths.csv", report.lengths.answers),
    ):
        path = out_dir / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["words_bin_start", "count"])
            for start, count in summary.histogram.items():
                writer.writerow([start, count])
        written.append(path)

    path = out_dir / "summary.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["field", "value"])
        for key, value in report.summary.as_rows():
            writer.writerow([key, value])
        q_mean = report.lengths.questions.mean_1dp
        a_mean = report.lengths.answers.mean_1dp
        writer.writerow(["mean_words_per_question", "" if q_mean is None else q_mean])
        writer.writerow(["mean_words_per_answer", "" if a_mean is None else a_mean])
    written.append(path)
    return written


def read_taxonomy_csv(path: str | Path) -> dict[str, int]:
    counts = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            counts[row["category"]] = int(row["count"])
    return counts
