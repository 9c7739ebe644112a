from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmcurate.records import ImageRef, InstructionRecord, OcrLine, PairKind, QAPair


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    results = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            if getattr(report, "when", "call") != "call":
                continue
            if "test_acceptance.py" in report.nodeid:
                results[report.nodeid.split("::")[-1]] = status
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, status in sorted(results.items()):
        mark = "PASS" if status == "passed" else "FAIL"
        terminalreporter.write_line(f"{mark}  {name}")


@pytest.fixture
def sale_record() -> InstructionRecord:
    """Small well-formed record used across prompt and scoring tests."""
    extractive = QAPair.make(PairKind.EXTRACTIVE, "What does the sign say?", 'It says "SALE".')
    explain = QAPair.make(
        PairKind.SELF_EXPLAIN,
        "Where is the sale text found?",
        "The word SALE is printed across the red banner at the top.",
        explains=extractive.pair_id,
    )
    return InstructionRecord(
        image=ImageRef(id="img-0001", uri="images/img-0001.png", width=640, height=480),
        manual_caption="A storefront window with a red banner.",
        ocr=(
            OcrLine(bbox=((0, 0), (5, 0), (5, 2), (0, 2)), text="SALE", confidence=0.98),
            OcrLine(bbox=((1, 3), (9, 3), (9, 5), (1, 5)), text="open daily", confidence=0.83),
        ),
        pairs=(extractive, explain),
    )


@pytest.fixture
def caption_record() -> InstructionRecord:
    """Caption-style fixture: enriched caption paired as a caption QA."""
    caption = (
        "The magazine cover features a large title at the top reading TIDE LINES, "
        "with a subtitle about harbor life and a price label of 3.50 in the corner."
    )
    pair = QAPair.make(PairKind.CAPTION, "Describe the image in detail.", caption)
    return InstructionRecord(
        image=ImageRef(id="img-0002", uri="images/img-0002.png"),
        manual_caption="A magazine cover with a large title.",
        enriched_caption=caption,
        ocr=(OcrLine(bbox=((10, 5), (200, 5), (200, 40), (10, 40)), text="TIDE LINES", confidence=0.99),),
        pairs=(pair,),
    )
