"""mmcurate: curation toolkit for multimodal instruction-tuning datasets."""

__version__ = "0.1.0"

from .records import (  # noqa: F401
    DialogueTemplate,
    ImageRef,
    InstructionRecord,
    LossResult,
    OcrLine,
    PairKind,
    QAPair,
    ScoreCard,
    read_jsonl,
    serialize_dialogue,
    validate_record,
    write_jsonl,
)
