"""Exception types shared across the toolkit."""

from __future__ import annotations


class CurationError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(CurationError):
    """Invalid run configuration; maps to CLI exit code 2."""


# --- record / serialization -------------------------------------------------


class EmptyDialogue(CurationError):
    pass


class MalformedLine(CurationError):
    """A JSONL line that cannot be decoded into a record.

    Carries the 1-based line number and the offending line text.
    """

    def __init__(self, line_no: int, line: str, reason: str = ""):
        self.line_no = line_no
        self.line = line
        self.reason = reason
        msg = f"malformed line {line_no}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


# --- prompt assembly / parsing ----------------------------------------------


class MissingOcr(CurationError):
    pass


class MissingCaption(CurationError):
    pass


class WrongPairKind(CurationError):
    pass


class ParseFailure(CurationError):
    """Generation text that does not match the expected stage format.

    The raw text is preserved so the caller can quarantine it.
    """

    def __init__(self, stage: str, raw_text: str, reason: str = ""):
        self.stage = stage
        self.raw_text = raw_text
        self.reason = reason
        super().__init__(f"unparseable {stage} generation" + (f": {reason}" if reason else ""))


# --- providers ----------------------------------------------------------------


class ProviderError(CurationError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"provider returned status {status}")


class Timeout(CurationError):
    pass


class RateLimited(CurationError):
    pass


class EmptyTarget(CurationError):
    pass


class ImageUnsupported(CurationError):
    pass


class UnknownToken(CurationError):
    """A mock language model saw a token outside its closed vocabulary."""


class DimensionMismatch(CurationError):
    pass


# --- scoring ------------------------------------------------------------------


class ZeroDenominator(CurationError):
    pass


class PairMismatch(CurationError):
    pass


# --- filtering ----------------------------------------------------------------


class EmptyScores(CurationError):
    pass


class UnscoredPair(CurationError):
    def __init__(self, pair_id: str):
        self.pair_id = pair_id
        super().__init__(f"pair {pair_id} has no score")


# --- diversity ------------------------------------------------------------------


class DatasetTooSmall(CurationError):
    pass


class BatchTooShort(CurationError):
    pass


class ZeroVector(CurationError):
    pass


class TooFewBatches(CurationError):
    pass


class StageError(CurationError):
    """A pipeline stage failed; maps to CLI exit code 1."""
