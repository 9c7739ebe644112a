"""Quantile-based exclusion of scored pairs.

Extractive pairs are ranked by mIFD and only the lowest ``keep_fraction``
survive (default 0.30, i.e. the highest 70% are excluded). Self-explain
pairs are kept inside an FFD band: the bottom quantile is dropped as
over-related (answers repeat the source), the top quantile as unrelated.
Thresholds are always observed scores (nearest-rank, no interpolation), and
every decision is auditable through the CSV log.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import EmptyScores, UnscoredPair
from .records import InstructionRecord, PairKind

REASON_HIGH_MIFD = "HighMifd"
REASON_HIGH_FFD = "HighFfd"
REASON_LOW_FFD = "LowFfd"
REASON_ORPHANED = "OrphanedExplain"


@dataclass(frozen=True)
class FilterPolicy:
    mifd_keep_fraction: float = 0.30
    ffd_low_quantile: float = 0.02
    ffd_high_quantile: float = 0.98
    tie_break: str = "pair_id"
    mifd_scope: str = "global"  # or "per_image"

    def __post_init__(self) -> None:
        if not (0.0 < self.mifd_keep_fraction <= 1.0):
            raise ValueError("mifd_keep_fraction must be in (0,1]")
        if not (0.0 <= self.ffd_low_quantile < 0.5):
            raise ValueError("ffd_low_quantile must be in [0,0.5)")
        if not (0.5 < self.ffd_high_quantile <= 1.0):
            raise ValueError("ffd_high_quantile must be in (0.5,1]")
        if self.ffd_low_quantile >= self.ffd_high_quantile:
            raise ValueError("ffd_low_quantile must be below ffd_high_quantile")
        if self.tie_break != "pair_id":
            raise ValueError("only pair_id tie-breaking is supported")
        if self.mifd_scope not in ("global", "per_image"):
            raise ValueError("mifd_scope must be 'global' or 'per_image'")


@dataclass(frozen=True)
class FilterOutcome:
    kept: tuple[str, ...]
    dropped: tuple[tuple[str, str], ...]  # (pair_id, reason)
    thresholds_used: dict[str, float]


def quantile(scores: Sequence[float], q: float) -> float:
    """Nearest-rank quantile: the value at index ceil(q*N)-1 of the sort."""
    if not scores:
        raise EmptyScores("quantile of an empty score list")
    if not (0.0 <= q <= 1.0):
        raise ValueError("q must be in [0,1]")
    ordered = sorted(scores)
    idx = max(math.ceil(q * len(ordered)) - 1, 0)
    return ordered[idx]


def filter_mifd(
    scored_pairs: Sequence[tuple[str, float]], policy: FilterPolicy
) -> FilterOutcome:
    """Keep exactly ceil(keep_fraction * N) pairs with the lowest mIFD.

    Ties at the cut score resolve to the lexicographically smaller pair_id,
    so the kept set is permutation invariant and monotone in keep_fraction.
    """
    items = list(scored_pairs)
    if not items:
        return FilterOutcome(kept=(), dropped=(), thresholds_used={})
    order = sorted(items, key=lambda t: (t[1], t[0]))
    k = math.ceil(policy.mifd_keep_fraction * len(order))
    kept = tuple(pid for pid, _ in order[:k])
    dropped = tuple((pid, REASON_HIGH_MIFD) for pid, _ in order[k:])
    return FilterOutcome(
        kept=kept, dropped=dropped, thresholds_used={"mifd_cut": order[k - 1][1]}
    )


def filter_ffd(
    scored_pairs: Sequence[tuple[str, float]], policy: FilterPolicy
) -> FilterOutcome:
    """Keep the middle FFD band; drop below it (LowFfd) and above it (HighFfd).

    The band edges are observed scores: the lower edge is the smallest kept
    value (rank ceil(low_q*N), 0-based), the upper edge the nearest-rank
    high quantile. Identical scores degenerate to a band covering everything.
    """
    items = list(scored_pairs)
    if not items:
        return FilterOutcome(kept=(), dropped=(), thresholds_used={})
    ordered_scores = sorted(s for _, s in items)
    n = len(ordered_scores)
    low_edge = ordered_scores[min(math.ceil(policy.ffd_low_quantile * n), n - 1)]
    high_edge = ordered_scores[max(math.ceil(policy.ffd_high_quantile * n) - 1, 0)]
    kept = []
    dropped = []
    for pid, score in sorted(items, key=lambda t: (t[1], t[0])):
        if score < low_edge:
            dropped.append((pid, REASON_LOW_FFD))
        elif score > high_edge:
            dropped.append((pid, REASON_HIGH_FFD))
        else:
            kept.append(pid)
    return FilterOutcome(
        kept=tuple(kept),
        dropped=tuple(dropped),
        thresholds_used={"ffd_low": low_edge, "ffd_high": high_edge},
    )


# --- cascade over records ------------------------------------------------------------


@dataclass(frozen=True)
class AuditRow:
    pair_id: str
    image_id: str
    kind: str
    score: Optional[float]
    decision: str  # kept | dropped
    reason: str
    threshold: str


def pair_uid(record_index: int, pair_id: str) -> str:
    """Record-scoped pair key: content-hash pair_ids can recur across records."""
    return f"{record_index:06d}#{pair_id}"


def split_uid(uid: str) -> tuple[int, str]:
    idx, pid = uid.split("#", 1)
    return int(idx), pid


@dataclass
class CascadeResult:
    records: list[InstructionRecord]
    mifd_outcome: FilterOutcome
    ffd_outcome: FilterOutcome
    audit: list[AuditRow]

    @property
    def dropped_reasons(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for row in self.audit:
            if row.decision == "dropped":
                counts[row.reason] = counts.get(row.reason, 0) + 1
        return counts


def _require_score(pair_id: str, value: Optional[float]) -> float:
    if value is None:
        raise UnscoredPair(pair_id)
    return value


def cascade(records: Iterable[InstructionRecord], policy: FilterPolicy) -> CascadeResult:
    """mIFD filter first, orphan removal, then the FFD band filter.

    Self-explain pairs whose source extractive pair was dropped never reach
    the FFD filter; they are dropped as OrphanedExplain. Records left with no
    pairs are removed. Caption pairs pass through unfiltered.

    Identical pair content on different records shares a content-hash
    pair_id, so decisions are keyed per record instance (see pair_uid); the
    outcome lists and audit rows therefore never conflate two instances.
    """
    records = list(records)

    extractive: list[tuple[str, float, Optional[str]]] = []  # (uid, mifd, image_id)
    explains: list[tuple[str, float, str]] = []  # (uid, ffd, source uid)
    for idx, record in enumerate(records):
        image_id = record.image.id if record.image is not None else None
        for pair in record.pairs:
            card = record.scores.get(pair.pair_id)
            uid = pair_uid(idx, pair.pair_id)
            if pair.kind is PairKind.EXTRACTIVE:
                value = _require_score(pair.pair_id, card.mifd if card else None)
                extractive.append((uid, value, image_id))
            elif pair.kind is PairKind.SELF_EXPLAIN:
                value = _require_score(pair.pair_id, card.ffd if card else None)
                explains.append((uid, value, pair_uid(idx, pair.explains or "")))

    if policy.mifd_scope == "per_image":
        groups: dict[Optional[str], list[tuple[str, float]]] = {}
        for uid, value, image_id in extractive:
            groups.setdefault(image_id, []).append((uid, value))
        kept: list[str] = []
        dropped: list[tuple[str, str]] = []
        thresholds: dict[str, float] = {}
        for image_id in sorted(groups, key=lambda x: (x is None, x or "")):
            outcome = filter_mifd(groups[image_id], policy)
            kept.extend(outcome.kept)
            dropped.extend(outcome.dropped)
            if outcome.thresholds_used:
                thresholds[f"mifd_cut:{image_id}"] = outcome.thresholds_used["mifd_cut"]
        mifd_outcome = FilterOutcome(tuple(sorted(kept)), tuple(sorted(dropped)), thresholds)
    else:
        mifd_outcome = filter_mifd([(uid, v) for uid, v, _ in extractive], policy)

    dropped_extractive = {uid for uid, _ in mifd_outcome.dropped}

    orphaned = [(uid, REASON_ORPHANED) for uid, _, src in explains if src in dropped_extractive]
    orphaned_ids = {uid for uid, _ in orphaned}
    surviving_explains = [(uid, v) for uid, v, _ in explains if uid not in orphaned_ids]
    ffd_outcome = filter_ffd(surviving_explains, policy)

    dropped_all = dict(mifd_outcome.dropped)
    dropped_all.update(dict(orphaned))
    dropped_all.update(dict(ffd_outcome.dropped))

    score_by_uid = {uid: v for uid, v, _ in extractive}
    score_by_uid.update({uid: v for uid, v, _ in explains})

    def threshold_for(pair_kind: PairKind, reason: Optional[str]) -> str:
        if pair_kind is PairKind.EXTRACTIVE:
            cuts = mifd_outcome.thresholds_used
            return "" if not cuts else ";".join(f"{k}={v:.12g}" for k, v in sorted(cuts.items()))
        if reason == REASON_ORPHANED:
            return "source-dropped"
        band = ffd_outcome.thresholds_used
        if not band:
            return ""
        return f"ffd_band={band['ffd_low']:.12g}..{band['ffd_high']:.12g}"

    out_records: list[InstructionRecord] = []
    audit: list[AuditRow] = []
    for idx, record in enumerate(records):
        kept_pairs = []
        for pair in record.pairs:
            if pair.kind is PairKind.CAPTION:
                kept_pairs.append(pair)
                continue
            uid = pair_uid(idx, pair.pair_id)
            reason = dropped_all.get(uid)
            audit.append(
                AuditRow(
                    pair_id=pair.pair_id,
                    image_id=record.image.id if record.image is not None else "",
                    kind=pair.kind.value,
                    score=score_by_uid.get(uid),
                    decision="kept" if reason is None else "dropped",
                    reason=reason or "",
                    threshold=threshold_for(pair.kind, reason),
                )
            )
            if reason is None:
                kept_pairs.append(pair)
        if kept_pairs:
            scores = {
                p.pair_id: record.scores[p.pair_id]
                for p in kept_pairs
                if p.pair_id in record.scores
            }
            out_records.append(replace(record, pairs=tuple(kept_pairs), scores=scores))

    return CascadeResult(
        records=out_records,
        mifd_outcome=mifd_outcome,
        ffd_outcome=FilterOutcome(
            kept=ffd_outcome.kept,
            dropped=tuple(sorted(list(ffd_outcome.dropped) + orphaned)),
            thresholds_used=ffd_outcome.thresholds_used,
        ),
        audit=audit,
    )


def write_audit_csv(audit: list[AuditRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "image_id", "kind", "score", "decision", "reason", "threshold"])
        for row in audit:
            writer.writerow(
                [
                    row.pair_id,
                    row.image_id,
                    row.kind,
                    "" if row.score is None else f"{row.score:.12g}",
                    row.decision,
                    row.reason,
                    row.threshold,
                ]
            )


def sweep_keep_levels(
    records: Iterable[InstructionRecord],
    policy: FilterPolicy,
    levels: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
) -> dict[float, CascadeResult]:
    """Re-run the cascade across keep fractions (the 10%-90% ablation grid)."""
    records = list(records)
    results = {}
    for level in levels:
        results[level] = cascade(records, replace(policy, mifd_keep_fraction=level))
    return results
