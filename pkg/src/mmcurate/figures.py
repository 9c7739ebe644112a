"""Matplotlib rendering of report figures (saved next to the CSV exports)."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "mmcurate"  # stable ids, reproducible bytes

import matplotlib.pyplot as plt
import numpy as np

from .stats import CATEGORIES, LengthStats, TaxonomyReport, arc_spans

_CATEGORY_COLORS = {"Extract": "#4c72b0", "Abstract": "#dd8452", "Other": "#8c8c8c"}


def sunburst_counts(report: TaxonomyReport) -> tuple[list[tuple[str, int]], list[tuple[str, int]]]:
    """Inner/outer ring counts in the fixed rendering order.

    Outer wedges are grouped under their category (count-descending, then
    alphabetical) so the rings stay angularly aligned.
    """
    inner = [(cat, report.inner.get(cat, 0)) for cat in CATEGORIES]
    outer: list[tuple[str, int]] = []
    for cat in CATEGORIES:
        entries = [(q, c) for (c2, q), c in report.outer.items() if c2 == cat]
        entries.sort(key=lambda t: (-t[1], t[0]))
        outer.extend((f"{cat}:{q}", c) for q, c in entries)
    return inner, outer


def render_sunburst(report: TaxonomyReport, path: str | Path) -> None:
    inner, outer = sunburst_counts(report)
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.set_aspect("equal")
    ax.axis("off")

    total = sum(c for _, c in inner)
    if total > 0:
        for label, start, extent in arc_spans(inner):
            wedge = plt.matplotlib.patches.Wedge(
                (0, 0), 0.65, start - extent, start,
                width=0.65, facecolor=_CATEGORY_COLORS.get(label, "#cccccc"),
                edgecolor="white",
            )
            ax.add_patch(wedge)
            if extent > 8:
                mid = np.deg2rad(start - extent / 2)
                ax.text(0.4 * np.cos(mid), 0.4 * np.sin(mid), label,
                        ha="center", va="center", fontsize=9)
        for label, start, extent in arc_spans(outer):
            cat = label.split(":", 1)[0]
            wedge = plt.matplotlib.patches.Wedge(
                (0, 0), 1.0, start - extent, start,
                width=0.3, facecolor=_CATEGORY_COLORS.get(cat, "#cccccc"),
                alpha=0.55, edgecolor="white",
            )
            ax.add_patch(wedge)
            if extent > 10:
                mid = np.deg2rad(start - extent / 2)
                ax.text(0.85 * np.cos(mid), 0.85 * np.sin(mid), label.split(":", 1)[1],
                        ha="center", va="center", fontsize=7)
    ax.set_xlim(-1.05, 1.05)
    ax.set_ylim(-1.05, 1.05)
    ax.set_title("Question taxonomy")
    fig.savefig(path, format=_format_for(path), bbox_inches="tight", metadata=_metadata_for(path))
    plt.close(fig)


def render_length_histograms(lengths: LengthStats, path: str | Path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, (title, summary) in zip(
        axes, [("Question length (words)", lengths.questions), ("Answer length (words)", lengths.answers)]
    ):
        if summary.histogram:
            starts = list(summary.histogram.keys())
            counts = list(summary.histogram.values())
            ax.bar(starts, counts, width=lengths.bin_width * 0.9, align="edge", color="#4c72b0")
            if summary.mean is not None:
                ax.axvline(summary.mean, color="#c44e52", linestyle="--",
                           label=f"mean {summary.mean:.1f}")
                ax.legend(fontsize=8)
        ax.set_title(title, fontsize=10)
        ax.set_xlabel("words")
        ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, format=_format_for(path), metadata=_metadata_for(path))
    plt.close(fig)


def render_score_distributions(
    series: dict[str, list[float]], path: str | Path, bins: int = 40
) -> None:
    """Histogram panel per score metric (ifd / mifd / ffd style plots)."""
    names = [name for name, values in series.items() if values]
    if not names:
        names = list(series.keys())[:1]
    fig, axes = plt.subplots(1, max(len(names), 1), figsize=(4 * max(len(names), 1), 3.2))
    if len(names) <= 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        values = series.get(name, [])
        if values:
            ax.hist(values, bins=bins, color="#55a868")
        ax.set_title(name, fontsize=10)
        ax.set_xlabel("score")
        ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, format=_format_for(path), metadata=_metadata_for(path))
    plt.close(fig)


def _metadata_for(path: str | Path) -> Optional[dict]:
    if _format_for(path) == "svg":
        return {"Date": None}  # drop the timestamp so reruns are byte-identical
    return None


def _format_for(path: str | Path) -> Optional[str]:
    suffix = Path(path).suffix.lower().lstrip(".")
    return suffix or "svg"
