"""Run manifest: per-stage status, checksums, and counts, saved atomically."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class StageEntry:
    status: str = "pending"  # pending | running | done | failed
    input_checksums: dict[str, str] = field(default_factory=dict)
    output_checksums: dict[str, str] = field(default_factory=dict)
    count_in: Optional[int] = None
    count_out: Optional[int] = None
    started_at: Optional[str] = None
    finished_at: Optional[str] = None
    error: Optional[str] = None


class Manifest:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.stages: dict[str, StageEntry] = {}
        if self.path.exists():
            data = json.loads(self.path.read_text("utf-8"))
            for name, entry in data.get("stages", {}).items():
                self.stages[name] = StageEntry(**entry)

    def entry(self, stage: str) -> StageEntry:
        return self.stages.setdefault(stage, StageEntry())

    def is_done(self, stage: str) -> bool:
        entry = self.stages.get(stage)
        # a stage counts as done only when its output checksums were recorded
        return bool(entry and entry.status == "done" and entry.output_checksums)

    def mark_running(self, stage: str, now: str, input_checksums: dict[str, str]) -> None:
        entry = self.entry(stage)
        entry.status = "running"
        entry.started_at = now
        entry.finished_at = None
        entry.error = None
        entry.input_checksums = input_checksums
        self.save()

    def mark_done(
        self,
        stage: str,
        now: str,
        output_checksums: dict[str, str],
        count_in: Optional[int] = None,
        count_out: Optional[int] = None,
    ) -> None:
        if not output_checksums:
            raise ValueError("cannot mark a stage done without output checksums")
        entry = self.entry(stage)
        entry.status = "done"
        entry.finished_at = now
        entry.output_checksums = output_checksums
        entry.count_in = count_in
        entry.count_out = count_out
        self.save()

    def mark_failed(self, stage: str, now: str, error: str) -> None:
        entry = self.entry(stage)
        entry.status = "failed"
        entry.finished_at = now
        entry.error = error
        self.save()

    def save(self) -> None:
        payload = {"stages": {name: asdict(entry) for name, entry in self.stages.items()}}
        atomic_write_text(self.path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
