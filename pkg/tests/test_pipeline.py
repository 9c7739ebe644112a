"""Pipeline orchestration: staging, gating, quarantine, and resumability."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest
import yaml

from mmcurate.cli import main
from mmcurate.records import PairKind, read_jsonl, write_jsonl
from mmcurate.synthetic import make_corpus


def base_config(tmp_path: Path, **extra) -> dict:
    config = {
        "input": str(tmp_path / "corpus.jsonl"),
        "workdir": str(tmp_path / "work"),
        "output": str(tmp_path / "curated.jsonl"),
        "seed": 7,
        "parallelism": 2,
        "clock": "fixed:2026-01-01T00:00:00Z",
        "providers": {
            "chat": {"kind": "synthetic", "seed": 7},
            "loss": {"kind": "mock", "mode": "copycat", "p_repeat": 0.7, "vocab": "synthetic"},
            "embed": {"kind": "hash", "dim": 64, "seed": 7},
        },
        "filter": {"mifd_keep": 0.3, "ffd_low_q": 0.02, "ffd_high_q": 0.98},
        "diversity": {"backend": "task2vec", "batch_size": 16, "num_batches": 10},
        "probe": {"embed_dim": 8, "vocab_cap": 128, "train_steps": 20, "learning_rate": 0.5},
    }
    config.update(extra)
    return config


def write_setup(tmp_path: Path, n_records: int = 30, **extra) -> Path:
    write_jsonl(make_corpus(n_records, seed=42), tmp_path / "corpus.jsonl")
    cfg_path = tmp_path / "run.yaml"
    cfg_path.write_text(yaml.safe_dump(base_config(tmp_path, **extra)))
    return cfg_path


# manifest.json is run history (differs by construction between an
# interrupted and an uninterrupted run) and scores.ckpt.jsonl is an
# append-order journal under thread parallelism; neither is a final output.
_JOURNALS = ("manifest.json", "scores.ckpt.jsonl")


def snapshot(workdir: Path, skip: tuple[str, ...] = _JOURNALS) -> dict[str, bytes]:
    out = {}
    for path in sorted(workdir.rglob("*")):
        if path.is_file() and path.name not in skip:
            out[str(path.relative_to(workdir))] = path.read_bytes()
    return out


STAGE_ORDER = [
    "ingest", "enrich", "gen-extractive", "gen-selfexplain", "score",
    "filter", "diversity", "stats", "sweep", "report",
]


class TestFullRun:
    def test_run_all_exit_zero(self, tmp_path, capsys):
        cfg = write_setup(tmp_path)
        assert main(["run", "--config", str(cfg)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == len(STAGE_ORDER)
        assert all("done" in line for line in lines)
        assert (tmp_path / "curated.jsonl").exists()

    def test_every_record_gains_enriched_caption(self, tmp_path):
        cfg = write_setup(tmp_path)
        assert main(["ingest", "--config", str(cfg)]) == 0
        assert main(["enrich", "--config", str(cfg)]) == 0
        records = list(read_jsonl(tmp_path / "work" / "enriched.jsonl"))
        assert records and all(r.enriched_caption for r in records)
        assert all(
            any(p.kind is PairKind.CAPTION for p in r.pairs) for r in records
        )
        assert all("enrich" in r.provenance for r in records)

    def test_selfexplain_pairs_reference_sources(self, tmp_path):
        cfg = write_setup(tmp_path)
        for stage in STAGE_ORDER[:4]:
            assert main([stage, "--config", str(cfg)]) == 0
        records = list(read_jsonl(tmp_path / "work" / "selfexplain.jsonl"))
        explains = [p for r in records for p in r.pairs if p.kind is PairKind.SELF_EXPLAIN]
        assert explains
        for record in records:
            extractive = {p.pair_id for p in record.pairs if p.kind is PairKind.EXTRACTIVE}
            for pair in record.pairs:
                if pair.kind is PairKind.SELF_EXPLAIN:
                    assert pair.explains in extractive

    def test_no_score_failures_under_mocks(self, tmp_path):
        cfg = write_setup(tmp_path)
        for stage in STAGE_ORDER[:5]:
            assert main([stage, "--config", str(cfg)]) == 0
        failures = json.loads((tmp_path / "work" / "score_failures.json").read_text())
        assert failures == []


class TestGatesAndSkips:
    def test_dependency_gate(self, tmp_path, capsys):
        cfg = write_setup(tmp_path)
        assert main(["ingest", "--config", str(cfg)]) == 0
        rc = main(["gen-selfexplain", "--config", str(cfg)])
        assert rc == 1
        assert "requires" in capsys.readouterr().err

    def test_rerun_done_stage_is_noop(self, tmp_path, capsys):
        cfg = write_setup(tmp_path)
        assert main(["ingest", "--config", str(cfg)]) == 0
        before = (tmp_path / "work" / "ingested.jsonl").read_bytes()
        assert main(["ingest", "--config", str(cfg)]) == 0
        assert "skipped (done)" in capsys.readouterr().out
        assert (tmp_path / "work" / "ingested.jsonl").read_bytes() == before

    def test_changed_output_detected(self, tmp_path, capsys):
        cfg = write_setup(tmp_path)
        assert main(["ingest", "--config", str(cfg)]) == 0
        (tmp_path / "work" / "ingested.jsonl").write_text("tampered\n")
        rc = main(["ingest", "--config", str(cfg)])
        assert rc == 1
        assert "use --force" in capsys.readouterr().err

    def test_force_reruns(self, tmp_path):
        cfg = write_setup(tmp_path)
        assert main(["ingest", "--config", str(cfg)]) == 0
        (tmp_path / "work" / "ingested.jsonl").write_text("tampered\n")
        assert main(["ingest", "--config", str(cfg), "--force"]) == 0
        records = list(read_jsonl(tmp_path / "work" / "ingested.jsonl"))
        assert len(records) == 30

    def test_config_error_exit_two(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.yaml"
        cfg_path.write_text(
            yaml.safe_dump(
                {"input": str(tmp_path / "x"), "workdir": str(tmp_path / "x"), "output": str(tmp_path / "x")}
            )
        )
        assert main(["ingest", "--config", str(cfg_path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_exit_two(self, tmp_path):
        assert main(["ingest", "--config", str(tmp_path / "nope.yaml")]) == 2


class TestQuarantine:
    def test_unparseable_generations_quarantined_not_dropped(self, tmp_path):
        # an echo provider returns marker-less text: every record must land
        # in quarantine at gen-extractive, none silently vanish
        cfg = write_setup(
            tmp_path,
            providers={
                "chat": {"kind": "echo", "text": "no markers in this text"},
                "loss": {"kind": "mock", "mode": "uniform", "vocab": "synthetic"},
                "embed": {"kind": "hash"},
            },
        )
        assert main(["ingest", "--config", str(cfg)]) == 0
        assert main(["enrich", "--config", str(cfg)]) == 0
        assert main(["gen-extractive", "--config", str(cfg)]) == 0
        quarantine = tmp_path / "work" / "quarantine" / "gen-extractive.jsonl"
        entries = [json.loads(line) for line in quarantine.read_text().splitlines()]
        assert len(entries) == 30
        assert all(e["raw_text"] == "no markers in this text" for e in entries)
        assert list(read_jsonl(tmp_path / "work" / "extractive.jsonl")) == []

    def test_invalid_input_records_quarantined(self, tmp_path):
        records = make_corpus(3, seed=1)
        path = tmp_path / "corpus.jsonl"
        write_jsonl(records, path)
        # append a record with an out-of-range OCR confidence
        import dataclasses

        bad = dataclasses.replace(
            records[0],
            ocr=(dataclasses.replace(records[0].ocr[0], confidence=2.0),),
        )
        from mmcurate.records import dumps_record

        with open(path, "a") as fh:
            fh.write(dumps_record(bad) + "\n")
        cfg_path = tmp_path / "run.yaml"
        cfg_path.write_text(yaml.safe_dump(base_config(tmp_path)))
        assert main(["ingest", "--config", str(cfg_path)]) == 0
        assert len(list(read_jsonl(tmp_path / "work" / "ingested.jsonl"))) == 3
        quarantine = tmp_path / "work" / "quarantine" / "ingest-invalid.jsonl"
        entries = [json.loads(line) for line in quarantine.read_text().splitlines()]
        assert len(entries) == 1
        assert "confidence out of range" in entries[0]["violations"][0]

    def test_duplicate_image_ids_quarantined(self, tmp_path):
        records = make_corpus(3, seed=4)
        path = tmp_path / "corpus.jsonl"
        write_jsonl(records + [records[0]], path)
        cfg_path = tmp_path / "run.yaml"
        cfg_path.write_text(yaml.safe_dump(base_config(tmp_path)))
        assert main(["ingest", "--config", str(cfg_path)]) == 0
        assert len(list(read_jsonl(tmp_path / "work" / "ingested.jsonl"))) == 3
        quarantine = tmp_path / "work" / "quarantine" / "ingest-invalid.jsonl"
        entries = [json.loads(line) for line in quarantine.read_text().splitlines()]
        assert any("duplicate id" in v for e in entries for v in e["violations"])

    def test_lenient_read_quarantines_malformed_lines(self, tmp_path):
        write_jsonl(make_corpus(2, seed=2), tmp_path / "corpus.jsonl")
        with open(tmp_path / "corpus.jsonl", "a") as fh:
            fh.write("{broken json\n")
        cfg_path = tmp_path / "run.yaml"
        cfg_path.write_text(yaml.safe_dump(base_config(tmp_path, strict_read=False)))
        assert main(["ingest", "--config", str(cfg_path)]) == 0
        malformed = tmp_path / "work" / "quarantine" / "ingest-malformed.jsonl"
        entries = [json.loads(line) for line in malformed.read_text().splitlines()]
        assert [e["line_no"] for e in entries] == [3]

    def test_strict_read_fails_stage(self, tmp_path, capsys):
        write_jsonl(make_corpus(2, seed=2), tmp_path / "corpus.jsonl")
        with open(tmp_path / "corpus.jsonl", "a") as fh:
            fh.write("{broken json\n")
        cfg_path = tmp_path / "run.yaml"
        cfg_path.write_text(yaml.safe_dump(base_config(tmp_path)))
        assert main(["ingest", "--config", str(cfg_path)]) == 1


class TestFilterCli:
    def test_keep_30_percent_drops_70(self, tmp_path):
        cfg = write_setup(tmp_path, n_records=40)
        for stage in STAGE_ORDER[:5]:
            assert main([stage, "--config", str(cfg)]) == 0
        assert main(["filter", "--config", str(cfg), "--mifd-keep", "0.3"]) == 0
        with open(tmp_path / "work" / "audit.csv") as fh:
            rows = [r for r in csv.DictReader(fh) if r["kind"] == "extractive"]
        dropped = sum(1 for r in rows if r["decision"] == "dropped")
        import math

        assert len(rows) - dropped == math.ceil(0.3 * len(rows))
        assert dropped / len(rows) == pytest.approx(0.7, abs=0.02)

    def test_sweep_emits_nine_variants(self, tmp_path):
        cfg = write_setup(tmp_path)
        for stage in STAGE_ORDER[:5]:
            assert main([stage, "--config", str(cfg)]) == 0
        assert main(["sweep", "--config", str(cfg)]) == 0
        sweep_dir = tmp_path / "work" / "sweep"
        variants = sorted(p.name for p in sweep_dir.glob("keep_*.jsonl"))
        assert variants == [f"keep_{k}0.jsonl" for k in range(1, 10)]


class TestResumability:
    def test_interrupted_runs_are_byte_identical(self, tmp_path):
        # uninterrupted reference run
        ref_dir = tmp_path / "ref"
        ref_dir.mkdir()
        cfg_ref = write_setup(ref_dir)
        assert main(["run", "--config", str(cfg_ref)]) == 0
        reference = snapshot(ref_dir / "work")
        ref_output = (ref_dir / "curated.jsonl").read_bytes()

        # killed after every stage boundary, then resumed via `run`
        for cut in range(1, len(STAGE_ORDER)):
            trial_dir = tmp_path / f"cut{cut}"
            trial_dir.mkdir()
            cfg = write_setup(trial_dir)
            for stage in STAGE_ORDER[:cut]:
                assert main([stage, "--config", str(cfg)]) == 0
            assert main(["run", "--config", str(cfg)]) == 0
            assert snapshot(trial_dir / "work") == reference
            assert (trial_dir / "curated.jsonl").read_bytes() == ref_output

    def test_stray_temp_file_does_not_corrupt_output(self, tmp_path):
        cfg = write_setup(tmp_path)
        workdir = tmp_path / "work"
        workdir.mkdir(exist_ok=True)
        (workdir / "ingested.jsonl.tmp").write_text("partial garbage from a crash")
        assert main(["ingest", "--config", str(cfg)]) == 0
        records = list(read_jsonl(workdir / "ingested.jsonl"))
        assert len(records) == 30

    def test_diversity_rerun_is_deterministic(self, tmp_path):
        cfg = write_setup(tmp_path)
        assert main(["run", "--config", str(cfg)]) == 0
        first = (tmp_path / "work" / "diversity_summary.json").read_bytes()
        assert main(["diversity", "--config", str(cfg), "--force"]) == 0
        assert (tmp_path / "work" / "diversity_summary.json").read_bytes() == first
