"""Stage orchestration: resumable, manifest-gated, atomic-output pipeline runs.

Stage outputs are written to a temp file and renamed into place, so an
interrupted run never leaves a half-written dataset; re-running a done stage
is a checksum-verified no-op unless forced. With deterministic providers and
a fixed clock, a resumed run reproduces an uninterrupted run byte for byte.
"""

from __future__ import annotations

import json
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional

from .config import RunConfig, make_chat_provider, make_embed_provider, make_loss_provider
from .diversity import (
    build_probe_vocab,
    diversity_coefficient,
    mean_embedding,
    sample_batches,
    task2vec_embedding,
    write_diversity_report,
)
from .errors import CurationError, MissingCaption, MissingOcr, ParseFailure, StageError
from .figures import render_length_histograms, render_score_distributions, render_sunburst
from .filtering import cascade, sweep_keep_levels, write_audit_csv
from .manifest import Manifest, atomic_write_text, sha256_file
from .prompts import (
    Stage,
    build_caption_enrichment,
    build_extractive_gen,
    build_selfexplain_gen,
    caption_question_for,
    load_demonstrations,
    parse_generation,
)
from .providers import GenerationParams
from .records import (
    InstructionRecord,
    PairKind,
    ProvenanceEntry,
    QAPair,
    read_jsonl,
    record_to_dict,
    validate_record,
    write_jsonl,
)
from .scoring import collect_scores, score_dataset, write_distribution_csv
from .stats import Taxonomy, build_taxonomy_report, write_report_csvs

STAGES = (
    "ingest",
    "enrich",
    "gen-extractive",
    "gen-selfexplain",
    "score",
    "filter",
    "diversity",
    "stats",
    "sweep",
    "report",
)

_DEPS: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "enrich": ("ingest",),
    "gen-extractive": ("enrich",),
    "gen-selfexplain": ("gen-extractive",),
    "score": ("gen-selfexplain",),
    "filter": ("score",),
    "diversity": ("filter",),
    "stats": ("filter",),
    "sweep": ("score",),
    "report": ("score", "stats"),
}


@dataclass
class StageResult:
    stage: str
    skipped: bool
    count_in: Optional[int] = None
    count_out: Optional[int] = None
    outputs: dict[str, Path] = None  # type: ignore[assignment]


class Pipeline:
    def __init__(self, config: RunConfig):
        self.config = config
        self.workdir = Path(config.workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        (self.workdir / "quarantine").mkdir(exist_ok=True)
        self.manifest = Manifest(self.workdir / "manifest.json")

    # -- helpers --

    def now(self) -> str:
        if self.config.clock.startswith("fixed:"):
            return self.config.clock[len("fixed:") :]
        return datetime.now(timezone.utc).isoformat(timespec="seconds")

    def path(self, name: str) -> Path:
        return self.workdir / name

    def _write_records(self, records: Iterable[InstructionRecord], path: Path) -> int:
        tmp = path.with_name(path.name + ".tmp")
        count = write_jsonl(records, tmp)
        tmp.replace(path)
        return count

    def _read_records(self, path: Path) -> list[InstructionRecord]:
        return list(read_jsonl(path, strict=True))

    def _quarantine(self, stage: str, entries: list[dict]) -> Optional[Path]:
        if not entries:
            return None
        path = self.workdir / "quarantine" / f"{stage}.jsonl"
        text = "".join(
            json.dumps(e, ensure_ascii=False, sort_keys=True) + "\n" for e in entries
        )
        atomic_write_text(path, text)
        return path

    def _pmap(self, fn: Callable, items: list):
        if self.config.parallelism > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    # -- stage runner --

    def run_stage(self, stage: str, force: bool = False) -> StageResult:
        if stage not in _DEPS:
            raise StageError(f"unknown stage {stage!r}")
        for dep in _DEPS[stage]:
            if not self.manifest.is_done(dep):
                raise StageError(f"stage {stage!r} requires {dep!r} to be done first")

        if self.manifest.is_done(stage) and not force:
            entry = self.manifest.entry(stage)
            for name, checksum in entry.output_checksums.items():
                path = self.workdir / name
                if not path.exists() or sha256_file(path) != checksum:
                    raise StageError(
                        f"stage {stage!r} is marked done but output {name} changed; use --force"
                    )
            return StageResult(stage=stage, skipped=True, count_in=entry.count_in,
                               count_out=entry.count_out, outputs={})

        impl = getattr(self, "_stage_" + stage.replace("-", "_"))
        inputs = {str(self.config.input): sha256_file(self.config.input)} if stage == "ingest" else {}
        self.manifest.mark_running(stage, self.now(), inputs)
        try:
            count_in, count_out, outputs = impl()
        except CurationError as exc:
            self.manifest.mark_failed(stage, self.now(), str(exc))
            raise StageError(f"stage {stage!r} failed: {exc}") from exc
        checksums = {
            str(path.relative_to(self.workdir)): sha256_file(path) for path in outputs.values()
        }
        self.manifest.mark_done(stage, self.now(), checksums, count_in, count_out)
        return StageResult(stage, skipped=False, count_in=count_in, count_out=count_out,
                           outputs=outputs)

    def run_all(self, force: bool = False) -> list[StageResult]:
        return [self.run_stage(stage, force=force) for stage in STAGES]

    # -- stages --

    def _stage_ingest(self):
        errors: list[dict] = []
        records = []
        malformed: list[dict] = []
        seen_image_ids: set[str] = set()
        reader = read_jsonl(
            self.config.input,
            strict=self.config.strict_read,
            on_error=lambda e: malformed.append(
                {"line_no": e.line_no, "line": e.line, "reason": e.reason}
            ),
        )
        for record in reader:
            violations = validate_record(record)
            if record.image is not None:
                # image ids must be unique across the dataset file
                if record.image.id in seen_image_ids:
                    violations = violations + [f"image: duplicate id {record.image.id}"]
                else:
                    seen_image_ids.add(record.image.id)
            if violations:
                errors.append({"record": record_to_dict(record), "violations": violations})
            else:
                records.append(record)
        out = self.path("ingested.jsonl")
        count = self._write_records(records, out)
        self._quarantine("ingest-invalid", errors)
        self._quarantine("ingest-malformed", malformed)
        return count + len(errors), count, {"ingested": out}

    def _generation_pass(
        self, in_path: Path, out_name: str, stage_key: str, per_record: Callable
    ):
        records = self._read_records(in_path)
        quarantined: list[dict] = []
        results = self._pmap(per_record, records)
        out_records = []
        for record, result in zip(records, results):
            if isinstance(result, list):  # quarantine entries
                quarantined.extend(result)
            else:
                out_records.append(result)
        out = self.path(out_name)
        count = self._write_records(out_records, out)
        self._quarantine(stage_key, quarantined)
        return len(records), count, {out_name: out}

    def _stage_enrich(self):
        chat = make_chat_provider(self.config.chat, self.config.seed)
        gen = GenerationParams(temperature=0.0, seed=self.config.seed)
        now = self.now()

        def work(record: InstructionRecord):
            try:
                bundle = build_caption_enrichment(record)
                text = chat.chat_complete(bundle, gen)
                caption = parse_generation(text, Stage.CAPTION_ENRICH)
            except ParseFailure as exc:
                return [{"stage": "enrich", "record": record_to_dict(record),
                         "raw_text": exc.raw_text, "reason": exc.reason}]
            except (MissingCaption, MissingOcr) as exc:
                return [{"stage": "enrich", "record": record_to_dict(record),
                         "raw_text": "", "reason": str(exc)}]
            cap_pair = QAPair.make(PairKind.CAPTION, caption_question_for(record), caption)
            return replace(
                record,
                enriched_caption=caption,
                pairs=record.pairs + (cap_pair,),
                provenance={**record.provenance,
                            "enrich": ProvenanceEntry(chat.provider_id, now)},
            )

        return self._generation_pass(self.path("ingested.jsonl"), "enriched.jsonl", "enrich", work)

    def _stage_gen_extractive(self):
        chat = make_chat_provider(self.config.chat, self.config.seed)
        gen = GenerationParams(temperature=0.0, seed=self.config.seed)
        demos = load_demonstrations(self.config.demos_path)[: self.config.num_demos]
        now = self.now()

        def work(record: InstructionRecord):
            try:
                bundle = build_extractive_gen(record, demos)
                text = chat.chat_complete(bundle, gen)
                pairs = parse_generation(text, Stage.EXTRACTIVE_GEN)
            except ParseFailure as exc:
                return [{"stage": "gen-extractive", "record": record_to_dict(record),
                         "raw_text": exc.raw_text, "reason": exc.reason}]
            except (MissingCaption, MissingOcr) as exc:
                return [{"stage": "gen-extractive", "record": record_to_dict(record),
                         "raw_text": "", "reason": str(exc)}]
            existing = {p.pair_id for p in record.pairs}
            new_pairs = tuple(p for p in pairs if p.pair_id not in existing)
            return replace(
                record,
                pairs=record.pairs + new_pairs,
                provenance={**record.provenance,
                            "gen_extractive": ProvenanceEntry(chat.provider_id, now)},
            )

        return self._generation_pass(
            self.path("enriched.jsonl"), "extractive.jsonl", "gen-extractive", work
        )

    def _stage_gen_selfexplain(self):
        chat = make_chat_provider(self.config.chat, self.config.seed)
        gen = GenerationParams(temperature=0.0, seed=self.config.seed)
        now = self.now()

        def work(record: InstructionRecord) -> tuple[InstructionRecord, list[dict]]:
            quarantine_entries: list[dict] = []
            new_pairs: list[QAPair] = []
            for pair in record.pairs:
                if pair.kind is not PairKind.EXTRACTIVE:
                    continue
                try:
                    bundle = build_selfexplain_gen(record, pair)
                    text = chat.chat_complete(bundle, gen)
                    (parsed,) = parse_generation(text, Stage.SELF_EXPLAIN_GEN)
                except ParseFailure as exc:
                    quarantine_entries.append(
                        {"stage": "gen-selfexplain", "pair_id": pair.pair_id,
                         "image_id": record.image.id if record.image else None,
                         "raw_text": exc.raw_text, "reason": exc.reason}
                    )
                    continue
                explain = replace(parsed, explains=pair.pair_id)
                if record.pair_by_id(explain.pair_id) is None and all(
                    p.pair_id != explain.pair_id for p in new_pairs
                ):
                    new_pairs.append(explain)
            updated = replace(
                record,
                pairs=record.pairs + tuple(new_pairs),
                provenance={**record.provenance,
                            "gen_selfexplain": ProvenanceEntry(chat.provider_id, now)},
            )
            return updated, quarantine_entries

        # a failed pair is quarantined; the record itself still flows on
        records = self._read_records(self.path("extractive.jsonl"))
        results = self._pmap(work, records)
        out_records = []
        quarantined: list[dict] = []
        for updated, entries in results:
            out_records.append(updated)
            quarantined.extend(entries)
        out = self.path("selfexplain.jsonl")
        count = self._write_records(out_records, out)
        self._quarantine("gen-selfexplain", quarantined)
        return len(records), count, {"selfexplain.jsonl": out}

    def _stage_score(self):
        records = self._read_records(self.path("selfexplain.jsonl"))
        provider = make_loss_provider(self.config.loss)
        report = score_dataset(
            records,
            provider,
            template=self.config.template,
            parallelism=self.config.parallelism,
            checkpoint_path=self.path("scores.ckpt.jsonl"),
        )
        out = self.path("scored.jsonl")
        count = self._write_records(report.records, out)
        failures_path = self.path("score_failures.json")
        atomic_write_text(
            failures_path,
            json.dumps(
                [{"record": r, "pair_id": p, "error": e} for r, p, e in report.failures],
                indent=2,
                sort_keys=True,
            )
            + "\n",
        )
        return len(records), count, {"scored.jsonl": out, "score_failures.json": failures_path}

    def _stage_filter(self):
        records = self._read_records(self.path("scored.jsonl"))
        result = cascade(records, self.config.filter_policy)
        out = self.path("filtered.jsonl")
        count = self._write_records(result.records, out)
        audit_path = self.path("audit.csv")
        tmp = audit_path.with_name(audit_path.name + ".tmp")
        write_audit_csv(result.audit, tmp)
        tmp.replace(audit_path)
        outcome_path = self.path("filter_outcome.json")
        atomic_write_text(
            outcome_path,
            json.dumps(
                {
                    "policy": {
                        "mifd_keep_fraction": self.config.filter_policy.mifd_keep_fraction,
                        "ffd_low_quantile": self.config.filter_policy.ffd_low_quantile,
                        "ffd_high_quantile": self.config.filter_policy.ffd_high_quantile,
                        "mifd_scope": self.config.filter_policy.mifd_scope,
                    },
                    "mifd_thresholds": self.manifest_safe(result.mifd_outcome.thresholds_used),
                    "ffd_thresholds": self.manifest_safe(result.ffd_outcome.thresholds_used),
                    "kept_extractive": len(result.mifd_outcome.kept),
                    "kept_explain": len(result.ffd_outcome.kept),
                    "dropped": result.dropped_reasons,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n",
        )
        # the filtered dataset is the run's deliverable
        output = Path(self.config.output)
        output.parent.mkdir(parents=True, exist_ok=True)
        tmp_out = output.with_name(output.name + ".tmp")
        shutil.copyfile(out, tmp_out)
        tmp_out.replace(output)
        return len(records), count, {
            "filtered.jsonl": out,
            "audit.csv": audit_path,
            "filter_outcome.json": outcome_path,
        }

    @staticmethod
    def manifest_safe(d: dict) -> dict:
        return {k: float(v) for k, v in d.items()}

    def _instructions(self, records: list[InstructionRecord]) -> list[str]:
        return [
            p.question
            for r in records
            for p in r.pairs
            if p.kind in (PairKind.EXTRACTIVE, PairKind.SELF_EXPLAIN)
        ]

    def _stage_diversity(self):
        records = self._read_records(self.path("filtered.jsonl"))
        instructions = self._instructions(records)
        spec = self.config.batch_spec
        batches = sample_batches(instructions, spec)
        if self.config.diversity_backend == "mean-sentence":
            provider = make_embed_provider(self.config.embed, self.config.seed)
            embeddings = [
                mean_embedding(batch, provider, batch_index=i) for i, batch in enumerate(batches)
            ]
        else:
            vocab = build_probe_vocab(instructions, self.config.probe_spec.vocab_cap)
            embeddings = [
                task2vec_embedding(batch, self.config.probe_spec, vocab, batch_index=i)
                for i, batch in enumerate(batches)
            ]
        result = diversity_coefficient(embeddings)
        pairs_csv = self.path("diversity_pairs.csv")
        summary_path = self.path("diversity_summary.json")
        write_diversity_report(result, spec, pairs_csv, summary_path)
        return len(instructions), len(batches), {
            "diversity_pairs.csv": pairs_csv,
            "diversity_summary.json": summary_path,
        }

    def _stage_stats(self):
        records = self._read_records(self.path("filtered.jsonl"))
        taxonomy = Taxonomy.load(self.config.taxonomy_path)
        report = build_taxonomy_report(records, taxonomy)
        out_dir = self.path("stats")
        written = write_report_csvs(report, out_dir)
        if self.config.stats_out is not None:
            # untracked courtesy copy outside the workdir
            extra = Path(self.config.stats_out)
            extra.mkdir(parents=True, exist_ok=True)
            for p in written:
                shutil.copyfile(p, extra / p.name)
        outputs = {str(p.relative_to(self.workdir)): p for p in written}
        n_questions = sum(report.inner.values())
        return len(records), n_questions, outputs

    def _stage_sweep(self):
        records = self._read_records(self.path("scored.jsonl"))
        sweep_dir = self.path("sweep")
        sweep_dir.mkdir(exist_ok=True)
        results = sweep_keep_levels(records, self.config.filter_policy)
        outputs = {}
        for level, result in sorted(results.items()):
            name = f"keep_{int(round(level * 100)):02d}"
            data_path = sweep_dir / f"{name}.jsonl"
            self._write_records(result.records, data_path)
            audit_path = sweep_dir / f"{name}_audit.csv"
            tmp = audit_path.with_name(audit_path.name + ".tmp")
            write_audit_csv(result.audit, tmp)
            tmp.replace(audit_path)
            outputs[str(data_path.relative_to(self.workdir))] = data_path
            outputs[str(audit_path.relative_to(self.workdir))] = audit_path
        return len(records), len(results), outputs

    def _stage_report(self):
        scored = self._read_records(self.path("scored.jsonl"))
        filtered = self._read_records(self.path("filtered.jsonl"))
        reports_dir = self.path("reports")
        reports_dir.mkdir(exist_ok=True)
        outputs = {}

        series = {metric: collect_scores(scored, metric) for metric in ("ifd", "mifd", "ffd")}
        fig_path = reports_dir / "score_distributions.svg"
        render_score_distributions(series, fig_path)
        outputs["reports/score_distributions.svg"] = fig_path
        for metric in ("ifd", "mifd", "ffd"):
            csv_path = reports_dir / f"score_dist_{metric}.csv"
            write_distribution_csv(scored, metric, csv_path)
            outputs[f"reports/score_dist_{metric}.csv"] = csv_path

        taxonomy = Taxonomy.load(self.config.taxonomy_path)
        report = build_taxonomy_report(filtered, taxonomy)
        sunburst_path = reports_dir / "taxonomy_sunburst.svg"
        render_sunburst(report, sunburst_path)
        outputs["reports/taxonomy_sunburst.svg"] = sunburst_path
        lengths_path = reports_dir / "length_histograms.svg"
        render_length_histograms(report.lengths, lengths_path)
        outputs["reports/length_histograms.svg"] = lengths_path

        return len(scored), len(outputs), outputs
