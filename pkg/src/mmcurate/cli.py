"""Command-line entry point.

Exit codes: 0 success, 1 stage failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, CurationError, StageError
from .pipeline import STAGES, Pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmcurate",
        description="Curation pipeline for multimodal instruction-tuning data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--force", action="store_true", help="re-run even if the stage is done")
        p.add_argument("--input", help="override input dataset path")
        p.add_argument("--workdir", help="override working directory")
        p.add_argument("--output", help="override output dataset path")
        p.add_argument("--seed", type=int, help="override run seed")
        p.add_argument("--parallelism", type=int, help="override record-level parallelism")

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        add_common(p)
        if stage == "filter":
            p.add_argument("--mifd-keep", type=float, help="fraction of extractive pairs to keep")
            p.add_argument("--ffd-low-q", type=float, help="FFD lower quantile")
            p.add_argument("--ffd-high-q", type=float, help="FFD upper quantile")
        if stage == "diversity":
            p.add_argument("--backend", choices=["task2vec", "mean-sentence"])
            p.add_argument("--batch-size", type=int)
            p.add_argument("--num-batches", type=int)
        if stage == "stats":
            p.add_argument("--taxonomy", help="taxonomy YAML file")
            p.add_argument("--out", help="stats output directory (default: workdir/stats)")

    p = sub.add_parser("run", help="run every stage in order")
    add_common(p)
    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    for key in ("input", "workdir", "output", "seed", "parallelism"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    nested: dict = {}
    if getattr(args, "mifd_keep", None) is not None:
        nested.setdefault("filter", {})["mifd_keep"] = args.mifd_keep
    if getattr(args, "ffd_low_q", None) is not None:
        nested.setdefault("filter", {})["ffd_low_q"] = args.ffd_low_q
    if getattr(args, "ffd_high_q", None) is not None:
        nested.setdefault("filter", {})["ffd_high_q"] = args.ffd_high_q
    if getattr(args, "backend", None) is not None:
        nested.setdefault("diversity", {})["backend"] = args.backend
    if getattr(args, "batch_size", None) is not None:
        nested.setdefault("diversity", {})["batch_size"] = args.batch_size
    if getattr(args, "num_batches", None) is not None:
        nested.setdefault("diversity", {})["num_batches"] = args.num_batches
    if getattr(args, "taxonomy", None) is not None:
        overrides["taxonomy"] = args.taxonomy
    if getattr(args, "out", None) is not None:
        overrides["stats_out"] = args.out
    overrides["_nested"] = nested
    return overrides


def _merge_nested(config_path: str, overrides: dict):
    import yaml

    from .config import _build, _interpolate

    nested = overrides.pop("_nested", {})
    if not nested:
        return load_config(config_path, overrides)
    try:
        data = yaml.safe_load(Path(config_path).read_text("utf-8")) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}")
    for section, values in nested.items():
        data.setdefault(section, {}).update(values)
    data = _interpolate(data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    cfg = _build(data)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _merge_nested(args.config, _overrides_from_args(args))
        pipeline = Pipeline(config)
        if args.command == "run":
            results = pipeline.run_all(force=args.force)
        else:
            results = [pipeline.run_stage(args.command, force=args.force)]
        for result in results:
            status = "skipped (done)" if result.skipped else "done"
            counts = ""
            if result.count_in is not None or result.count_out is not None:
                counts = f" in={result.count_in} out={result.count_out}"
            print(f"[{result.stage}] {status}{counts}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (StageError, CurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
