"""Run configuration: YAML file with environment interpolation, flag overrides,
and provider construction."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .diversity import BatchSpec, ProbeSpec
from .errors import ConfigError
from .filtering import FilterPolicy
from .providers import (
    EchoChat,
    HashEmbedder,
    HttpChatProvider,
    HttpEmbedProvider,
    HttpLossProvider,
    MockLm,
    MockLmSpec,
    ProviderConfig,
    SyntheticChat,
)
from .records import DialogueTemplate
from . import synthetic

_ENV_RE = re.compile(r"\$\{(\w+)\}")


def _interpolate(value: Any) -> Any:
    if isinstance(value, str):

        def sub(match: re.Match) -> str:
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(f"environment variable {name} is not set")
            return os.environ[name]

        return _ENV_RE.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


@dataclass
class RunConfig:
    input: Path
    workdir: Path
    output: Path
    seed: int = 0
    parallelism: int = 1
    clock: str = "real"  # "real" or "fixed:<ISO timestamp>"
    strict_read: bool = True
    num_demos: int = 2
    demos_path: Optional[Path] = None
    taxonomy_path: Optional[Path] = None
    stats_out: Optional[Path] = None  # default: <workdir>/stats
    chat: dict = field(default_factory=lambda: {"kind": "synthetic"})
    loss: dict = field(default_factory=lambda: {"kind": "mock", "mode": "uniform"})
    embed: dict = field(default_factory=lambda: {"kind": "hash"})
    filter_policy: FilterPolicy = field(default_factory=FilterPolicy)
    batch_spec: BatchSpec = field(default_factory=lambda: BatchSpec(batch_size=16, num_batches=20))
    probe_spec: ProbeSpec = field(default_factory=ProbeSpec)
    diversity_backend: str = "task2vec"  # or "mean-sentence"
    template: DialogueTemplate = field(default_factory=DialogueTemplate)

    def validate(self) -> None:
        paths = [str(self.input), str(self.workdir), str(self.output)]
        if len(set(paths)) != len(paths):
            raise ConfigError("input, workdir, and output paths must be distinct")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.diversity_backend not in ("task2vec", "mean-sentence"):
            raise ConfigError(f"unknown diversity backend {self.diversity_backend!r}")
        if self.clock != "real" and not self.clock.startswith("fixed:"):
            raise ConfigError("clock must be 'real' or 'fixed:<timestamp>'")


def load_config(path: str | Path, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text("utf-8")) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = _interpolate(data)
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = _build(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}")
    cfg.validate()
    return cfg


def _build(data: dict[str, Any]) -> RunConfig:
    for required in ("input", "workdir", "output"):
        if required not in data:
            raise ConfigError(f"config missing required key {required!r}")
    fp = data.get("filter", {})
    policy = FilterPolicy(
        mifd_keep_fraction=float(fp.get("mifd_keep", 0.30)),
        ffd_low_quantile=float(fp.get("ffd_low_q", 0.02)),
        ffd_high_quantile=float(fp.get("ffd_high_q", 0.98)),
        mifd_scope=fp.get("mifd_scope", "global"),
    )
    dv = data.get("diversity", {})
    batch_spec = BatchSpec(
        batch_size=int(dv.get("batch_size", 16)),
        num_batches=int(dv.get("num_batches", 20)),
        seed=int(dv.get("seed", data.get("seed", 0))),
    )
    pr = data.get("probe", {})
    probe_spec = ProbeSpec(
        embed_dim=int(pr.get("embed_dim", 16)),
        vocab_cap=int(pr.get("vocab_cap", 2048)),
        train_steps=int(pr.get("train_steps", 50)),
        learning_rate=float(pr.get("learning_rate", 0.5)),
        seed=int(pr.get("seed", data.get("seed", 0))),
    )
    tpl = data.get("template", {})
    template = DialogueTemplate(
        qa_format=tpl.get("qa_format", "Question: {q}\nAnswer: {a}"),
        turn_separator=tpl.get("turn_separator", "\n"),
    )
    return RunConfig(
        input=Path(data["input"]),
        workdir=Path(data["workdir"]),
        output=Path(data["output"]),
        seed=int(data.get("seed", 0)),
        parallelism=int(data.get("parallelism", 1)),
        clock=str(data.get("clock", "real")),
        strict_read=bool(data.get("strict_read", True)),
        num_demos=int(data.get("num_demos", 2)),
        demos_path=Path(data["demos_path"]) if data.get("demos_path") else None,
        taxonomy_path=Path(data["taxonomy"]) if data.get("taxonomy") else None,
        stats_out=Path(data["stats_out"]) if data.get("stats_out") else None,
        chat=dict(data.get("providers", {}).get("chat", {"kind": "synthetic"})),
        loss=dict(data.get("providers", {}).get("loss", {"kind": "mock", "mode": "uniform"})),
        embed=dict(data.get("providers", {}).get("embed", {"kind": "hash"})),
        filter_policy=policy,
        batch_spec=batch_spec,
        probe_spec=probe_spec,
        diversity_backend=dv.get("backend", "task2vec"),
        template=template,
    )


# --- provider factories ----------------------------------------------------------------


def _http_config(spec: dict) -> ProviderConfig:
    return ProviderConfig(
        endpoint=spec["endpoint"],
        model_id=spec.get("model_id", ""),
        auth_env=spec.get("auth_env"),
        timeout=float(spec.get("timeout", 30.0)),
        max_retries=int(spec.get("max_retries", 3)),
        rate_limit=float(spec.get("rate_limit", 10.0)),
    )


def make_chat_provider(spec: dict, seed: int = 0):
    kind = spec.get("kind", "synthetic")
    if kind == "synthetic":
        return SyntheticChat(seed=int(spec.get("seed", seed)))
    if kind == "echo":
        return EchoChat(spec.get("text", ""))
    if kind == "http":
        return HttpChatProvider(_http_config(spec))
    raise ConfigError(f"unknown chat provider kind {kind!r}")


def _vocab_from_spec(spec: dict) -> tuple[str, ...]:
    vocab = spec.get("vocab", "synthetic")
    if vocab == "synthetic":
        return synthetic.MOCK_VOCAB
    if isinstance(vocab, list):
        return tuple(vocab)
    raise ConfigError("loss mock vocab must be a list of tokens or 'synthetic'")


def make_loss_provider(spec: dict):
    kind = spec.get("kind", "mock")
    if kind == "mock":
        mode = spec.get("mode", "uniform")
        mspec = MockLmSpec(
            vocab=_vocab_from_spec(spec),
            mode=mode,
            p_repeat=float(spec["p_repeat"]) if "p_repeat" in spec else None,
            p_inbag=float(spec["p_inbag"]) if "p_inbag" in spec else None,
            default_bag=frozenset(spec["bag"]) if "bag" in spec else None,
        )
        return MockLm(mspec)
    if kind == "http":
        return HttpLossProvider(_http_config(spec))
    raise ConfigError(f"unknown loss provider kind {kind!r}")


def make_embed_provider(spec: dict, seed: int = 0):
    kind = spec.get("kind", "hash")
    if kind == "hash":
        return HashEmbedder(dim=int(spec.get("dim", 64)), seed=int(spec.get("seed", seed)))
    if kind == "http":
        return HttpEmbedProvider(_http_config(spec))
    raise ConfigError(f"unknown embed provider kind {kind!r}")
