"""Intra-dataset instruction diversity: expected cosine distance between
embeddings of sampled batches.

Two batch-embedding backends:

  mean-sentence  arithmetic mean of per-instruction sentence embeddings from
                 any embed provider.
  task2vec       diagonal of the Fisher information of a small next-token
                 probe (token embedding -> linear -> softmax) trained on the
                 batch with plain gradient descent. This is a self-contained
                 stand-in for probing with a pretrained network: it keeps the
                 computation dependency-free and exactly reproducible, at the
                 cost of absolute values that are not comparable to published
                 numbers. The backend is pluggable.

The Fisher diagonal uses the empirical (observed-label) squared gradient,
averaged over batch token positions: one deterministic pass, all entries
non-negative, so distances stay in [0, 1].
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BatchTooShort,
    DatasetTooSmall,
    DimensionMismatch,
    TooFewBatches,
    ZeroVector,
)
from .providers import EmbedProvider


@dataclass(frozen=True)
class BatchSpec:
    batch_size: int = 512
    num_batches: int = 200
    seed: int = 0
    sampling: str = "without-replacement-within-batch"

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.num_batches < 2:
            raise ValueError("num_batches must be >= 2")
        if self.sampling != "without-replacement-within-batch":
            raise ValueError("unsupported sampling scheme")


@dataclass(frozen=True)
class ProbeSpec:
    embed_dim: int = 16
    vocab_cap: int = 2048
    train_steps: int = 50
    learning_rate: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("embed_dim", "vocab_cap", "train_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class BatchEmbedding:
    vector: np.ndarray
    backend: str  # "mean-sentence" | "task2vec"
    batch_index: int


def sample_batches(instructions: Sequence[str], spec: BatchSpec) -> list[list[str]]:
    """Draw num_batches batches of batch_size distinct instructions each.

    Batches are drawn independently (instructions may recur across batches)
    but contain no duplicates internally. Deterministic under the seed.
    """
    n = len(instructions)
    if n < spec.batch_size:
        raise DatasetTooSmall(f"need at least {spec.batch_size} instructions, have {n}")
    rng = np.random.default_rng(spec.seed)
    batches = []
    for _ in range(spec.num_batches):
        idx = rng.choice(n, size=spec.batch_size, replace=False)
        batches.append([instructions[i] for i in idx])
    return batches


def mean_embedding(
    batch: Sequence[str], provider: EmbedProvider, batch_index: int = 0
) -> BatchEmbedding:
    if not batch:
        raise ValueError("batch must be non-empty")
    vectors = provider.embed(batch)
    stacked = np.stack(vectors)
    return BatchEmbedding(
        vector=stacked.mean(axis=0), backend="mean-sentence", batch_index=batch_index
    )


# --- task2vec probe -------------------------------------------------------------------


def probe_tokens(text: str) -> list[str]:
    return text.lower().split()


@dataclass(frozen=True)
class ProbeVocab:
    """Fixed-size token index: ``cap`` frequency-ranked slots plus unknown."""

    index: dict[str, int]
    cap: int

    @property
    def size(self) -> int:
        return self.cap + 1  # reserved unknown slot keeps dimensions constant

    @property
    def unk(self) -> int:
        return self.cap

    def encode(self, text: str) -> list[int]:
        return [self.index.get(tok, self.unk) for tok in probe_tokens(text)]


def build_probe_vocab(texts: Sequence[str], cap: int) -> ProbeVocab:
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(probe_tokens(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return ProbeVocab(index={tok: i for i, (tok, _) in enumerate(ranked)}, cap=cap)


class NextTokenProbe:
    """Tiny next-token model with hand-rolled analytic gradients.

    Parameters: token embedding table E (V,d), output weights W (d,V), bias
    b (V). Training is full-batch gradient descent on mean NLL from a seeded
    initialization, so runs are bit-reproducible.
    """

    def __init__(self, vocab_size: int, spec: ProbeSpec):
        self.spec = spec
        self.V = vocab_size
        self.d = spec.embed_dim
        rng = np.random.default_rng(spec.seed)
        self.E = rng.standard_normal((self.V, self.d)) * 0.1
        self.W = rng.standard_normal((self.d, self.V)) * 0.1
        self.b = np.zeros(self.V)

    # -- forward / loss --

    def _logits(self, src: np.ndarray) -> np.ndarray:
        return self.E[src] @ self.W + self.b

    @staticmethod
    def _log_softmax(z: np.ndarray) -> np.ndarray:
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def mean_loss(self, src: np.ndarray, tgt: np.ndarray) -> float:
        logp = self._log_softmax(self._logits(src))
        return float(-logp[np.arange(len(src)), tgt].mean())

    def _delta(self, src: np.ndarray, tgt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-example softmax residual P - onehot(tgt), and inputs X."""
        X = self.E[src]
        logp = self._log_softmax(X @ self.W + self.b)
        P = np.exp(logp)
        P[np.arange(len(src)), tgt] -= 1.0
        return P, X

    def grads(self, src: np.ndarray, tgt: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Analytic gradients of the mean NLL w.r.t. (E, W, b)."""
        n = len(src)
        delta, X = self._delta(src, tgt)
        delta = delta / n
        gb = delta.sum(axis=0)
        gW = X.T @ delta
        gE = np.zeros_like(self.E)
        np.add.at(gE, src, delta @ self.W.T)
        return gE, gW, gb

    def train(self, src: np.ndarray, tgt: np.ndarray) -> None:
        lr = self.spec.learning_rate
        for _ in range(self.spec.train_steps):
            gE, gW, gb = self.grads(src, tgt)
            self.E -= lr * gE
            self.W -= lr * gW
            self.b -= lr * gb

    def fim_diagonal(self, src: np.ndarray, tgt: np.ndarray) -> np.ndarray:
        """Mean over token positions of the squared per-example NLL gradient."""
        n = len(src)
        delta, X = self._delta(src, tgt)
        d2 = delta**2
        fb = d2.mean(axis=0)
        fW = (X**2).T @ d2 / n
        gE_rows = (delta @ self.W.T) ** 2
        fE = np.zeros_like(self.E)
        np.add.at(fE, src, gE_rows)
        fE /= n
        return np.concatenate([fE.ravel(), fW.ravel(), fb])

    # -- flat parameter access (used by the finite-difference check) --

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.E.ravel(), self.W.ravel(), self.b])

    def set_param_vector(self, vec: np.ndarray) -> None:
        ne, nw = self.E.size, self.W.size
        self.E = vec[:ne].reshape(self.E.shape).copy()
        self.W = vec[ne : ne + nw].reshape(self.W.shape).copy()
        self.b = vec[ne + nw :].copy()


def batch_transitions(batch: Sequence[str], vocab: ProbeVocab) -> tuple[np.ndarray, np.ndarray]:
    """Consecutive-token (src, tgt) pairs within each instruction."""
    src: list[int] = []
    tgt: list[int] = []
    for text in batch:
        ids = vocab.encode(text)
        for a, b in zip(ids, ids[1:]):
            src.append(a)
            tgt.append(b)
    if not src:
        raise BatchTooShort("batch has fewer than 2 tokens in every instruction")
    return np.asarray(src, dtype=np.int64), np.asarray(tgt, dtype=np.int64)


def task2vec_embedding(
    batch: Sequence[str],
    probe: ProbeSpec,
    vocab: Optional[ProbeVocab] = None,
    batch_index: int = 0,
) -> BatchEmbedding:
    """Train the probe on the batch, then embed it as the FIM diagonal.

    Pass a shared vocabulary (built from the whole dataset) so slots mean
    the same token in every batch; without one, the vocabulary is built from
    the batch itself and embeddings are only dimension-compatible.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    if vocab is None:
        vocab = build_probe_vocab(batch, probe.vocab_cap)
    src, tgt = batch_transitions(batch, vocab)
    model = NextTokenProbe(vocab.size, probe)
    model.train(src, tgt)
    return BatchEmbedding(
        vector=model.fim_diagonal(src, tgt), backend="task2vec", batch_index=batch_index
    )


# --- distances and the coefficient ------------------------------------------------------


def cosine_distance(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"shapes {x.shape} vs {y.shape}")
    if np.array_equal(x, y):
        return 0.0  # definitionally zero; sidesteps sqrt rounding noise
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ZeroVector("cosine distance undefined for zero vectors")
    cos = float(np.dot(x, y) / (nx * ny))
    return 1.0 - max(-1.0, min(1.0, cos))


@dataclass
class DiversityResult:
    div: float
    std: float
    backend: str
    num_batches: int
    pair_distances: list[tuple[int, int, float]] = field(default_factory=list)


def diversity_coefficient(
    embeddings: Sequence[BatchEmbedding],
    pairing: str = "all-pairs",
    sample_k: Optional[int] = None,
    seed: int = 0,
) -> DiversityResult:
    """Mean pairwise cosine distance over batch embeddings (plus its std).

    ``all-pairs`` uses every unordered pair in a fixed order; ``sampled``
    draws sample_k distinct pairs with the given seed.
    """
    if len(embeddings) < 2:
        raise TooFewBatches("need at least 2 batch embeddings")
    backends = {e.backend for e in embeddings}
    if len(backends) > 1:
        raise ValueError(f"mixed backends: {sorted(backends)}")
    nb = len(embeddings)
    all_pairs = [(i, j) for i in range(nb) for j in range(i + 1, nb)]
    if pairing == "all-pairs":
        pairs = all_pairs
    elif pairing == "sampled":
        if not sample_k or sample_k < 1:
            raise ValueError("sampled pairing requires sample_k >= 1")
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(all_pairs), size=min(sample_k, len(all_pairs)), replace=False)
        pairs = [all_pairs[i] for i in sorted(chosen)]
    else:
        raise ValueError(f"unknown pairing {pairing!r}")

    distances = [
        (i, j, cosine_distance(embeddings[i].vector, embeddings[j].vector)) for i, j in pairs
    ]
    values = np.array([d for _, _, d in distances])
    return DiversityResult(
        div=float(values.mean()),
        std=float(values.std()),
        backend=next(iter(backends)),
        num_batches=nb,
        pair_distances=distances,
    )


def write_diversity_report(
    result: DiversityResult, spec: BatchSpec, pairs_csv: str | Path, summary_path: str | Path
) -> None:
    with open(pairs_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["batch_i", "batch_j", "cosine_distance"])
        for i, j, d in result.pair_distances:
            writer.writerow([i, j, f"{d:.12g}"])
    summary = {
        "div": result.div,
        "std": result.std,
        "backend": result.backend,
        "num_batches": result.num_batches,
        "batch_size": spec.batch_size,
        "seed": spec.seed,
        "num_pairs": len(result.pair_distances),
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
