"""Batch k-best MIRA tuning of log-linear reranking weights.

Per epoch, sentences are visited in a seed-deterministic shuffled order.
For each sentence with feature rows f(t) and precomputed sentence BLEU g(t)
against the tune references, the update picks

    hope = argmax_t  lambda . f(t) + g(t)
    fear = argmax_t  lambda . f(t) - g(t)

and, when the margin loss (g(hope) - g(fear)) - lambda . (f(hope) - f(fear))
is positive, moves lambda along f(hope) - f(fear) with step size capped at c.
Ties inside either argmax resolve to the lowest rank, which makes the whole
run bit-deterministic for a fixed seed.

After each epoch the within-epoch running average of lambda is scored by
reranking the tune set; the best-scoring epoch's average is returned, with
the initialization included as the epoch-0 candidate, so the tuned weights
never score below the starting point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .corpus import NBestCorpus, ReferenceSet
from .features import FeatureMatrix
from .metrics import NGramStats, corpus_bleu, sentence_stats, tokenize_13a

INIT_MODES = ("zeros", "uniform", "given")


@dataclass(frozen=True)
class WeightVector:
    """Learned weights aligned with a FeatureMatrix's column order."""

    feature_names: Tuple[str, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        if len(self.feature_names) != len(self.weights):
            raise ValueError("feature_names and weights must have the same length")
        if any(not math.isfinite(w) for w in self.weights):
            raise ValueError("weights must be finite")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)


@dataclass(frozen=True)
class MiraConfig:
    c: float = 0.01
    epochs: int = 30
    seed: int = 0
    init: str = "zeros"
    init_weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")
        if self.init == "given" and self.init_weights is None:
            raise ValueError("init 'given' requires init_weights")


@dataclass(frozen=True)
class TuneRun:
    """Per-epoch averaged weights and tune BLEU; epoch 0 is the initialization."""

    best_weights: WeightVector
    history: Tuple[Tuple[WeightVector, float], ...]
    best_epoch: int


def _check_aligned(
    matrix: FeatureMatrix, corpus: NBestCorpus, refs: ReferenceSet
) -> None:
    matrix.validate_against(corpus)
    if refs.num_sentences != corpus.num_sentences:
        raise ValueError(
            f"references cover {refs.num_sentences} sentences, corpus has "
            f"{corpus.num_sentences}"
        )


def _init_array(config: MiraConfig, names: Sequence[str]) -> np.ndarray:
    m = len(names)
    if config.init == "zeros":
        lam = np.zeros(m)
        # start from the generating model's own ranking when available
        if "total" in names:
            lam[list(names).index("total")] = 1.0
        return lam
    if config.init == "uniform":
        return np.full(m, 1.0 / m)
    given = np.asarray(config.init_weights, dtype=np.float64)
    if given.shape != (m,):
        raise ValueError(f"init_weights must have length {m}")
    return given.copy()


def hope_fear(model_scores: np.ndarray, gains: np.ndarray) -> Tuple[int, int]:
    """Indices of the hope and fear hypotheses; ties go to the lowest rank."""
    return int(np.argmax(model_scores + gains)), int(np.argmax(model_scores - gains))


def _update_on_sentence(
    lam: np.ndarray, rows: np.ndarray, gains: np.ndarray, c: float
) -> Tuple[np.ndarray, bool]:
    """One MIRA visit; returns (possibly updated lambda, whether it changed)."""
    model = rows @ lam
    hope, fear = hope_fear(model, gains)
    if hope == fear:
        return lam, False
    diff = rows[hope] - rows[fear]
    loss = (gains[hope] - gains[fear]) - (model[hope] - model[fear])
    if loss <= 0.0:
        return lam, False
    sq_norm = float(diff @ diff)
    if sq_norm == 0.0:
        return lam, False
    delta = min(c, loss / sq_norm)
    return lam + delta * diff, True


def tune_mira(
    matrix: FeatureMatrix,
    corpus: NBestCorpus,
    refs: ReferenceSet,
    config: MiraConfig = MiraConfig(),
) -> TuneRun:
    """Learn reranking weights that maximize tune-set corpus BLEU."""
    _check_aligned(matrix, corpus, refs)
    names = matrix.feature_names
    if not names:
        raise ValueError("zero-feature matrix")
    num_sentences = corpus.num_sentences

    # per-hypothesis sentence BLEU against the tune references, plus the
    # per-hypothesis statistics that make corpus BLEU of any selection cheap
    gains: List[np.ndarray] = []
    stats: List[List[NGramStats]] = []
    for sid, entries in enumerate(corpus.lists):
        ref_toks = [tokenize_13a(r) for r in refs.refs[sid]]
        sent = [sentence_stats(tokenize_13a(e.text), ref_toks) for e in entries]
        stats.append(sent)
        gains.append(np.array([corpus_bleu(s).value for s in sent]))

    def bleu_of_weights(weights: np.ndarray) -> float:
        total = NGramStats.zero()
        for sid in range(num_sentences):
            pick = int(np.argmax(matrix.values[sid] @ weights))
            total = total + stats[sid][pick]
        return corpus_bleu(total).value

    lam = _init_array(config, names)
    history: List[Tuple[WeightVector, float]] = []

    def record(weights: np.ndarray) -> None:
        wv = WeightVector(names, tuple(float(w) for w in weights))
        history.append((wv, bleu_of_weights(weights)))

    record(lam)
    rng = np.random.default_rng(config.seed & 0xFFFFFFFFFFFFFFFF)
    for _ in range(config.epochs):
        order = rng.permutation(num_sentences)
        weight_sum = np.zeros_like(lam)
        updates = 0
        for sid in order:
            lam, updated = _update_on_sentence(
                lam, matrix.values[sid], gains[sid], config.c
            )
            if updated:
                weight_sum += lam
                updates += 1
        averaged = weight_sum / updates if updates else lam.copy()
        record(averaged)

    best_epoch = 0
    for epoch in range(1, len(history)):
        if history[epoch][1] > history[best_epoch][1]:
            best_epoch = epoch
    return TuneRun(history[best_epoch][0], tuple(history), best_epoch)


def evaluate_weights(
    matrix: FeatureMatrix,
    corpus: NBestCorpus,
    refs: ReferenceSet,
    weights: WeightVector,
) -> float:
    """Corpus BLEU of the per-sentence argmax selection under these weights."""
    if weights.feature_names != matrix.feature_names:
        raise ValueError("weight vector does not match matrix columns")
    _check_aligned(matrix, corpus, refs)
    w = weights.as_array()
    total = NGramStats.zero()
    for sid, entries in enumerate(corpus.lists):
        pick = int(np.argmax(matrix.values[sid] @ w))
        ref_toks = [tokenize_13a(r) for r in refs.refs[sid]]
        total = total + sentence_stats(tokenize_13a(entries[pick].text), ref_toks)
    return corpus_bleu(total).value


def write_weights(
    weights: WeightVector,
    out: TextIO,
    best_epoch: Optional[int] = None,
    tune_bleu: Optional[float] = None,
) -> None:
    """``NAME<TAB>WEIGHT`` per line in column order, plus a trailer comment."""
    for name, w in zip(weights.feature_names, weights.weights):
        out.write(f"{name}\t{repr(float(w))}\n")
    if best_epoch is not None and tune_bleu is not None:
        out.write(f"#best_epoch\t{best_epoch}\t#tune_bleu\t{tune_bleu:.4f}\n")


def load_weights(stream: Iterable[str]) -> WeightVector:
    names: List[str] = []
    values: List[float] = []
    for lineno, raw in enumerate(stream, 1):
        line = raw.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected NAME<TAB>WEIGHT")
        names.append(parts[0])
        values.append(float(parts[1]))
    return WeightVector(tuple(names), tuple(values))
