"""Log-linear reranking, sparse model selection and oracle analysis.

Reranking selects, per sentence, the hypothesis with the highest weighted
feature sum; all ties resolve to the lowest rank so every operation here is
deterministic.  Model selection keeps the k features with the largest
absolute weight (name-lexicographic tie-break).  Oracle selection is greedy
per sentence by smoothed sentence BLEU -- the corpus-level combinatorial
oracle is out of scope -- and the beam sweep reports anti-oracle / top-1 /
oracle corpus BLEU over nested prefix truncations of the n-best lists.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .corpus import NBestCorpus, ReferenceSet
from .features import FeatureMatrix
from .metrics import (
    BleuScore,
    NGramStats,
    corpus_bleu,
    sentence_stats,
    tokenize_13a,
)
from .mira import WeightVector

ORACLE_MODES = ("oracle", "anti_oracle")


@dataclass(frozen=True)
class SelectionMask:
    """The feature subset a reranker is restricted to."""

    active: frozenset
    k: int


@dataclass(frozen=True)
class RerankResult:
    """Per-sentence selected ranks/texts; index is the sentence id."""

    selections: Tuple[int, ...]
    selected_texts: Tuple[str, ...]
    corpus_score: Optional[BleuScore] = None


@dataclass(frozen=True)
class SweepRow:
    n: int
    anti_oracle: float
    top1: float
    oracle: float


def select_models(weights: WeightVector, k: int) -> SelectionMask:
    """Keep the k largest-magnitude features; ties break lexicographically."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(
        zip(weights.feature_names, weights.weights),
        key=lambda nw: (-abs(nw[1]), nw[0]),
    )
    active = frozenset(name for name, _ in ranked[: min(k, len(ranked))])
    return SelectionMask(active, k)


def _masked_weights(weights: WeightVector, mask: Optional[SelectionMask]) -> np.ndarray:
    w = weights.as_array()
    if mask is None:
        return w
    unknown = mask.active - set(weights.feature_names)
    if unknown:
        raise ValueError(f"mask names unknown features: {sorted(unknown)}")
    keep = np.array(
        [1.0 if name in mask.active else 0.0 for name in weights.feature_names]
    )
    return w * keep


def _score_selection(
    corpus: NBestCorpus, refs: ReferenceSet, selections: Sequence[int]
) -> BleuScore:
    total = NGramStats.zero()
    for sid, pick in enumerate(selections):
        ref_toks = [tokenize_13a(r) for r in refs.refs[sid]]
        total = total + sentence_stats(
            tokenize_13a(corpus.lists[sid][pick].text), ref_toks
        )
    return corpus_bleu(total)


def rerank(
    matrix: FeatureMatrix,
    corpus: NBestCorpus,
    weights: WeightVector,
    mask: Optional[SelectionMask] = None,
    refs: Optional[ReferenceSet] = None,
) -> RerankResult:
    """Select the argmax hypothesis per sentence under (optionally masked) weights."""
    if weights.feature_names != matrix.feature_names:
        raise ValueError("weight vector does not match matrix columns")
    matrix.validate_against(corpus)
    w = _masked_weights(weights, mask)
    selections = tuple(int(np.argmax(arr @ w)) for arr in matrix.values)
    texts = tuple(
        corpus.lists[sid][pick].text for sid, pick in enumerate(selections)
    )
    score = None
    if refs is not None:
        if refs.num_sentences != corpus.num_sentences:
            raise ValueError("references do not cover the corpus")
        score = _score_selection(corpus, refs, selections)
    return RerankResult(selections, texts, score)


def _per_hypothesis_bleu(
    corpus: NBestCorpus, refs: ReferenceSet
) -> Tuple[List[List[NGramStats]], List[List[float]]]:
    stats: List[List[NGramStats]] = []
    values: List[List[float]] = []
    for sid, entries in enumerate(corpus.lists):
        ref_toks = [tokenize_13a(r) for r in refs.refs[sid]]
        sent = [sentence_stats(tokenize_13a(e.text), ref_toks) for e in entries]
        stats.append(sent)
        values.append([corpus_bleu(s).value for s in sent])
    return stats, values


def _extreme_index(scores: Sequence[float], highest: bool) -> int:
    best = 0
    for i in range(1, len(scores)):
        if (scores[i] > scores[best]) if highest else (scores[i] < scores[best]):
            best = i
    return best


def oracle_select(
    corpus: NBestCorpus,
    refs: ReferenceSet,
    mode: str = "oracle",
    metric: str = "sentence_bleu",
) -> RerankResult:
    """Greedy per-sentence best (oracle) or worst (anti-oracle) selection."""
    if mode not in ORACLE_MODES:
        raise ValueError(f"mode must be one of {ORACLE_MODES}")
    if metric != "sentence_bleu":
        raise ValueError(f"unsupported oracle metric {metric!r}")
    if refs.num_sentences != corpus.num_sentences:
        raise ValueError("references do not cover the corpus")
    _, values = _per_hypothesis_bleu(corpus, refs)
    highest = mode == "oracle"
    selections = tuple(_extreme_index(v, highest) for v in values)
    texts = tuple(
        corpus.lists[sid][pick].text for sid, pick in enumerate(selections)
    )
    return RerankResult(selections, texts, _score_selection(corpus, refs, selections))


def beam_sweep(
    corpus: NBestCorpus, refs: ReferenceSet, sizes: Sequence[int]
) -> Tuple[List[SweepRow], int]:
    """Anti-oracle / top-1 / oracle corpus BLEU at each list truncation size.

    Lists shorter than a requested size are used as-is; the second return
    value counts those truncation events.
    """
    if not sizes:
        raise ValueError("no sweep sizes given")
    if any(n < 1 for n in sizes):
        raise ValueError("sweep sizes must be positive")
    if list(sizes) != sorted(sizes):
        raise ValueError("sweep sizes must be non-decreasing")
    if max(sizes) > corpus.n_max:
        raise ValueError(
            f"sweep size {max(sizes)} exceeds the longest list ({corpus.n_max})"
        )
    if refs.num_sentences != corpus.num_sentences:
        raise ValueError("references do not cover the corpus")
    stats, values = _per_hypothesis_bleu(corpus, refs)
    rows = []
    short_lists = 0
    for n in sizes:
        anti = NGramStats.zero()
        top1 = NGramStats.zero()
        oracle = NGramStats.zero()
        for sid in range(corpus.num_sentences):
            avail = len(values[sid])
            if avail < n:
                short_lists += 1
            m = min(n, avail)
            prefix = values[sid][:m]
            top1 = top1 + stats[sid][0]
            oracle = oracle + stats[sid][_extreme_index(prefix, True)]
            anti = anti + stats[sid][_extreme_index(prefix, False)]
        rows.append(
            SweepRow(
                n,
                corpus_bleu(anti).value,
                corpus_bleu(top1).value,
                corpus_bleu(oracle).value,
            )
        )
    return rows, short_lists


def format_sweep(rows: Sequence[SweepRow]) -> str:
    """Render sweep rows as the 4-column TSV (two decimal places)."""
    return "".join(
        f"{r.n}\t{r.anti_oracle:.2f}\t{r.top1:.2f}\t{r.oracle:.2f}\n" for r in rows
    )
