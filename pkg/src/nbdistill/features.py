"""Per-hypothesis feature matrix assembly.

A feature matrix holds, for every sentence, an (n_hypotheses x M) array of
real-valued model scores, column-indexed by feature name.  Columns come from
three places, in this order: passthroughs of the scores already present in
the n-best file, natively computed features (consensus utilities and length
ballast), and external score tables produced out of process.

Native features:

* ``mbr_bleu`` / ``mbr_chrf`` -- consensus utility of each hypothesis: the
  mean sentence BLEU / chrF of the hypothesis scored against every *other*
  member of the same n-best list (uniform weights, self-pair excluded; a
  single-member list scores against itself, i.e. 100).  Duplicates stay in
  the list and legitimately concentrate consensus mass.
* ``len`` -- 13a token count of the hypothesis.
* ``len_ratio`` -- token count divided by the mean token count of the list.

On-disk format is a plain TSV: a ``#features`` header naming the columns,
then one ``SID<TAB>RANK<TAB>V1..VM`` row per hypothesis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, TextIO, Tuple

import numpy as np

from .corpus import ExternalScoreTable, FormatError, NBestCorpus
from .metrics import corpus_bleu, sentence_chrf, sentence_stats, tokenize_13a

NATIVE_FEATURES = ("mbr_bleu", "mbr_chrf", "len", "len_ratio")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Immutable per-sentence score arrays with a canonical column order."""

    feature_names: Tuple[str, ...]
    values: Tuple[np.ndarray, ...]

    @property
    def num_sentences(self) -> int:
        return len(self.values)

    @property
    def num_features(self) -> int:
        return len(self.feature_names)

    def validate_against(self, corpus: NBestCorpus) -> None:
        if self.num_sentences != corpus.num_sentences:
            raise ValueError(
                f"matrix has {self.num_sentences} sentences, corpus has "
                f"{corpus.num_sentences}"
            )
        for sid, (arr, entries) in enumerate(zip(self.values, corpus.lists)):
            if len(arr) != len(entries):
                raise ValueError(
                    f"sentence {sid}: matrix has {len(arr)} rows, corpus has "
                    f"{len(entries)} hypotheses"
                )


def mbr_utility(texts: Sequence[str], utility: str = "sentence_bleu") -> List[float]:
    """Consensus utility of each hypothesis against the rest of its list."""
    if not texts:
        raise ValueError("empty hypothesis list")
    n = len(texts)
    if utility == "sentence_bleu":
        toks = [tokenize_13a(t) for t in texts]

        def pair(i: int, j: int) -> float:
            return corpus_bleu(sentence_stats(toks[i], [toks[j]])).value

    elif utility == "sentence_chrf":

        def pair(i: int, j: int) -> float:
            return sentence_chrf(texts[i], [texts[j]]).value

    else:
        raise ValueError(f"unknown MBR utility {utility!r}")
    if n == 1:
        return [pair(0, 0)]
    return [
        sum(pair(i, j) for j in range(n) if j != i) / (n - 1) for i in range(n)
    ]


def length_features(texts: Sequence[str]) -> Tuple[List[float], List[float]]:
    """13a token counts and their ratio to the list's mean count."""
    if not texts:
        raise ValueError("empty hypothesis list")
    counts = [float(len(tokenize_13a(t))) for t in texts]
    mean = sum(counts) / len(counts)
    ratios = [c / mean if mean > 0 else 1.0 for c in counts]
    return counts, ratios


def passthrough_features(
    corpus: NBestCorpus, names: Sequence[str]
) -> List[Tuple[str, List[List[float]]]]:
    """Columns of scores the n-best file already carries, in requested order.

    The reserved name ``total`` reads the generating model's combined score;
    any other name looks up the per-entry score map.
    """
    columns = []
    for name in names:
        per_sentence: List[List[float]] = []
        for entries in corpus.lists:
            row = []
            for e in entries:
                if name == "total":
                    value = e.total
                elif name in e.teacher_scores:
                    value = e.teacher_scores[name]
                else:
                    raise ValueError(
                        f"score {name!r} missing at sentence {e.sentence_id} "
                        f"rank {e.rank}"
                    )
                row.append(value)
            per_sentence.append(row)
        columns.append((name, per_sentence))
    return columns


def assemble_matrix(
    corpus: NBestCorpus,
    passthrough: Sequence[str] = (),
    native: Sequence[str] = (),
    external_tables: Sequence[ExternalScoreTable] = (),
) -> FeatureMatrix:
    """Fan all configured feature sources into one validated matrix.

    Column order is: passthrough names, native features, external tables,
    each in the order given.  Every external table must cover exactly the
    corpus's (sentence, rank) set; feature names must be unique; every cell
    must be finite.
    """
    columns: List[Tuple[str, List[List[float]]]] = []
    columns.extend(passthrough_features(corpus, passthrough))

    for feature in native:
        if feature not in NATIVE_FEATURES:
            raise ValueError(f"unknown native feature {feature!r}")
    need_lengths = "len" in native or "len_ratio" in native
    native_cols: Dict[str, List[List[float]]] = {name: [] for name in native}
    for entries in corpus.lists:
        texts = [e.text for e in entries]
        if "mbr_bleu" in native_cols:
            native_cols["mbr_bleu"].append(mbr_utility(texts, "sentence_bleu"))
        if "mbr_chrf" in native_cols:
            native_cols["mbr_chrf"].append(mbr_utility(texts, "sentence_chrf"))
        if need_lengths:
            counts, ratios = length_features(texts)
            if "len" in native_cols:
                native_cols["len"].append(counts)
            if "len_ratio" in native_cols:
                native_cols["len_ratio"].append(ratios)
    for name in native:
        columns.append((name, native_cols[name]))

    for table in external_tables:
        table.validate_against(corpus)
        per_sentence = [
            [table.scores[(sid, rank)] for rank in range(len(entries))]
            for sid, entries in enumerate(corpus.lists)
        ]
        columns.append((table.feature_name, per_sentence))

    if not columns:
        raise ValueError("zero features configured")
    names = tuple(name for name, _ in columns)
    seen = set()
    for name in names:
        if name in seen:
            raise ValueError(f"duplicate feature name {name!r}")
        seen.add(name)

    values = []
    for sid in range(corpus.num_sentences):
        arr = np.array(
            [col[sid] for _, col in columns], dtype=np.float64
        ).T.copy()
        if not np.isfinite(arr).all():
            raise ValueError(f"non-finite feature value at sentence {sid}")
        arr.flags.writeable = False
        values.append(arr)
    return FeatureMatrix(names, tuple(values))


def write_matrix(matrix: FeatureMatrix, out: TextIO) -> None:
    out.write("#features\t" + "\t".join(matrix.feature_names) + "\n")
    for sid, arr in enumerate(matrix.values):
        for rank in range(len(arr)):
            row = "\t".join(repr(float(v)) for v in arr[rank])
            out.write(f"{sid}\t{rank}\t{row}\n")


def load_matrix(stream: Iterable[str]) -> FeatureMatrix:
    """Read a matrix TSV back; the exact dual of write_matrix."""
    it = iter(stream)
    try:
        header = next(it).rstrip("\n")
    except StopIteration:
        raise FormatError("empty matrix file") from None
    parts = header.split("\t")
    if parts[0] != "#features" or len(parts) < 2:
        raise FormatError("matrix file must start with a '#features' header", 1)
    names = tuple(parts[1:])
    if len(set(names)) != len(names):
        raise FormatError("duplicate feature name in header", 1)
    rows: List[List[List[float]]] = []
    for lineno, raw in enumerate(it, 2):
        fields = raw.rstrip("\n").split("\t")
        if len(fields) != 2 + len(names):
            raise FormatError(
                f"expected {2 + len(names)} columns, got {len(fields)}", lineno
            )
        try:
            sid = int(fields[0])
            rank = int(fields[1])
            vals = [float(v) for v in fields[2:]]
        except ValueError:
            raise FormatError("unparseable matrix row", lineno) from None
        if any(not np.isfinite(v) for v in vals):
            raise FormatError("non-finite feature value", lineno)
        if sid == len(rows):
            rows.append([])
        elif sid != len(rows) - 1:
            raise FormatError("sentence ids must be dense and non-decreasing", lineno)
        if rank != len(rows[sid]):
            raise FormatError(
                f"rank {rank} out of order (expected {len(rows[sid])})", lineno
            )
        rows[sid].append(vals)
    if not rows:
        raise FormatError("matrix has no rows")
    values = []
    for sent in rows:
        arr = np.array(sent, dtype=np.float64)
        arr.flags.writeable = False
        values.append(arr)
    return FeatureMatrix(names, tuple(values))
