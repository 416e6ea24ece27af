"""Data model and bit-exact I/O for n-best lists, bitext and score tables.

File formats (all UTF-8, ``\\n`` line endings):

* n-best list, one hypothesis per line in the Moses convention::

      SID ||| TEXT ||| NAME= VALUE [NAME= VALUE ...] ||| TOTAL

  with a single space on each side of every ``|||``.  SIDs are base-10,
  non-decreasing and dense from 0; ranks follow order of appearance.
  Duplicate hypothesis texts are kept as-is.

* external score table: ``SID<TAB>RANK<TAB>SCORE``, no header row.

* pseudo-label output: aligned ``.src``/``.tgt`` files, or a two-column
  ``SOURCE<TAB>TARGET`` TSV.

Text is carried verbatim (no unicode normalization); everything loaded here
is immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, TextIO, Tuple

SEP = " ||| "


class FormatError(ValueError):
    """An input stream violates its file-format contract."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class NBestEntry:
    """One hypothesis of an n-best list, with the scores its generator emitted."""

    sentence_id: int
    rank: int
    text: str
    teacher_scores: Dict[str, float]
    total: float

    def __post_init__(self):
        if self.sentence_id < 0 or self.rank < 0:
            raise ValueError("sentence_id and rank must be non-negative")
        if "\n" in self.text or "\r" in self.text:
            raise ValueError("hypothesis text must not contain newlines")
        if "|||" in self.text:
            raise ValueError("hypothesis text must not contain '|||'")


@dataclass(frozen=True)
class NBestCorpus:
    """All hypotheses per source sentence; index into ``lists`` is the sentence id."""

    lists: Tuple[Tuple[NBestEntry, ...], ...]

    def __post_init__(self):
        if not self.lists:
            raise ValueError("no sentences")
        if any(not entries for entries in self.lists):
            raise ValueError("empty hypothesis list")

    @property
    def num_sentences(self) -> int:
        return len(self.lists)

    @property
    def n_max(self) -> int:
        return max(len(entries) for entries in self.lists)

    def texts(self, sentence_id: int) -> List[str]:
        return [e.text for e in self.lists[sentence_id]]


@dataclass(frozen=True)
class SourceCorpus:
    """Source sentences; index is the sentence id."""

    sentences: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class ReferenceSet:
    """Per-sentence reference translations (one or more per sentence)."""

    refs: Tuple[Tuple[str, ...], ...]

    def __post_init__(self):
        if any(not r for r in self.refs):
            raise ValueError("every sentence needs at least one reference")
        if any(not text.strip() for r in self.refs for text in r):
            raise ValueError("reference strings must be non-empty after trimming")

    @property
    def num_sentences(self) -> int:
        return len(self.refs)


@dataclass(frozen=True)
class ExternalScoreTable:
    """Out-of-process model scores keyed by (sentence_id, rank)."""

    feature_name: str
    scores: Dict[Tuple[int, int], float]

    def validate_against(self, corpus: NBestCorpus) -> None:
        """Check that the key set exactly covers the corpus (no missing, no extra)."""
        corpus_keys = {
            (sid, rank)
            for sid, entries in enumerate(corpus.lists)
            for rank in range(len(entries))
        }
        table_keys = set(self.scores)
        missing = sorted(corpus_keys - table_keys)
        extra = sorted(table_keys - corpus_keys)
        if missing or extra:
            parts = []
            if missing:
                parts.append("missing " + ", ".join(f"({s},{r})" for s, r in missing[:5]))
            if extra:
                parts.append("extra " + ", ".join(f"({s},{r})" for s, r in extra[:5]))
            raise ValueError(
                f"score table {self.feature_name!r} does not match corpus: "
                + "; ".join(parts)
            )


def _parse_float(token: str, lineno: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise FormatError(f"unparseable {what}: {token!r}", lineno) from None


def _parse_scores(fld: str, lineno: int) -> Dict[str, float]:
    scores: Dict[str, float] = {}
    tokens = fld.split()
    if len(tokens) % 2 != 0:
        raise FormatError("score field must be 'NAME= VALUE' pairs", lineno)
    for i in range(0, len(tokens), 2):
        name_tok = tokens[i]
        if not name_tok.endswith("=") or len(name_tok) == 1:
            raise FormatError(f"bad score name token {name_tok!r}", lineno)
        name = name_tok[:-1]
        if name in scores:
            raise FormatError(f"duplicate score name {name!r}", lineno)
        scores[name] = _parse_float(tokens[i + 1], lineno, f"score {name!r}")
    return scores


def load_nbest(stream: Iterable[str]) -> NBestCorpus:
    """Parse a Moses-convention n-best stream into an NBestCorpus.

    Ranks are assigned by order of appearance within each sentence id.
    Raises FormatError (with the offending line number) on malformed lines,
    decreasing or non-dense sentence ids, or an empty stream.
    """
    lists: List[List[NBestEntry]] = []
    for lineno, raw in enumerate(stream, 1):
        line = raw.rstrip("\n")
        fields = line.split(SEP)
        if len(fields) != 4:
            raise FormatError(
                f"expected 4 ' ||| '-separated fields, got {len(fields)}", lineno
            )
        sid_str, text, score_fld, total_str = fields
        try:
            sid = int(sid_str)
        except ValueError:
            raise FormatError(f"bad sentence id {sid_str!r}", lineno) from None
        if sid < 0:
            raise FormatError(f"negative sentence id {sid}", lineno)
        if "|||" in text:
            raise FormatError("hypothesis text contains '|||'", lineno)
        cur = len(lists) - 1
        if sid == cur + 1:
            lists.append([])
        elif sid < cur:
            raise FormatError(f"sentence id {sid} after {cur}: ids must be non-decreasing", lineno)
        elif sid > cur + 1:
            raise FormatError(f"non-dense sentence ids: jump from {cur} to {sid}", lineno)
        scores = _parse_scores(score_fld, lineno)
        total = _parse_float(total_str, lineno, "total")
        lists[sid].append(NBestEntry(sid, len(lists[sid]), text, scores, total))
    if not lists:
        raise FormatError("no sentences")
    return NBestCorpus(tuple(tuple(entries) for entries in lists))


def _fmt(value: float) -> str:
    # repr round-trips doubles exactly, keeping load/write/load the identity
    return repr(float(value))


def write_nbest(corpus: NBestCorpus, out: TextIO) -> None:
    """Serialize an NBestCorpus; the exact dual of load_nbest."""
    for entries in corpus.lists:
        for e in entries:
            score_fld = " ".join(f"{k}= {_fmt(v)}" for k, v in e.teacher_scores.items())
            out.write(f"{e.sentence_id}{SEP}{e.text}{SEP}{score_fld}{SEP}{_fmt(e.total)}\n")


def load_scores(stream: Iterable[str], feature_name: str) -> ExternalScoreTable:
    """Parse a ``SID<TAB>RANK<TAB>SCORE`` stream (order-insensitive)."""
    scores: Dict[Tuple[int, int], float] = {}
    for lineno, raw in enumerate(stream, 1):
        line = raw.rstrip("\n")
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError("expected SID<TAB>RANK<TAB>SCORE", lineno)
        try:
            sid = int(parts[0])
            rank = int(parts[1])
        except ValueError:
            raise FormatError(f"bad id/rank: {parts[0]!r}, {parts[1]!r}", lineno) from None
        if sid < 0 or rank < 0:
            raise FormatError(f"negative id/rank ({sid},{rank})", lineno)
        score = _parse_float(parts[2], lineno, "score")
        if not math.isfinite(score):
            raise FormatError(f"non-finite score {parts[2]!r}", lineno)
        key = (sid, rank)
        if key in scores:
            raise FormatError(f"duplicate key ({sid},{rank})", lineno)
        scores[key] = score
    return ExternalScoreTable(feature_name, scores)


def _read_lines(stream: Iterable[str], name: str) -> List[str]:
    lines = [raw.rstrip("\n") for raw in stream]
    for i, line in enumerate(lines):
        if not line.strip():
            raise FormatError(f"empty line in {name} stream", i + 1)
    return lines


def load_parallel(
    source_stream: Iterable[str], target_stream: Iterable[str]
) -> Tuple[SourceCorpus, ReferenceSet]:
    """Load aligned one-sentence-per-line bitext; line i becomes sentence id i."""
    src = _read_lines(source_stream, "source")
    tgt = _read_lines(target_stream, "target")
    if len(src) != len(tgt):
        raise FormatError(f"line count mismatch {len(src)} vs {len(tgt)}")
    return SourceCorpus(tuple(src)), ReferenceSet(tuple((t,) for t in tgt))


def load_references(streams: Sequence[Iterable[str]]) -> ReferenceSet:
    """Zip one or more aligned reference streams into a multi-reference set."""
    if not streams:
        raise ValueError("at least one reference stream required")
    columns = [_read_lines(s, f"reference {i}") for i, s in enumerate(streams)]
    counts = {len(c) for c in columns}
    if len(counts) > 1:
        raise FormatError(
            "line count mismatch " + " vs ".join(str(len(c)) for c in columns)
        )
    return ReferenceSet(tuple(zip(*columns)))


def load_sources(stream: Iterable[str]) -> SourceCorpus:
    return SourceCorpus(tuple(_read_lines(stream, "source")))


def write_pseudo_labels(
    sources: SourceCorpus,
    labels: Mapping[int, str],
    out_prefix: str | Path,
    fmt: str = "tsv",
) -> List[Path]:
    """Emit (source, label) pairs in sentence-id order; byte-identical across runs.

    ``fmt`` is ``"parallel"`` (aligned ``.src``/``.tgt`` files) or ``"tsv"``
    (two-column ``SOURCE<TAB>TARGET``).  Returns the written paths.
    """
    n = len(sources)
    have = set(labels)
    want = set(range(n))
    if want - have:
        raise ValueError(f"missing label for sentence {min(want - have)}")
    if have - want:
        raise ValueError(f"label for unknown sentence {min(have - want)}")
    ordered = [labels[i] for i in range(n)]
    for i, lab in enumerate(ordered):
        if "\n" in lab or "\r" in lab:
            raise ValueError(f"label for sentence {i} contains a newline")
    prefix = str(out_prefix)
    if fmt in ("parallel", "parallel-files"):
        src_path = Path(prefix + ".src")
        tgt_path = Path(prefix + ".tgt")
        with open(src_path, "w", encoding="utf-8", newline="\n") as f:
            for s in sources.sentences:
                f.write(s + "\n")
        with open(tgt_path, "w", encoding="utf-8", newline="\n") as f:
            for lab in ordered:
                f.write(lab + "\n")
        return [src_path, tgt_path]
    if fmt == "tsv":
        for i, (s, lab) in enumerate(zip(sources.sentences, ordered)):
            if "\t" in lab:
                raise ValueError(f"label for sentence {i} contains a tab (tsv format)")
            if "\t" in s:
                raise ValueError(f"source sentence {i} contains a tab (tsv format)")
        tsv_path = Path(prefix + ".tsv")
        with open(tsv_path, "w", encoding="utf-8", newline="\n") as f:
            for s, lab in zip(sources.sentences, ordered):
                f.write(f"{s}\t{lab}\n")
        return [tsv_path]
    raise ValueError(f"unknown output format {fmt!r}")
