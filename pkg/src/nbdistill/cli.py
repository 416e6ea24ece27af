"""Command-line interface.

Subcommands: evaluate, assemble, tune, rerank, oracle, distill, selftrain,
status.  All file outputs are byte-identical across runs on identical inputs
(tuning is seeded).
"""

from __future__ import annotations

import argparse
import sys

from . import corpus as corpus_io
from . import metrics
from .distill import kd_top1, ki_select, rerank_labels
from .features import assemble_matrix, load_matrix, write_matrix
from .mira import MiraConfig, load_weights, tune_mira, write_weights
from .pipeline import (
    HookError,
    PipelineConfig,
    run_selftrain,
    status_table,
)
from .rerank import beam_sweep, format_sweep, oracle_select, rerank, select_models


def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def _load_refs(paths: str) -> corpus_io.ReferenceSet:
    streams = [_read_lines(p) for p in paths.split(",") if p]
    return corpus_io.load_references(streams)


def _load_nbest(path: str) -> corpus_io.NBestCorpus:
    with open(path, encoding="utf-8") as f:
        return corpus_io.load_nbest(f)


def _out(path: str):
    return open(path, "w", encoding="utf-8", newline="\n")


def cmd_evaluate(args) -> int:
    hyps = _read_lines(args.hyp)
    ref_files = [p for p in args.refs.split(",") if p]
    ref_columns = [_read_lines(p) for p in ref_files]
    for col in ref_columns:
        if len(col) != len(hyps):
            raise ValueError(
                f"line count mismatch {len(hyps)} vs {len(col)}"
            )
    refs = list(zip(*ref_columns)) if hyps else []
    k = len(ref_files)
    if args.metric == "bleu":
        stats = metrics.corpus_stats(hyps, refs)
        value = metrics.corpus_bleu(stats).value
        label = "BLEU"
        signature = f"nrefs:{k}|case:mixed|eff:no|tok:13a|smooth:exp"
    else:
        value = metrics.corpus_chrf(zip(hyps, refs)).value
        label = "chrF"
        signature = f"nrefs:{k}|case:mixed|nc:{metrics.CHRF_CHAR_ORDER}|nw:0|beta:{int(metrics.CHRF_BETA)}|space:collapse"
    print(f"{label}\t{value:.4f}")
    print(f"#signature\t{signature}")
    return 0


def cmd_assemble(args) -> int:
    corpus = _load_nbest(args.nbest)
    passthrough = [n for n in (args.passthrough or "").split(",") if n]
    native = [n for n in (args.native or "").split(",") if n]
    tables = []
    for item in args.scores or []:
        name, _, path = item.partition("=")
        if not path:
            raise ValueError(f"--scores expects NAME=FILE, got {item!r}")
        with open(path, encoding="utf-8") as f:
            tables.append(corpus_io.load_scores(f, name))
    matrix = assemble_matrix(corpus, passthrough, native, tables)
    with _out(args.out) as f:
        write_matrix(matrix, f)
    return 0


def cmd_tune(args) -> int:
    with open(args.matrix, encoding="utf-8") as f:
        matrix = load_matrix(f)
    corpus = _load_nbest(args.nbest)
    refs = _load_refs(args.refs)
    config = MiraConfig(c=args.c, epochs=args.epochs, seed=args.seed, init=args.init)
    run = tune_mira(matrix, corpus, refs, config)
    with _out(args.out) as f:
        write_weights(
            run.best_weights,
            f,
            best_epoch=run.best_epoch,
            tune_bleu=run.history[run.best_epoch][1],
        )
    return 0


def _write_selections(result, out) -> None:
    for sid, (rank, text) in enumerate(zip(result.selections, result.selected_texts)):
        out.write(f"{sid}\t{rank}\t{text}\n")


def cmd_rerank(args) -> int:
    with open(args.matrix, encoding="utf-8") as f:
        matrix = load_matrix(f)
    corpus = _load_nbest(args.nbest)
    with open(args.weights, encoding="utf-8") as f:
        weights = load_weights(f)
    mask = None
    if args.top_k_models is not None:
        mask = select_models(weights, args.top_k_models)
    refs = _load_refs(args.refs) if args.refs else None
    result = rerank(matrix, corpus, weights, mask=mask, refs=refs)
    with _out(args.out) as f:
        _write_selections(result, f)
    if args.report:
        if result.corpus_score is not None:
            print(f"BLEU\t{result.corpus_score.value:.4f}")
        if mask is not None:
            print(f"#active\t{','.join(sorted(mask.active))}")
    return 0


def cmd_oracle(args) -> int:
    corpus = _load_nbest(args.nbest)
    refs = _load_refs(args.refs)
    mode = "anti_oracle" if args.mode == "anti" else "oracle"
    print(
        "note: greedy per-sentence selection by smoothed sentence BLEU "
        "(not a corpus-level oracle)",
        file=sys.stderr,
    )
    if args.sweep:
        sizes = [int(n) for n in args.sweep.split(",") if n]
        rows, short_lists = beam_sweep(corpus, refs, sizes)
        rendered = format_sweep(rows)
        if args.out:
            with _out(args.out) as f:
                f.write(rendered)
        else:
            sys.stdout.write(rendered)
        if short_lists:
            print(f"warning: {short_lists} truncated list(s)", file=sys.stderr)
        return 0
    result = oracle_select(corpus, refs, mode=mode)
    if args.out:
        with _out(args.out) as f:
            _write_selections(result, f)
    else:
        _write_selections(result, sys.stdout)
    print(f"BLEU\t{result.corpus_score.value:.4f}")
    return 0


def cmd_distill(args) -> int:
    corpus = _load_nbest(args.nbest)
    with open(args.src, encoding="utf-8") as f:
        sources = corpus_io.load_sources(f)
    if args.strategy == "kd":
        labels = kd_top1(corpus)
    elif args.strategy == "ki":
        if not args.orig_refs:
            raise ValueError("--strategy ki requires --orig-refs")
        labels = ki_select(corpus, _load_refs(args.orig_refs))
    else:
        if not (args.matrix and args.weights):
            raise ValueError("--strategy rerank requires --matrix and --weights")
        with open(args.matrix, encoding="utf-8") as f:
            matrix = load_matrix(f)
        with open(args.weights, encoding="utf-8") as f:
            weights = load_weights(f)
        mask = None
        if args.top_k_models is not None:
            mask = select_models(weights, args.top_k_models)
        labels = rerank_labels(matrix, corpus, weights, mask)
    paths = corpus_io.write_pseudo_labels(
        sources, labels.as_mapping(), args.out, args.format
    )
    for p in paths:
        print(p)
    return 0


def cmd_selftrain(args) -> int:
    config = PipelineConfig.from_file(args.config)
    best, reason = run_selftrain(config)
    print(f"stop_reason\t{reason}")
    print(f"best_iteration\t{best.iter}")
    print(f"dev_bleu\t{best.dev_bleu:.4f}")
    print(f"labels\t{best.labels_path}")
    return 0


def cmd_status(args) -> int:
    sys.stdout.write(status_table(args.workdir))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nbdistill",
        description="n-best reranking toolkit for distillation pseudo-labels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="corpus BLEU/chrF of a hypothesis file")
    p.add_argument("--hyp", required=True, help="hypothesis file, one sentence per line")
    p.add_argument("--refs", required=True, help="reference file(s), comma-separated")
    p.add_argument("--metric", choices=("bleu", "chrf"), default="bleu")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("assemble", help="build the per-hypothesis feature matrix")
    p.add_argument("--nbest", required=True)
    p.add_argument("--native", default="", help="comma list of mbr_bleu,mbr_chrf,len,len_ratio")
    p.add_argument("--passthrough", default="", help="comma list of n-best score names ('total' reserved)")
    p.add_argument("--scores", action="append", metavar="NAME=FILE",
                   help="external score table (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("tune", help="learn reranking weights with batch k-best MIRA")
    p.add_argument("--matrix", required=True)
    p.add_argument("--nbest", required=True)
    p.add_argument("--refs", required=True, help="tune reference file(s), comma-separated")
    p.add_argument("--c", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=("zeros", "uniform"), default="zeros")
    p.add_argument("--out", required=True, help="weights file to write")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("rerank", help="argmax selection under learned weights")
    p.add_argument("--matrix", required=True)
    p.add_argument("--nbest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--top-k-models", type=int, default=None,
                   help="restrict to the k largest-magnitude features")
    p.add_argument("--out", required=True, help="selections TSV (SID RANK TEXT)")
    p.add_argument("--refs", default=None)
    p.add_argument("--report", action="store_true", help="print corpus BLEU of the selection")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("oracle", help="greedy oracle/anti-oracle selection and beam sweeps")
    p.add_argument("--nbest", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--mode", choices=("oracle", "anti"), default="oracle")
    p.add_argument("--sweep", default=None, help="comma list of truncation sizes, e.g. 1,2,4,8")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("distill", help="emit pseudo-labels for a transfer set")
    p.add_argument("--strategy", choices=("kd", "ki", "rerank"), required=True)
    p.add_argument("--nbest", required=True)
    p.add_argument("--src", required=True, help="source sentences, aligned with the n-best list")
    p.add_argument("--matrix", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--top-k-models", type=int, default=None)
    p.add_argument("--orig-refs", default=None, help="original labels (for --strategy ki)")
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--format", choices=("parallel", "tsv"), default="tsv")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("selftrain", help="run the iterative self-training loop")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true",
                   help="explicitly allow resuming (re-runs always resume from markers)")
    p.set_defaults(func=cmd_selftrain)

    p = sub.add_parser("status", help="print the iteration ledger")
    p.add_argument("--workdir", required=True)
    p.set_defaults(func=cmd_status)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, HookError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
