"""Command-line entry point.

    scoregnn make-toy-corpus --seed 0 --pieces 10 --notes 200 --out toy/
    scoregnn build-graphs --notes toy/notes.tsv --out graphs/ --jobs 2
    scoregnn train --notes toy/notes.tsv --labels toy/labels.tsv --schema toy/schema.tsv \\
        --split toy/split.tsv --config train.cfg --set max_steps=50 --out run/
    scoregnn analyze --notes toy/notes.tsv --checkpoint run/best.ckpt --level onset --gate-nct --out pred.tsv
    scoregnn eval --notes toy/notes.tsv --labels toy/labels.tsv --checkpoint run/best.ckpt --out scores.tsv

Failures print one line ``error: <ExceptionClass>: <message>`` to stderr
and exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .graph import augmentations_for, build_graph, cache_filename, save_graph, transpose
from .inference import analyze, evaluate, export
from .ingest import group_by_piece, make_split, parse_label_table, parse_note_table, read_schema
from .model import Checkpoint
from .synthetic import generate
from .trainer import Corpus, TrainConfig, read_flat_config, train

log = logging.getLogger("scoregnn")


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scoregnn", description="Multi-task graph analysis of symbolic scores.")
    parser.add_argument("--version", action="version", version=f"scoregnn {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("make-toy-corpus", help="write a synthetic labelled corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pieces", type=_positive, default=10)
    p.add_argument("--notes", type=_positive, default=200, help="approximate notes per piece")
    p.add_argument("--mask-rate", type=float, default=0.1)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_make_toy_corpus)

    p = sub.add_parser("build-graphs", help="convert a note table into cached score graphs")
    p.add_argument("--notes", required=True, type=Path)
    p.add_argument("--transpositions", action="store_true", help="also cache every applicable transposition")
    p.add_argument("--jobs", type=_positive, default=1)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("train", help="train a model on one or more corpora")
    p.add_argument("--notes", required=True, action="append", type=Path, help="note table; repeat per corpus")
    p.add_argument("--labels", required=True, action="append", type=Path, help="label table; one per --notes")
    p.add_argument("--schema", required=True, type=Path)
    p.add_argument("--split", action="append", type=Path,
                   help="split file; give one per corpus or omit for a seeded random split")
    p.add_argument("--graph-cache", type=Path, help="directory written by build-graphs")
    p.add_argument("--config", type=Path, help="flat key=value file")
    p.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[],
                   metavar="KEY=VALUE", help="override a config value")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="predict every task for every note")
    p.add_argument("--notes", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--level", choices=("note", "onset"), default="note")
    p.add_argument("--gate-nct", action="store_true")
    p.add_argument("--pieces", nargs="+", help="restrict to these piece ids")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("eval", help="score a checkpoint against labelled corpora")
    p.add_argument("--notes", required=True, action="append", type=Path)
    p.add_argument("--labels", required=True, action="append", type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--split", action="append", type=Path, help="evaluate only the --subset pieces of this split")
    p.add_argument("--subset", choices=("train", "valid", "test"), default="test")
    p.add_argument("--level", choices=("note", "onset"), default="onset")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_eval)
    return parser


def cmd_make_toy_corpus(args) -> None:
    corpus = generate(args.seed, args.pieces, args.notes, mask_rate=args.mask_rate, label_noise=args.label_noise)
    paths = corpus.write(args.out, split_seed=args.seed)
    log.info("wrote %d pieces, %d notes to %s", len(corpus.pieces), len(corpus.notes), paths["notes"].parent)


def _build_piece(job):
    piece, notes, out, with_transpositions = job
    intervals = augmentations_for(notes) if with_transpositions else [(0, 0)]
    for interval in intervals:
        g = build_graph(notes if interval == (0, 0) else transpose(notes, *interval))
        save_graph(g, Path(out) / cache_filename(piece, interval))
    return piece, len(intervals)


def cmd_build_graphs(args) -> None:
    by_piece = group_by_piece(parse_note_table(args.notes))
    args.out.mkdir(parents=True, exist_ok=True)
    jobs = [(p, notes, args.out, args.transpositions) for p, notes in by_piece.items()]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            done = list(pool.map(_build_piece, jobs))
    else:
        done = [_build_piece(job) for job in jobs]
    log.info("cached %d graphs for %d pieces", sum(n for _, n in done), len(done))


def _pair(args, schema):
    if len(args.notes) != len(args.labels):
        raise ValueError("give exactly one --labels per --notes")
    splits = args.split or []
    if splits and len(splits) not in (1, len(args.notes)):
        raise ValueError("give one --split per corpus, or a single one shared by all")
    out = []
    for k, (notes_path, labels_path) in enumerate(zip(args.notes, args.labels)):
        notes = parse_note_table(notes_path)
        frames = parse_label_table(labels_path, schema, notes)
        split = splits[k] if len(splits) > 1 else (splits[0] if splits else None)
        out.append((notes_path.stem if len(args.notes) == 1 else f"{notes_path.parent.name}/{notes_path.stem}",
                    group_by_piece(notes), frames, split))
    return out


def cmd_train(args) -> None:
    values = read_flat_config(args.config) if args.config else {}
    values.update(dict(args.overrides))
    cfg = TrainConfig.from_mapping(values)
    schema = read_schema(args.schema)
    train_sets, valid_sets = [], []
    for name, notes, frames, split_path in _pair(args, schema):
        explicit = split_path if split_path is not None else None
        split = make_split(list(notes), cfg.seed, explicit=explicit)
        corpus = Corpus(name, notes, frames, cache_dir=args.graph_cache)
        train_sets.append(corpus.subset(split.train))
        valid_sets.append(corpus.subset(split.valid))
    result = train(cfg, train_sets, schema, valid=valid_sets, out_dir=args.out)
    log.info("best checkpoint at step %d", result.best.step)


def cmd_analyze(args) -> None:
    table = analyze(parse_note_table(args.notes), Checkpoint.load(args.checkpoint), args.level,
                    args.gate_nct, pieces=args.pieces)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    export(table, args.out)


def cmd_eval(args) -> None:
    model = Checkpoint.load(args.checkpoint).build_model()
    rows = []
    for name, notes, frames, split_path in _pair(args, model.schema):
        pieces = sorted(notes)
        if split_path is not None:
            pieces = sorted(getattr(make_split(pieces, 0, explicit=split_path), args.subset))
        scores = evaluate(model, {p: notes[p] for p in pieces}, frames, level=args.level)
        for task in model.schema:
            rows.append((name, task.name, task.metric, scores.get(task.name)))
        if "csr" in scores:
            rows.append((name, "roman_numeral", "csr", scores["csr"]))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", encoding="utf-8") as fh:
        fh.write("corpus\ttask\tmetric\tscore\n")
        for corpus, task, metric, score in rows:
            fh.write(f"{corpus}\t{task}\t{metric}\t{'' if score is None else f'{score:.6f}'}\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except KeyboardInterrupt:
        print("error: KeyboardInterrupt: interrupted", file=sys.stderr)
        return 130
    except Exception as err:  # noqa: BLE001 - every failure becomes one parsable line
        message = " ".join(str(err).split())
        print(f"error: {type(err).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
