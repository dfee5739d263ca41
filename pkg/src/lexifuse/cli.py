"""Command-line pipeline: synth -> validate -> train -> export -> eval.

Every artifact carries attribution headers (tool version, seed, config
hash) and every run with the same inputs and seed writes byte-identical
outputs.  Error exit codes by category: 2 usage/configuration, 3
parse/domain, 4 numeric.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, LexifuseError
from .evaluation import (
    coverage,
    evaluate,
    make_featurizer,
    read_corpus,
    restrict_vocabulary,
    split_corpus,
    synth_generate,
    write_corpus,
    write_report,
)
from .lexica import (
    COMPONENTS,
    LexiconView,
    ViewSchema,
    build_vocabulary,
    compute_prior,
    parse_lexicon,
    parse_schema,
    write_lexicon,
)
from .model import load_checkpoint, observations_from_views
from .rng import RngStream
from .training import TrainConfig, config_hash, load_train_config, train
from .unified import export_lexicon, read_unified, write_unified


def thread_cap() -> int:
    """Parallelism ceiling from LEXIFUSE_THREADS (everything here is
    single-threaded, so any positive cap is honored)."""
    raw = os.environ.get("LEXIFUSE_THREADS")
    if raw is None:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"LEXIFUSE_THREADS must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"LEXIFUSE_THREADS must be >= 1, got {cap}")
    return cap


def _split_view_arg(arg: str) -> tuple[str, ViewSchema | None]:
    if ":" in arg:
        path, schema_text = arg.split(":", 1)
        return path, parse_schema(schema_text)
    return arg, None


def _load_views(view_args: list[str]) -> list[LexiconView]:
    views = []
    for arg in view_args:
        path, schema = _split_view_arg(arg)
        views.append(parse_lexicon(path, schema))
    return views


def _observations(views: list[LexiconView]):
    vocab = build_vocabulary(views)
    priors = {w: compute_prior(w, views, vocab) for w in vocab.sorted_words()}
    return vocab, observations_from_views(views, vocab, priors)


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = synth_generate(
        args.n_words,
        args.views_per_family,
        args.noise,
        args.n_texts,
        args.text_len,
        RngStream(args.seed),
    )
    for view in data.views:
        write_lexicon(view, out / f"view_{view.id}.tsv")
    write_corpus(out / "corpus.tsv", data.corpus, seed=args.seed)
    truth_lines = [f"# ground-truth word classes (lexifuse {__version__})", f"# seed: {args.seed}"]
    truth_lines += [
        f"{w}\t{COMPONENTS[c]}" for w, c in sorted(data.word_classes.items())
    ]
    (out / "truth.tsv").write_text("\n".join(truth_lines) + "\n", encoding="utf-8")
    if args.train_fraction is not None:
        n_train = round(args.train_fraction * len(data.corpus))
        train_c, test_c = split_corpus(data.corpus, n_train)
        write_corpus(out / "corpus_train.tsv", train_c, seed=args.seed)
        write_corpus(out / "corpus_test.tsv", test_c, seed=args.seed)
    print(
        f"wrote {len(data.views)} views, {len(data.corpus)} texts, "
        f"{args.n_words} words to {out}"
    )
    return 0


def cmd_validate(args) -> int:
    for arg in args.views:
        path, schema = _split_view_arg(arg)
        view = parse_lexicon(path, schema)
        extras = ""
        if view.family.n_raters is not None:
            extras = f" ({view.family.n_raters} raters, {view.family.n_points} points)"
        print(f"{view.id}: {len(view)} words, family {view.family.tag}{extras}")
    build_vocabulary(_load_views(args.views))
    print("ok")
    return 0


def cmd_train(args) -> int:
    config = load_train_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    views = _load_views(args.views)
    vocab, obs = _observations(views)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(
        vocab,
        obs,
        config,
        checkpoint_path=out / "checkpoint.json",
        log_path=out / "training_log.csv",
    )
    final = result.log[-1]["mean_elbo"] if result.log else float("nan")
    print(
        f"trained {result.epochs_run} epochs on {len(obs)} words "
        f"(final mean ELBO {final:.4f}); checkpoint in {out}"
    )
    return 0


def cmd_export(args) -> int:
    state, meta = load_checkpoint(args.checkpoint)
    views = _load_views(args.views)
    vocab, obs = _observations(views)
    entries = export_lexicon(state, obs)
    extra = meta.get("extra") or {}
    write_unified(
        args.out,
        entries,
        seed=extra.get("seed"),
        config_hash=meta.get("config_hash") or None,
    )
    print(f"exported {len(entries)} words to {args.out}")
    return 0


def cmd_eval(args) -> int:
    views = _load_views(args.views) if args.views else []
    unified = read_unified(args.unified) if args.unified else None
    if args.restrict is not None:
        if unified is None:
            raise ConfigError("--restrict needs --unified")
        match = [v for v in views if v.id == args.restrict]
        if not match:
            raise ConfigError(f"--restrict {args.restrict!r}: no such view loaded")
        unified = restrict_vocabulary(unified, match[0])
    featurizer = make_featurizer(args.mode, unified=unified, views=views)

    train_path, test_path = args.corpus
    corpus_train = read_corpus(train_path)
    corpus_test = read_corpus(test_path)
    k = max(corpus_train.n_classes, corpus_test.n_classes)
    corpus_train = dataclasses.replace(corpus_train, n_classes=k)
    corpus_test = dataclasses.replace(corpus_test, n_classes=k)

    acc = evaluate(corpus_train, corpus_test, featurizer)
    cov = coverage(featurizer, corpus_train)
    row = {
        "mode": args.mode,
        "dataset": args.dataset or Path(train_path).stem,
        "n_train": len(corpus_train),
        "n_test": len(corpus_test),
        "accuracy": acc,
        "coverage": cov,
        "feature_dim": featurizer.dim,
    }
    hash_source = unified.meta.get("config_hash") if unified is not None else None
    write_report(args.out, [row], seed=args.seed, config_hash=hash_source)
    print(
        f"mode {args.mode}: accuracy {acc:.4f}, coverage {cov:.1f}%, "
        f"feature_dim {featurizer.dim} -> {args.out}"
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexifuse",
        description="Fuse sentiment lexica into one polarity representation "
        "and evaluate it on text classification.",
        epilog="LEXIFUSE_THREADS caps parallelism (all stages are single-threaded).",
    )
    parser.add_argument("--version", action="version", version=f"lexifuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic views and a labeled corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-words", type=int, default=500)
    p.add_argument("--views-per-family", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--n-texts", type=int, default=2500)
    p.add_argument("--text-len", type=int, default=20)
    p.add_argument(
        "--train-fraction",
        type=float,
        default=None,
        help="also write corpus_train/corpus_test split at this fraction",
    )
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="parse view files and report their shape")
    p.add_argument("--views", nargs="+", required=True, metavar="PATH[:SCHEMA]")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="fit the fusion model on parsed views")
    p.add_argument("--views", nargs="+", required=True, metavar="PATH[:SCHEMA]")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="key = value training config file")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="write the unified lexicon from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--views", nargs="+", required=True, metavar="PATH[:SCHEMA]")
    p.add_argument("--out", required=True, help="output TSV path")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("eval", help="train/test a text classifier on one representation")
    p.add_argument(
        "--mode", required=True, help="fused-mean | fused-beta | single:<view> | concat"
    )
    p.add_argument("--corpus", nargs=2, required=True, metavar=("TRAIN", "TEST"))
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--unified", default=None, help="unified lexicon TSV (fused modes)")
    p.add_argument("--views", nargs="+", default=None, metavar="PATH[:SCHEMA]")
    p.add_argument("--restrict", default=None, metavar="VIEW_ID",
                   help="restrict the unified lexicon to one view's vocabulary")
    p.add_argument("--dataset", default=None, help="dataset name for the report")
    p.add_argument("--seed", type=int, default=None, help="recorded in the report header")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    try:
        thread_cap()
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except LexifuseError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
