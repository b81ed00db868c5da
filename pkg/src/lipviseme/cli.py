"""Command-line entry point.

Subcommands: lexicon, generate, train, eval, ablate, gradcheck.  Every
command is deterministic given its config file and seeds.  Config keys can
be overridden with dotted flags ("--model.tafm.lambda 0.1") or the common
shortcuts --lambda/--gamma/--beta/--seed/--epochs.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure, 3 check
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .corpus import read_corpus, write_corpus
from .errors import CheckpointError, ConfigError, RuntimeFailure
from .experiment import (
    build_vocabulary,
    config_hash,
    load_experiment_config,
    prepare_corpus,
    rows_to_csv,
    rows_to_json_dict,
    run_ablation,
    run_robustness,
    run_single,
)
from .gradchecks import run_gradcheck_suite
from .lexicon import (
    LexiconError,
    load_default_viseme_table,
    load_lexicon,
    load_viseme_table,
    word_to_multihot,
)
from .numeric import NumericError
from .trainer import evaluate, load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_CHECK_FAILED = 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 1)."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="lipviseme", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lipviseme {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    lex = commands.add_parser("lexicon", help="emit JSON-lines viseme labels for words")
    lex.add_argument("words", nargs="*", help="words to label (uppercased before lookup)")
    lex.add_argument("--words-file", help="file with one word per line")
    lex.add_argument("--dictionary", help="pronouncing dictionary path (default: bundled sample)")
    lex.add_argument("--table", help="viseme table path (default: bundled 18-group table)")
    lex.add_argument("--variant-policy", choices=("first", "all"), default="first")
    lex.add_argument("--strict", action="store_true", help="nonzero exit if any word fails")
    lex.add_argument("--output", help="output path (default: stdout)")

    for name, help_text in (
        ("generate", "render the synthetic corpus to disk"),
        ("train", "train a model and write checkpoint + reports"),
        ("ablate", "run the variant grid over all seeds and emit tables"),
    ):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", help="experiment config JSON (defaults used if omitted)")
        sub.add_argument("--corpus-dir", help="override paths.corpus_dir")
        sub.add_argument("--report-dir", help="override paths.report_dir")
        if name == "train":
            sub.add_argument("--checkpoint", help="override paths.checkpoint")
            sub.add_argument("--from-files", action="store_true",
                             help="load the corpus from corpus-dir instead of regenerating")
        if name == "ablate":
            sub.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    ev = commands.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--corpus-dir", required=True)
    ev.add_argument("--split", default="clean_test")
    ev.add_argument("--output", help="write full metrics (incl. confusion counts) as JSON")

    gc = commands.add_parser("gradcheck", help="finite-difference checks for all gradients")
    gc.add_argument("--tolerance", type=float, default=1e-4)

    return parser


def _split_overrides(argv: list[str]) -> tuple[list[str], list[tuple[str, str]]]:
    """Pull "--dotted.key value" and shortcut overrides out of argv."""
    shortcuts = {"--lambda", "--gamma", "--beta", "--seed", "--epochs"}
    plain: list[str] = []
    overrides: list[tuple[str, str]] = []
    index = 0
    while index < len(argv):
        token = argv[index]
        if token.startswith("--") and ("." in token or token in shortcuts):
            key, eq, inline = token[2:].partition("=")
            if eq:
                overrides.append((key, inline))
            else:
                if index + 1 >= len(argv):
                    raise ConfigError(f"override {token} is missing a value")
                overrides.append((key, argv[index + 1]))
                index += 1
        else:
            plain.append(token)
        index += 1
    return plain, overrides


def _load_label_inputs(args):
    lexicon = load_lexicon(args.dictionary)
    if args.table is None:
        table = load_default_viseme_table()
    else:
        with open(args.table, encoding="utf-8") as handle:
            table = load_viseme_table(handle, source_path=args.table)
    return lexicon, table


def cmd_lexicon(args) -> int:
    lexicon, table = _load_label_inputs(args)
    words = list(args.words)
    if args.words_file:
        words += [w for w in Path(args.words_file).read_text(encoding="utf-8").split() if w]
    sink = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    failures = 0
    try:
        for word in words:
            try:
                label = word_to_multihot(table, lexicon, word, args.variant_policy)
            except LexiconError as exc:
                failures += 1
                print(f"lexicon: {exc}", file=sys.stderr)
                continue
            sink.write(label.to_json() + "\n")
    finally:
        if args.output:
            sink.close()
    if failures and args.strict:
        return EXIT_RUNTIME
    return EXIT_OK


def _resolve_paths(config, args):
    updates = {}
    if getattr(args, "corpus_dir", None):
        updates["corpus_dir"] = args.corpus_dir
    if getattr(args, "report_dir", None):
        updates["report_dir"] = args.report_dir
    if getattr(args, "checkpoint", None):
        updates["checkpoint"] = args.checkpoint
    if updates:
        from dataclasses import replace

        config = replace(config, paths=replace(config.paths, **updates))
    return config


def cmd_generate(args, overrides) -> int:
    config = _resolve_paths(load_experiment_config(args.config, overrides), args)
    vocab = build_vocabulary(config)
    from .corpus import generate_corpus

    splits = generate_corpus(vocab, config.corpus)
    write_corpus(config.paths.corpus_dir, config.corpus, vocab, splits)
    for ambiguous in vocab.ambiguities:
        print(f"warning: homophene classes kept: {ambiguous[0]} / {ambiguous[1]}", file=sys.stderr)
    total = sum(len(records) for records in splits.values())
    print(f"wrote {total} records across {len(splits)} splits to {config.paths.corpus_dir}")
    return EXIT_OK


def _obtain_splits(config, args):
    if getattr(args, "from_files", False):
        stored_config, _, splits = read_corpus(config.paths.corpus_dir)
        if stored_config != config.corpus:
            raise ConfigError(
                f"corpus at {config.paths.corpus_dir} was generated with a different config"
            )
        return splits
    return prepare_corpus(config)


def _report_stamp(config, seed=None) -> str:
    stamp = f"lipviseme {__version__} config_hash={config_hash(config)}"
    return stamp if seed is None else f"{stamp} seed={seed}"


def cmd_train(args, overrides) -> int:
    config = _resolve_paths(load_experiment_config(args.config, overrides), args)
    splits = _obtain_splits(config, args)
    state, report, model_config = run_single(config, splits, config.train.seed)

    save_checkpoint(state, model_config, config.paths.checkpoint)
    report_dir = Path(config.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "report.csv").write_text(
        report.to_csv_text(_report_stamp(config, config.train.seed)), encoding="utf-8"
    )
    (report_dir / "report.json").write_text(
        json.dumps(report.to_json_dict(config_hash(config), config.train.seed), sort_keys=True, indent=2)
        + "\n",
        encoding="utf-8",
    )
    final = report.epochs[-1] if report.epochs else None
    if final is not None:
        print(
            f"final clean accuracy {final.clean_accuracy:.4f}, "
            f"perturbed accuracy {final.perturbed_accuracy:.4f} "
            f"(seed {config.train.seed}, {report.wall_clock_seconds:.1f}s)"
        )
    return EXIT_OK


def cmd_eval(args) -> int:
    state, model_config = load_checkpoint(args.checkpoint)
    _, _, splits = read_corpus(args.corpus_dir)
    if args.split not in splits:
        raise ConfigError(f"split {args.split!r} not found in {args.corpus_dir}")
    result = evaluate(state, model_config, splits[args.split])
    summary = {
        "split": args.split,
        "word_accuracy": result.word_accuracy,
        "viseme_macro_f1": result.viseme_macro_f1,
    }
    print(json.dumps(summary, sort_keys=True))
    if args.output:
        payload = dict(summary, confusion=result.confusion.tolist())
        Path(args.output).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_ablate(args, overrides) -> int:
    config = _resolve_paths(load_experiment_config(args.config, overrides), args)
    splits = prepare_corpus(config)

    def progress(name, seed, clean, perturbed):
        print(f"  {name:24s} seed {seed}: clean {clean:.4f}  perturbed {perturbed:.4f}")

    print("ablation variants:")
    ablation = run_ablation(config, splits, jobs=args.jobs, progress=progress)
    print("robustness variants:")
    robustness = run_robustness(config, splits, jobs=args.jobs, progress=progress)

    report_dir = Path(config.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    for stem, rows in (("ablation", ablation), ("robustness", robustness)):
        (report_dir / f"{stem}.csv").write_text(
            rows_to_csv(rows, _report_stamp(config)), encoding="utf-8"
        )
        (report_dir / f"{stem}.json").write_text(
            json.dumps(rows_to_json_dict(rows, config), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    for row in ablation + robustness:
        print(
            f"{row.variant:24s} median clean {row.median_clean:.4f}  "
            f"median perturbed {row.median_perturbed:.4f}"
        )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_gradcheck_suite(tolerance=args.tolerance)
    for entry in report.entries:
        status = "ok" if entry.passed else "FAIL"
        print(f"{status:4s} {entry.name:32s} max relative error {entry.max_relative_error:.3e}")
    print(f"{len(report.entries)} checks, tolerance {report.tolerance:g}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        plain, overrides = _split_overrides(argv)
        args = _build_parser().parse_args(plain)
        if args.command == "lexicon":
            return cmd_lexicon(args)
        if args.command == "generate":
            return cmd_generate(args, overrides)
        if args.command == "train":
            return cmd_train(args, overrides)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "ablate":
            return cmd_ablate(args, overrides)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeFailure, CheckpointError, LexiconError, NumericError, OSError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
