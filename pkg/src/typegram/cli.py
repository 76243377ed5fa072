"""Module providing the ``typegram`` command line."""

import argparse
import logging
from pathlib import Path
from statistics import fmean, median
import sys
import time
from typing import Any, Iterable, Mapping, Optional, Sequence

from typegram.calibrate import (
    CalibrationMap,
    collect_calibration_pairs,
    fit_isotonic,
    reliability_table,
)
from typegram.config import RunConfig, load_config, parse_portfolio
from typegram.corpus.loader import load_corpus
from typegram.corpus.types import (
    AnnotatedFunction,
    Bitness,
    Corpus,
    Split,
    Vocabulary,
)
from typegram.engine.inference import Prediction, infer_corpus, infer_function
from typegram.errors import (
    BitnessMismatchError,
    ConfigError,
    CorpusError,
    EmptyCorpusError,
    InputError,
)
from typegram.lexer.tokens import tokenize
from typegram.metrics.accuracy import overall_accuracy
from typegram.metrics.records import build_eval_records
from typegram.metrics.report import (
    coverage_risk_table,
    format_table,
    format_value,
    write_coverage_csv,
    write_json_report,
)
from typegram.metrics.selective import coverage_risk_curve
from typegram.metrics.structs import (
    GroupBy,
    layout_recovery,
    macro_average,
    struct_identification,
)
from typegram.ngramdb.builder import build_ensemble
from typegram.ngramdb.ensemble import DatabaseEnsemble, load_ensemble, save_ensemble
from typegram.ngramdb.stats import DbStats, db_stats
from typegram.ngramdb.storage import open_mapped, serialized_size
from typegram.signatures import (
    FunctionPrediction,
    aggregate_by_address,
    ground_truth_signatures,
    infer_call_sites,
    triage_report,
)
from typegram.utils import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT_ERROR = 2

# Flags that map one-to-one onto RunConfig fields.
_CONFIG_FLAGS = (
    "portfolio",
    "k",
    "tau",
    "struct_priority",
    "struct_priority_margin",
    "weight_exponent",
    "min_contexts",
    "threads",
    "corpus",
    "type_library",
    "signature_library",
    "manifest",
    "calibration",
    "predictions",
    "output",
    "tau_grid",
    "prefix",
    "log_level",
)


def _config(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name, None) for name in _CONFIG_FLAGS}
    config = load_config(args.config, **overrides)
    logging.getLogger().setLevel(config.log_level.upper())
    return config


def _load_corpus(config: RunConfig) -> Corpus:
    return load_corpus(
        config.require("corpus"), config.type_library, config.signature_library
    )


def _load_calibration(config: RunConfig) -> Optional[CalibrationMap]:
    if config.calibration is None:
        return None
    return CalibrationMap.load(config.calibration)


def _select(corpus: Corpus, split: str) -> list[AnnotatedFunction]:
    if split == "all":
        return list(corpus.functions)
    return corpus.split(Split(split))


def _read_records(path: Path) -> Iterable[tuple[int, Any]]:
    if not path.exists():
        raise CorpusError("file does not exist", str(path))
    return read_jsonl(path)


def read_predictions(path: Path) -> list[Prediction]:
    """Read a variable prediction file.

    Raises:
        CorpusError: On malformed lines, with their line number.

    """
    predictions = []
    for lineno, record in _read_records(path):
        try:
            predictions.append(Prediction.from_record(record))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"bad prediction record: {exc}", str(path), lineno)
    return predictions


def read_function_predictions(path: Path) -> list[FunctionPrediction]:
    """Read a function signature prediction file.

    Raises:
        CorpusError: On malformed lines, with their line number.

    """
    predictions = []
    for lineno, record in _read_records(path):
        try:
            predictions.append(FunctionPrediction.from_record(record))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"bad function record: {exc}", str(path), lineno)
    return predictions


def _stats_table(stats: Sequence[DbStats]) -> str:
    return format_table(
        ["n", "keys", "labels", "pairs", "labels/key", "disk bytes", "resident bytes"],
        [
            [
                s.n,
                s.key_count,
                s.label_count,
                s.pair_count,
                round(s.mean_labels_per_key, 2),
                s.disk_bytes,
                s.resident_bytes,
            ]
            for s in stats
        ],
    )


def load_ensembles(paths: Sequence[Path]) -> dict[Bitness, DatabaseEnsemble]:
    """Open one ensemble per manifest, keyed by the bitness it serves.

    Raises:
        ConfigError: If two manifests serve the same bitness.

    """
    ensembles: dict[Bitness, DatabaseEnsemble] = {}
    try:
        for path in paths:
            ensemble = load_ensemble(path)
            if ensemble.bitness in ensembles:
                ensemble.close()
                raise ConfigError(
                    f"{path} is a second manifest for "
                    f"{int(ensemble.bitness)}-bit functions"
                )
            ensembles[ensemble.bitness] = ensemble
    except BaseException:
        _close_all(ensembles)
        raise
    return ensembles


def _close_all(ensembles: Mapping[Bitness, DatabaseEnsemble]) -> None:
    for ensemble in ensembles.values():
        ensemble.close()


def _check_bitness(
    functions: Sequence[AnnotatedFunction],
    ensembles: Mapping[Bitness, DatabaseEnsemble],
) -> None:
    uncovered = [f for f in functions if f.bitness not in ensembles]
    if uncovered:
        served = ", ".join(f"{int(b)}-bit" for b in sorted(ensembles)) or "none"
        raise BitnessMismatchError(
            f"{len(uncovered)} input functions are "
            f"{int(uncovered[0].bitness)}-bit, the manifests serve {served}"
        )


def timed_inference(
    functions: Sequence[AnnotatedFunction],
    ensembles: Mapping[Bitness, DatabaseEnsemble],
    config: RunConfig,
    calibration: Optional[CalibrationMap] = None,
    type_library: Any = None,
) -> tuple[list[Prediction], list[float]]:
    """Infer ``functions`` and return predictions plus per-function seconds.

    Each function is answered by the ensemble of its bitness. With several
    threads only the total is measured, so every function is charged the mean.
    """
    scoring = config.scoring()
    if config.threads > 1:
        started = time.perf_counter()
        batches: list[list[Prediction]] = [[] for _ in functions]
        for bitness, ensemble in ensembles.items():
            positions = [
                i for i, function in enumerate(functions) if function.bitness == bitness
            ]
            if not positions:
                continue
            answered = infer_corpus(
                [functions[i] for i in positions],
                ensemble,
                scoring,
                config.tau,
                calibration,
                type_library,
                threads=config.threads,
            )
            for position, batch in zip(positions, answered):
                batches[position] = batch
        elapsed = time.perf_counter() - started
        timings = [elapsed / len(functions)] * len(functions) if functions else []
        return [p for batch in batches for p in batch], timings
    predictions: list[Prediction] = []
    timings = []
    for function in functions:
        started = time.perf_counter()
        predictions.extend(
            infer_function(
                function,
                ensembles[function.bitness],
                scoring,
                config.tau,
                calibration,
                type_library,
            )
        )
        timings.append(time.perf_counter() - started)
    return predictions, timings


def throughput_line(timings: Sequence[float]) -> str:
    """Summarize per-function seconds as ms/function and functions/s."""
    if not timings:
        return "throughput: no functions"
    total = sum(timings)
    rate = len(timings) / total if total > 0 else float("inf")
    return (
        f"throughput: median {median(timings) * 1000:.3f} ms/function, "
        f"mean {fmean(timings) * 1000:.3f} ms/function, {rate:.1f} functions/s"
    )


def _train(args: argparse.Namespace, vocabulary: Vocabulary) -> int:
    config = _config(args)
    corpus = _load_corpus(config)
    output = config.require("output")
    bitnesses = corpus.bitnesses(Split.TRAIN)
    if not bitnesses:
        raise EmptyCorpusError("the train split is empty")
    for bitness in bitnesses:
        ensemble = build_ensemble(
            corpus, config.portfolio, bitness, vocabulary, config.threads
        )
        directory = output / f"{vocabulary.value}-{int(bitness)}"
        manifest = save_ensemble(ensemble, directory)
        print(f"{int(bitness)}-bit {vocabulary.value} manifest: {manifest}")
        print(_stats_table([db_stats(db) for db in ensemble.databases]))
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Build one type ensemble per bitness of the train split."""
    return _train(args, Vocabulary.TYPES)


def cmd_infer(args: argparse.Namespace) -> int:
    """Predict variable types and write prediction records."""
    config = _config(args)
    corpus = _load_corpus(config)
    output = config.require("output")
    calibration = _load_calibration(config)
    functions = _select(corpus, args.split)
    ensembles = load_ensembles(config.manifests())
    try:
        _check_bitness(functions, ensembles)
        predictions, timings = timed_inference(
            functions, ensembles, config, calibration, corpus.type_library
        )
    finally:
        _close_all(ensembles)
    count = write_jsonl(output, (p.to_record() for p in predictions))
    emitted = sum(not p.abstained for p in predictions)
    print(
        f"{count} variables in {len(functions)} functions, "
        f"{emitted} labelled, {count - emitted} abstained"
    )
    print(throughput_line(timings))
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    """Fit a calibration map on validation predictions."""
    config = _config(args)
    corpus = _load_corpus(config)
    predictions = read_predictions(config.require("predictions"))
    pairs, skipped = collect_calibration_pairs(predictions, corpus)
    calibration = fit_isotonic(pairs)
    calibration.save(config.require("output"))
    print(f"fitted on {len(pairs)} pairs ({skipped} skipped)")
    rows = [
        [f"{b.lower:.1f}-{b.upper:.1f}", b.count, b.mean_score, b.accuracy]
        for b in reliability_table(pairs)
    ]
    print(format_table(["score", "count", "mean score", "accuracy"], rows))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    """Report accuracy, coverage-risk, struct and layout metrics."""
    config = _config(args)
    corpus = _load_corpus(config)
    predictions = read_predictions(config.require("predictions"))
    records, skipped = build_eval_records(predictions, corpus)
    library = corpus.type_library

    accuracy = overall_accuracy(records)
    curve = coverage_risk_curve(records, config.tau_grid)
    structs = struct_identification(records)
    layout = layout_recovery(records, library)
    per_binary = macro_average(records, GroupBy.BINARY, struct_identification)
    per_opt = macro_average(
        records, GroupBy.OPT_LEVEL, lambda group: layout_recovery(group, library)
    )

    print(
        format_table(
            ["records", "skipped", "accuracy", "in-train", "out-of-train", "struct"],
            [
                [
                    accuracy.total,
                    skipped,
                    accuracy.overall,
                    accuracy.in_train,
                    accuracy.out_of_train,
                    accuracy.struct,
                ]
            ],
        )
    )
    print()
    print(coverage_risk_table(curve))
    print()
    print(
        format_table(
            ["struct id", "precision", "recall", "f1"],
            [
                ["micro", structs.precision, structs.recall, structs.f1],
                [
                    "macro per binary",
                    per_binary.precision,
                    per_binary.recall,
                    per_binary.f1,
                ],
            ],
        )
    )
    print()
    print(
        format_table(
            ["layout", "precision", "recall", "f1", "full match"],
            [
                [
                    "all",
                    layout.precision,
                    layout.recall,
                    layout.f1,
                    layout.full_match_accuracy,
                ],
                *[
                    [f"opt {key}", r.precision, r.recall, r.f1, r.full_match_accuracy]
                    for key, r in per_opt.groups.items()
                ],
            ],
        )
    )
    if config.output is not None:
        config.output.mkdir(parents=True, exist_ok=True)
        write_json_report(
            config.output / "report.json",
            {
                "accuracy": accuracy,
                "coverage_risk": curve,
                "struct_identification": structs,
                "struct_identification_per_binary": per_binary,
                "layout": {k: v for k, v in vars(layout).items() if k != "scores"},
                "layout_per_opt_level": per_opt,
                "skipped": skipped,
            },
        )
        write_coverage_csv(config.output / "coverage_risk.csv", curve)
        print(f"\nreports written to {config.output}")
    return EXIT_OK


def cmd_fn_train(args: argparse.Namespace) -> int:
    """Build one signature ensemble per bitness of the train split."""
    return _train(args, Vocabulary.SIGNATURES)


def cmd_fn_infer(args: argparse.Namespace) -> int:
    """Predict call-site signatures and aggregate them per callee."""
    config = _config(args)
    corpus = _load_corpus(config)
    output = config.require("output")
    calibration = _load_calibration(config)
    functions = _select(corpus, args.split)
    ensembles = load_ensembles(config.manifests())
    try:
        _check_bitness(functions, ensembles)
        sites = [
            site
            for function in functions
            for site in infer_call_sites(
                function,
                ensembles[function.bitness],
                config.scoring(),
                config.tau,
                calibration,
            )
        ]
    finally:
        _close_all(ensembles)
    aggregated = aggregate_by_address(sites, config.tau)
    write_jsonl(output, (p.to_record() for p in aggregated))
    kept = sum(not s.abstained for s in sites)
    print(f"{len(sites)} call sites, {kept} kept, {len(aggregated)} callees labelled")
    print(
        format_table(
            ["binary", "callee", "signature", "weight", "contexts", "sites"],
            [
                [p.binary_id, p.callee, p.signature, p.weight, p.contexts, p.sites]
                for p in aggregated
            ],
        )
    )
    return EXIT_OK


def cmd_fn_triage(args: argparse.Namespace) -> int:
    """List callees whose predicted signature carries a name prefix."""
    config = _config(args)
    predictions = read_function_predictions(config.require("predictions"))
    truth = None
    if config.corpus is not None:
        corpus = _load_corpus(config)
        split = None if args.split == "all" else Split(args.split)
        truth = ground_truth_signatures(corpus, split)
    report = triage_report(predictions, config.prefix, truth)
    print(
        format_table(
            ["binary", "callee", "signature", "weight"],
            [[p.binary_id, p.callee, p.signature, p.weight] for p in report.listed],
        )
    )
    if truth is not None:
        print(
            f"\n{config.prefix}: {report.true_positives} hits, "
            f"{report.predicted_positives} listed, {report.actual_positives} in "
            f"ground truth; precision {format_value(report.precision)}, "
            f"recall {format_value(report.recall)}, f1 {format_value(report.f1)}"
        )
    return EXIT_OK


def cmd_db_stats(args: argparse.Namespace) -> int:
    """Print size statistics of databases or ensemble manifests."""
    _config(args)
    stats = []
    for path in args.paths:
        if path.suffix == ".json":
            ensemble = load_ensemble(path, verify=args.verify)
            try:
                stats.extend(db_stats(db) for db in ensemble.databases)
            finally:
                ensemble.close()
        else:
            with open_mapped(path, verify=args.verify) as db:
                stats.append(db_stats(db))
    print(_stats_table(stats))
    return EXIT_OK


def cmd_tokenize(args: argparse.Namespace) -> int:
    """Print the normalized token stream of a source file."""
    _config(args)
    if str(args.source) == "-":
        text = sys.stdin.read()
    else:
        try:
            text = args.source.read_text(encoding="utf-8")
        except OSError as exc:
            raise CorpusError(f"cannot read source: {exc}", str(args.source))
    stream = tokenize(text)
    if args.debug:
        for index, token in enumerate(stream.tokens):
            print(f"{index}\t{token.kind.value}\t{token.text}")
    else:
        print(" ".join(stream.texts))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    """Compare portfolios on accuracy, database size and throughput."""
    config = _config(args)
    corpus = _load_corpus(config)
    validation = corpus.split(Split.VALIDATION)
    if not validation:
        raise EmptyCorpusError("the validation split is empty")
    rows = []
    for entry in args.portfolios.split(";"):
        portfolio = parse_portfolio(entry.strip())
        predictions: list[Prediction] = []
        timings: list[float] = []
        disk_bytes = 0
        for bitness in corpus.bitnesses(Split.VALIDATION):
            ensemble = build_ensemble(
                corpus, portfolio, bitness, Vocabulary.TYPES, config.threads
            )
            disk_bytes += sum(serialized_size(db) for db in ensemble.databases)
            selected = [f for f in validation if f.bitness == bitness]
            found, spent = timed_inference(
                selected, {bitness: ensemble}, config, type_library=corpus.type_library
            )
            predictions.extend(found)
            timings.extend(spent)
        records, _ = build_eval_records(predictions, corpus)
        accuracy = overall_accuracy(records)
        rows.append(
            [
                entry.strip(),
                len(portfolio),
                accuracy.overall,
                accuracy.out_of_train,
                round(disk_bytes / 2**20, 3),
                round(median(timings) * 1000, 4) if timings else None,
            ]
        )
    print(
        format_table(
            ["portfolio", "dbs", "accuracy", "out-of-train", "MiB", "ms/function"],
            rows,
        )
    )
    return EXIT_OK


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config file")
    common.add_argument(
        "--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR"
    )
    common.add_argument("--corpus", type=Path)
    common.add_argument("--type-library", dest="type_library", type=Path)
    common.add_argument("--signature-library", dest="signature_library", type=Path)
    common.add_argument(
        "--manifest",
        action="append",
        type=Path,
        help="ensemble manifest; repeat for one per bitness",
    )
    common.add_argument("--calibration", type=Path)
    common.add_argument("--predictions", type=Path)
    common.add_argument("--output", "-o", type=Path)
    common.add_argument(
        "--portfolio", help="preset (default, compact, legacy) or comma list"
    )
    common.add_argument("--k", type=int)
    common.add_argument("--tau", help="confidence threshold, or 'none'")
    common.add_argument(
        "--struct-priority",
        dest="struct_priority",
        action=argparse.BooleanOptionalAction,
        default=None,
    )
    common.add_argument(
        "--struct-priority-margin", dest="struct_priority_margin", type=float
    )
    common.add_argument("--weight-exponent", dest="weight_exponent", type=float)
    common.add_argument("--min-contexts", dest="min_contexts", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--tau-grid", dest="tau_grid", help="comma list, e.g. none,0.4")
    common.add_argument("--prefix", help="signature name prefix for triage")
    return common


def _add_split(parser: argparse.ArgumentParser, default: str) -> None:
    parser.add_argument(
        "--split",
        choices=[s.value for s in Split] + ["all"],
        default=default,
        help=f"functions to process (default {default})",
    )


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with every subcommand."""
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="typegram",
        description="Recover variable types and function signatures from "
        "decompiled code with n-gram context databases.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", parents=[common], help="build type databases")
    train.set_defaults(func=cmd_train)

    infer = commands.add_parser(
        "infer", parents=[common], help="predict variable types"
    )
    _add_split(infer, "test")
    infer.set_defaults(func=cmd_infer)

    calibrate = commands.add_parser(
        "calibrate", parents=[common], help="fit a calibration map"
    )
    calibrate.set_defaults(func=cmd_calibrate)

    evaluate = commands.add_parser("eval", parents=[common], help="report metrics")
    evaluate.set_defaults(func=cmd_eval)

    fn = commands.add_parser("fn", help="function signature workflows")
    fn_commands = fn.add_subparsers(dest="fn_command", required=True)
    fn_train = fn_commands.add_parser(
        "train", parents=[common], help="build signature databases"
    )
    fn_train.set_defaults(func=cmd_fn_train)
    fn_infer = fn_commands.add_parser(
        "infer", parents=[common], help="predict and aggregate signatures"
    )
    _add_split(fn_infer, "test")
    fn_infer.set_defaults(func=cmd_fn_infer)
    fn_triage = fn_commands.add_parser(
        "triage", parents=[common], help="list prefixed signatures"
    )
    _add_split(fn_triage, "test")
    fn_triage.set_defaults(func=cmd_fn_triage)

    db = commands.add_parser("db", help="database utilities")
    db_commands = db.add_subparsers(dest="db_command", required=True)
    stats = db_commands.add_parser("stats", parents=[common], help="size statistics")
    stats.add_argument("paths", nargs="+", type=Path, help="manifests or .tgdb files")
    stats.add_argument(
        "--verify", action=argparse.BooleanOptionalAction, default=True
    )
    stats.set_defaults(func=cmd_db_stats)

    tokenize_cmd = commands.add_parser(
        "tokenize", parents=[common], help="print a normalized token stream"
    )
    tokenize_cmd.add_argument("source", type=Path, help="source file, or - for stdin")
    tokenize_cmd.add_argument(
        "--debug", action="store_true", help="one token per line with its class"
    )
    tokenize_cmd.set_defaults(func=cmd_tokenize)

    ablate = commands.add_parser(
        "ablate", parents=[common], help="compare database portfolios"
    )
    ablate.add_argument(
        "--portfolios",
        default="default;compact;legacy",
        help="';'-separated portfolios, each a preset or comma list",
    )
    ablate.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return its exit code.

    Returns 0 on success, 2 for input errors and 1 for anything else.
    """
    args = build_parser().parse_args(argv)
    level = (args.log_level or "INFO").upper()
    if level not in logging.getLevelNamesMapping():
        print(f"typegram: unknown log level {args.log_level!r}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except InputError as exc:
        logger.error("%s", exc)
        return EXIT_INPUT_ERROR
    except Exception as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        logger.debug("Traceback", exc_info=True)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
