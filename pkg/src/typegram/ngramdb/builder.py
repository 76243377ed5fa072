"""Module building n-gram databases from a corpus and merging build shards."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
import logging
from typing import Iterator, Optional, Sequence

from typegram.corpus.types import (
    AnnotatedFunction,
    Bitness,
    Corpus,
    SignatureLabel,
    Split,
    TypeLibrary,
    Vocabulary,
)
from typegram.errors import EmptyCorpusError, ParameterMismatchError
from typegram.lexer.contexts import call_span, window_keys
from typegram.ngramdb.database import NGramDatabase
from typegram.ngramdb.ensemble import DatabaseEnsemble
from typegram.ngramdb.labels import LabelTable, saturating_add, sort_pairs
from typegram.protocol import NGramStore

logger = logging.getLogger(__name__)

# Binaries per build shard.
SHARD_BINARIES = 32


@dataclass
class _ShardResult:
    databases: dict[int, NGramDatabase]
    skipped: int


def _labelled_keys(
    function: AnnotatedFunction,
    ns: Sequence[int],
    vocabulary: Vocabulary,
) -> Iterator[tuple[str, list[int]]]:
    """Yield (label, key per n) for every annotated occurrence of ``function``."""
    stream = function.stream
    occurrences: list[tuple[str, int]] = []
    right_ends: Optional[list[int]] = None
    if vocabulary is Vocabulary.TYPES:
        for identifier, label in function.variable_annotations.items():
            for index in stream.occurrences.get(identifier, ()):
                occurrences.append((label, index))
    else:
        right_ends = []
        for callee, label in function.call_annotations.items():
            for index in stream.occurrences.get(callee, ()):
                span = call_span(stream.texts, index)
                if span is None:
                    continue
                occurrences.append((label, index))
                right_ends.append(span[0])
    keys = window_keys(stream, [index for _, index in occurrences], ns, right_ends)
    for (label, _), column in zip(occurrences, keys.T.tolist()):
        yield label, column


def _in_other_vocabulary(
    label: str,
    function: AnnotatedFunction,
    vocabulary: Vocabulary,
    type_library: TypeLibrary,
    signature_library: dict[str, SignatureLabel],
) -> bool:
    if vocabulary is Vocabulary.TYPES:
        return (
            type_library.resolve(label, function.bitness) is None
            and label in signature_library
        )
    return label not in signature_library and label in type_library


def _build_shard(
    functions: Sequence[AnnotatedFunction],
    ns: Sequence[int],
    bitness: Bitness,
    vocabulary: Vocabulary,
    type_library: TypeLibrary,
    signature_library: dict[str, SignatureLabel],
) -> _ShardResult:
    counts: dict[int, dict[int, dict[str, int]]] = {n: {} for n in ns}
    totals: dict[str, int] = {}
    skipped = 0
    for function in functions:
        for label, keys in _labelled_keys(function, ns, vocabulary):
            if _in_other_vocabulary(
                label, function, vocabulary, type_library, signature_library
            ):
                skipped += 1
                continue
            totals[label] = totals.get(label, 0) + 1
            for n, key in zip(ns, keys):
                per_key = counts[n].setdefault(key, {})
                per_key[label] = saturating_add(per_key.get(label, 0), 1)

    labels = LabelTable.from_counts(totals)
    ids = labels.ids
    databases = {
        n: NGramDatabase(
            n=n,
            bitness=bitness,
            vocabulary=vocabulary,
            labels=labels,
            entries={
                key: sort_pairs((ids[name], c) for name, c in per_key.items())
                for key, per_key in counts[n].items()
            },
        )
        for n in ns
    }
    return _ShardResult(databases, skipped)


def merge_databases(a: NGramStore, b: NGramStore) -> NGramDatabase:
    """Merge two databases built with the same parameters.

    Counts add up with saturation at the unsigned 32-bit maximum; label tables
    are unioned and re-densified by name, so the result does not depend on
    argument order.

    Raises:
        ParameterMismatchError: If n, bitness or vocabulary differ.

    """
    if (a.n, a.bitness, a.vocabulary) != (b.n, b.bitness, b.vocabulary):
        raise ParameterMismatchError(
            f"cannot merge n={a.n}/{int(a.bitness)}/{a.vocabulary.value} with "
            f"n={b.n}/{int(b.bitness)}/{b.vocabulary.value}"
        )
    labels = a.labels.union(b.labels)
    merged: dict[int, dict[int, int]] = {}
    for store in (a, b):
        remap = store.labels.remap_to(labels)
        for key, pairs in store.items():
            per_key = merged.setdefault(key, {})
            for label_id, count in pairs:
                target = remap[label_id]
                per_key[target] = saturating_add(per_key.get(target, 0), count)
    return NGramDatabase(
        n=a.n,
        bitness=a.bitness,
        vocabulary=a.vocabulary,
        labels=labels,
        entries={key: sort_pairs(per_key.items()) for key, per_key in merged.items()},
    )


def _merge_all(
    shards: list[dict[int, NGramDatabase]], ns: Sequence[int]
) -> dict[int, NGramDatabase]:
    """Merge shard results pairwise, always in shard order."""
    level = shards
    while len(level) > 1:
        paired = []
        for i in range(0, len(level), 2):
            if i + 1 == len(level):
                paired.append(level[i])
                continue
            left, right = level[i], level[i + 1]
            paired.append({n: merge_databases(left[n], right[n]) for n in ns})
        level = paired
    return level[0]


def _shards(functions: Sequence[AnnotatedFunction]) -> list[list[AnnotatedFunction]]:
    """Group functions by binary, ``SHARD_BINARIES`` binaries per shard."""
    by_binary: dict[str, list[AnnotatedFunction]] = {}
    for function in functions:
        by_binary.setdefault(function.binary_id, []).append(function)
    binaries = list(by_binary.values())
    return [
        [f for group in binaries[i : i + SHARD_BINARIES] for f in group]
        for i in range(0, len(binaries), SHARD_BINARIES)
    ]


def build_ensemble(
    corpus: Corpus,
    portfolio: Sequence[int],
    bitness: Bitness,
    vocabulary: Vocabulary = Vocabulary.TYPES,
    threads: int = 1,
) -> DatabaseEnsemble:
    """Build one database per window radius from the train split.

    Only train-split functions of ``bitness`` contribute. Shards of binaries are
    built in worker processes when ``threads`` > 1; the merged result is the
    same for any thread count.

    Args:
        corpus (Corpus): Loaded corpus.
        portfolio (Sequence[int]): Strictly increasing window radii.
        bitness (Bitness): Target bitness.
        vocabulary (Vocabulary): Types or signatures.
        threads (int): Worker processes.

    Returns:
        DatabaseEnsemble: Databases sharing one label table.

    Raises:
        EmptyCorpusError: If no train function has the requested bitness.

    """
    ns = tuple(portfolio)
    functions = [f for f in corpus.split(Split.TRAIN) if f.bitness == bitness]
    if not functions:
        raise EmptyCorpusError(
            f"no train-split functions with bitness {int(bitness)} to build from"
        )
    args = (ns, bitness, vocabulary, corpus.type_library, corpus.signature_library)
    shards = _shards(functions)
    logger.info(
        "Building %s databases n=%s for %d-bit from %d functions in %d shards",
        vocabulary.value,
        list(ns),
        int(bitness),
        len(functions),
        len(shards),
    )
    if threads > 1 and len(shards) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(_build_shard, shards, *[[arg] * len(shards) for arg in args])
            )
    else:
        results = [_build_shard(functions, *args)]

    skipped = sum(result.skipped for result in results)
    if skipped:
        logger.warning(
            "Skipped %d annotations that belong to the other vocabulary", skipped
        )
    merged = _merge_all([result.databases for result in results], ns)
    return DatabaseEnsemble(
        databases=tuple(merged[n] for n in ns),
        labels=merged[ns[0]].labels,
        bitness=bitness,
        vocabulary=vocabulary,
    )


def build_database(
    corpus: Corpus,
    n: int,
    bitness: Bitness,
    vocabulary: Vocabulary = Vocabulary.TYPES,
    threads: int = 1,
) -> NGramDatabase:
    """Build the single database of radius ``n``.

    Raises:
        EmptyCorpusError: If no train function has the requested bitness.

    """
    return build_ensemble(corpus, [n], bitness, vocabulary, threads).databases[0]
