"""Module measuring overlap between corpus splits."""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

from typegram.corpus.types import AnnotatedFunction, Corpus, Split
from typegram.lexer.hashing import FNV_OFFSET_BASIS, hash_encoded
from typegram.lexer.tokens import TokenStream


def stream_hash(stream: TokenStream) -> int:
    """Hash a whole normalized token stream; equal streams give equal hashes."""
    if not stream.tokens:
        return FNV_OFFSET_BASIS
    return hash_encoded(stream.encoded)


def split_hashes(functions: Iterable[AnnotatedFunction]) -> set[int]:
    """Return the distinct stream hashes of ``functions``."""
    return {stream_hash(f.stream) for f in functions}


@dataclass(frozen=True)
class SplitReport:
    """Per-split counts and pairwise overlap.

    ``overlap[(a, b)]`` is the shared fraction of distinct streams over their
    union, symmetric in a and b. ``containment[(a, b)]`` is the fraction of
    functions in a whose stream also occurs in b.
    """

    counts: dict[Split, int]
    overlap: dict[tuple[Split, Split], float] = field(default_factory=dict)
    containment: dict[tuple[Split, Split], float] = field(default_factory=dict)


def validate_splits(corpus: Corpus) -> SplitReport:
    """Report split sizes and train/validation/test overlap.

    Two functions overlap when their normalized token streams are identical.
    """
    by_split = {tag: corpus.split(tag) for tag in Split}
    hashes = {tag: [stream_hash(f.stream) for f in fs] for tag, fs in by_split.items()}
    distinct = {tag: set(values) for tag, values in hashes.items()}

    overlap: dict[tuple[Split, Split], float] = {}
    containment: dict[tuple[Split, Split], float] = {}
    for a, b in combinations(Split, 2):
        union = distinct[a] | distinct[b]
        shared = len(distinct[a] & distinct[b]) / len(union) if union else 0.0
        overlap[(a, b)] = overlap[(b, a)] = shared
    for a in Split:
        for b in Split:
            if a is b:
                continue
            values = hashes[a]
            contained = sum(1 for h in values if h in distinct[b])
            containment[(a, b)] = contained / len(values) if values else 0.0
    return SplitReport(
        counts={tag: len(fs) for tag, fs in by_split.items()},
        overlap=overlap,
        containment=containment,
    )
