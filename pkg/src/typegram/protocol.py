"""Module defining the query protocol shared by every n-gram database backend."""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator, Protocol, Sequence, Union

import numpy as np

if TYPE_CHECKING:
    from typegram.corpus.types import Bitness, Vocabulary
    from typegram.ngramdb.labels import LabelTable

LabelCount = tuple[int, int]


@dataclass(frozen=True)
class QueryResult:
    """Top-k labels stored under one key, plus how many labels the key holds."""

    key: int
    n: int
    candidates: tuple[LabelCount, ...] = ()
    distinct_label_count: int = 0


@dataclass(frozen=True)
class BatchResult:
    """Top-k pairs of many keys, flattened into parallel int64 arrays.

    Pair ``i`` answers query ``rows[i]`` (a position in the key batch) and
    ``distinct[i]`` is the number of labels stored under that key. Pairs keep
    query order, then rank order; keys without labels contribute none.
    """

    rows: np.ndarray
    label_ids: np.ndarray
    counts: np.ndarray
    distinct: np.ndarray

    def __len__(self) -> int:
        """Return the number of pairs."""
        return len(self.rows)


def check_k(k: int) -> None:
    """Raise ValueError unless ``k`` is at least 1."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")


class NGramStore(Protocol):
    """Read interface of an immutable n-gram database.

    Backends implement ``_lookup``; ranked queries are built on top of it.
    Per-key lists come back sorted by count descending, label id ascending.
    """

    n: int
    bitness: "Bitness"
    vocabulary: "Vocabulary"
    labels: "LabelTable"

    def _lookup(self, key: int) -> Sequence[LabelCount]:
        """Return every (label_id, count) pair stored under ``key``."""
        ...

    def keys(self) -> Iterator[int]:
        """Iterate stored keys in ascending order."""
        ...

    def __len__(self) -> int:
        """Return the number of stored keys."""
        ...

    def query(self, key: int, k: int = 3) -> QueryResult:
        """Return the top-``k`` labels stored under ``key``.

        Args:
            key (int): N-gram key.
            k (int): Number of candidates to keep, at least 1.

        Returns:
            QueryResult: Empty candidates and zero distinct labels for absent keys.

        Raises:
            ValueError: If k is smaller than 1.

        """
        check_k(k)
        pairs = self._lookup(key)
        return QueryResult(
            key=key,
            n=self.n,
            candidates=tuple(pairs[:k]),
            distinct_label_count=len(pairs),
        )

    def query_many(
        self, keys: Union[Sequence[int], np.ndarray], k: int = 3
    ) -> BatchResult:
        """Answer ``query(key, k)`` for every key of a batch at once.

        Raises:
            ValueError: If k is smaller than 1.

        """
        check_k(k)
        rows: list[int] = []
        label_ids: list[int] = []
        counts: list[int] = []
        distinct: list[int] = []
        for row, key in enumerate(np.asarray(keys, dtype=np.uint64).tolist()):
            pairs = self._lookup(key)
            for label_id, count in pairs[:k]:
                rows.append(row)
                label_ids.append(label_id)
                counts.append(count)
                distinct.append(len(pairs))
        return BatchResult(
            rows=np.asarray(rows, dtype=np.int64),
            label_ids=np.asarray(label_ids, dtype=np.int64),
            counts=np.asarray(counts, dtype=np.int64),
            distinct=np.asarray(distinct, dtype=np.int64),
        )

    def items(self) -> Iterator[tuple[int, Sequence[LabelCount]]]:
        """Iterate (key, label counts) in ascending key order."""
        for key in self.keys():
            yield key, self._lookup(key)
