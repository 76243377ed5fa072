"""Module holding the in-memory n-gram database produced by a build."""

from dataclasses import dataclass, field
from typing import Iterator, Sequence

from typegram.corpus.types import Bitness, Vocabulary
from typegram.ngramdb.labels import LabelTable
from typegram.protocol import LabelCount, NGramStore


@dataclass(frozen=True, eq=False)
class NGramDatabase(NGramStore):
    """Immutable map from n-gram key to (label_id, count) pairs.

    Every per-key tuple is sorted by count descending, label id ascending, and
    keeps all labels seen under the key, not only the top-k.
    """

    n: int
    bitness: Bitness
    vocabulary: Vocabulary
    labels: LabelTable = field(default_factory=LabelTable)
    entries: dict[int, tuple[LabelCount, ...]] = field(default_factory=dict)

    def _lookup(self, key: int) -> Sequence[LabelCount]:
        return self.entries.get(key, ())

    def keys(self) -> Iterator[int]:
        """Iterate stored keys in ascending order."""
        return iter(sorted(self.entries))

    def __len__(self) -> int:
        """Return the number of stored keys."""
        return len(self.entries)

    @property
    def pair_count(self) -> int:
        """Total number of (key, label) pairs."""
        return sum(len(pairs) for pairs in self.entries.values())
