"""Module mapping dense label ids to label names and global frequencies."""

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

# Counts saturate here instead of wrapping.
U32_MAX = 0xFFFFFFFF
U64_MAX = 0xFFFFFFFFFFFFFFFF


def saturating_add(a: int, b: int, limit: int = U32_MAX) -> int:
    """Add two counts, clamping at ``limit``."""
    return min(a + b, limit)


@dataclass(frozen=True)
class LabelTable:
    """Label names sorted ascending; a label's id is its position.

    ``frequency[i]`` counts every training occurrence carrying label ``i``.
    """

    names: tuple[str, ...] = ()
    frequency: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        """Check the table is sorted, unique and aligned with its frequencies."""
        if len(self.names) != len(self.frequency):
            raise ValueError("label names and frequencies differ in length")
        if any(a >= b for a, b in zip(self.names, self.names[1:])):
            raise ValueError("label names must be unique and sorted")

    @classmethod
    def from_counts(cls, counts: Mapping[str, int]) -> "LabelTable":
        """Build a table from label name to total occurrence count."""
        names = tuple(sorted(counts))
        return cls(names, tuple(min(counts[name], U64_MAX) for name in names))

    @cached_property
    def ids(self) -> dict[str, int]:
        """Label name to id."""
        return {name: i for i, name in enumerate(self.names)}

    def __len__(self) -> int:
        """Return the number of labels."""
        return len(self.names)

    def name(self, label_id: int) -> str:
        """Return the name of ``label_id``."""
        return self.names[label_id]

    def frequency_of(self, label_id: int) -> int:
        """Return the global occurrence count of ``label_id``."""
        return self.frequency[label_id]

    def union(self, other: "LabelTable") -> "LabelTable":
        """Merge two tables, summing global frequencies per name."""
        totals: dict[str, int] = {}
        for table in (self, other):
            for name, count in zip(table.names, table.frequency):
                totals[name] = min(totals.get(name, 0) + count, U64_MAX)
        return LabelTable.from_counts(totals)

    def remap_to(self, target: "LabelTable") -> list[int]:
        """Return, per id of this table, the id of the same name in ``target``."""
        return [target.ids[name] for name in self.names]


def sort_pairs(pairs: Iterable[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
    """Order (label_id, count) pairs by count descending, then label id ascending."""
    return tuple(sorted(pairs, key=lambda pair: (-pair[1], pair[0])))
