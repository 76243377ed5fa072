"""Module reporting size statistics of n-gram databases."""

from dataclasses import asdict, dataclass
from typing import Any

from typegram.ngramdb.storage import MappedDatabase, serialized_size
from typegram.protocol import NGramStore


@dataclass(frozen=True)
class DbStats:
    """Size figures of one database.

    ``disk_bytes`` is the serialized file length. ``resident_bytes`` counts the
    key index and payload arrays a query can touch once the file is mapped.
    """

    n: int
    key_count: int
    label_count: int
    pair_count: int
    mean_labels_per_key: float
    disk_bytes: int
    resident_bytes: int

    def to_dict(self) -> dict[str, Any]:
        """Return the stats as a plain dict."""
        return asdict(self)


def db_stats(db: NGramStore) -> DbStats:
    """Collect key, label and pair counts plus on-disk and resident sizes.

    An empty database reports zero for every count and both sizes.
    """
    key_count = len(db)
    if isinstance(db, MappedDatabase):
        pair_count = db.pair_count
        disk_bytes = db.file_size
        resident_bytes = db.resident_bytes
    else:
        pair_count = sum(len(pairs) for _, pairs in db.items())
        disk_bytes = serialized_size(db)
        # keys and starts are u64, label ids and counts u32
        resident_bytes = 8 * key_count + 8 * (key_count + 1) + 8 * pair_count
    if key_count == 0 and len(db.labels) == 0:
        disk_bytes = resident_bytes = 0
    return DbStats(
        n=db.n,
        key_count=key_count,
        label_count=len(db.labels),
        pair_count=pair_count,
        mean_labels_per_key=pair_count / key_count if key_count else 0.0,
        disk_bytes=disk_bytes,
        resident_bytes=resident_bytes,
    )
