"""Module serializing n-gram databases and opening them as memory maps.

A database file is little-endian and laid out as::

    header | label names (JSON) | frequencies u64[L] | keys u64[K]
           | starts u64[K+1] | label ids u32[P] | counts u32[P]

Keys are sorted ascending; the pairs of key ``i`` live at
``[starts[i], starts[i+1])`` in the two u32 arrays. The header carries a CRC-32
over every byte that follows it.
"""

import json
import logging
import mmap
from pathlib import Path
import struct
import time
from typing import Iterator, Optional, Sequence, Union
import zlib

import numpy as np

from typegram.corpus.types import Bitness, Vocabulary
from typegram.errors import DatabaseFormatError
from typegram.ngramdb.labels import LabelTable
from typegram.protocol import BatchResult, LabelCount, NGramStore, check_k

logger = logging.getLogger(__name__)

MAGIC = b"TGDB"
FORMAT_VERSION = 1

# magic, version, bitness, vocabulary, n, key_count, label_count, pair_count,
# then seven section offsets/sizes and the payload checksum.
HEADER = struct.Struct("<4sHBBIQIQ7QI4x")
HEADER_SIZE = HEADER.size

_VOCABULARY_CODES = {Vocabulary.TYPES: 0, Vocabulary.SIGNATURES: 1}
_VOCABULARY_BY_CODE = {code: vocab for vocab, code in _VOCABULARY_CODES.items()}


def _align(offset: int, to: int = 8) -> int:
    return (offset + to - 1) // to * to


def _encode(db: NGramStore) -> bytes:
    """Return the complete file image of ``db``."""
    keys: list[int] = []
    starts = [0]
    label_ids: list[int] = []
    counts: list[int] = []
    for key, pairs in db.items():
        keys.append(key)
        for label_id, count in pairs:
            label_ids.append(label_id)
            counts.append(count)
        starts.append(len(label_ids))

    names = json.dumps(list(db.labels.names), ensure_ascii=False).encode("utf-8")
    sections = [
        names,
        np.asarray(db.labels.frequency, dtype="<u8").tobytes(),
        np.asarray(keys, dtype="<u8").tobytes(),
        np.asarray(starts, dtype="<u8").tobytes(),
        np.asarray(label_ids, dtype="<u4").tobytes(),
        np.asarray(counts, dtype="<u4").tobytes(),
    ]
    offsets = []
    payload = bytearray()
    for section in sections:
        padding = _align(HEADER_SIZE + len(payload)) - HEADER_SIZE - len(payload)
        payload.extend(b"\0" * padding)
        offsets.append(HEADER_SIZE + len(payload))
        payload.extend(section)

    header = HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        int(db.bitness),
        _VOCABULARY_CODES[db.vocabulary],
        db.n,
        len(keys),
        len(db.labels),
        len(label_ids),
        offsets[0],
        len(names),
        *offsets[1:],
        zlib.crc32(payload),
    )
    return header + bytes(payload)


def serialized_size(db: NGramStore) -> int:
    """Return the byte length ``serialize`` would write for ``db``."""
    return len(_encode(db))


def serialize(db: NGramStore, path: Union[str, Path]) -> int:
    """Write ``db`` to ``path`` and return the number of bytes written."""
    image = _encode(db)
    Path(path).write_bytes(image)
    logger.debug("Serialized n=%d database to %s (%d bytes)", db.n, path, len(image))
    return len(image)


class MappedDatabase(NGramStore):
    """Read-only database backed by a memory-mapped file.

    Keys are found by binary search over the mapped key array; nothing is
    deserialized except the label table. Use as a context manager or call
    ``close`` to release the map.
    """

    def __init__(self, path: Union[str, Path], verify: bool = True) -> None:
        """Map ``path`` and check its header.

        Args:
            path (str | Path): File written by ``serialize``.
            verify (bool): Recompute the payload checksum while opening.

        Raises:
            DatabaseFormatError: On bad magic, version, truncation or checksum.

        """
        self.path = Path(path)
        try:
            with open(self.path, "rb") as handle:
                self._map: Optional[mmap.mmap] = mmap.mmap(
                    handle.fileno(), 0, access=mmap.ACCESS_READ
                )
        except (OSError, ValueError) as exc:
            raise DatabaseFormatError(f"cannot map {self.path}: {exc}")
        try:
            self._read_header()
        except DatabaseFormatError:
            self.close()
            raise
        if verify:
            try:
                self.verify()
            except DatabaseFormatError:
                self.close()
                raise

    def _read_header(self) -> None:
        buffer = self._buffer
        if len(buffer) < HEADER_SIZE:
            raise DatabaseFormatError(f"{self.path} is truncated: no header")
        (
            magic,
            version,
            bitness,
            vocabulary,
            self.n,
            key_count,
            label_count,
            pair_count,
            names_offset,
            names_size,
            frequency_offset,
            keys_offset,
            starts_offset,
            ids_offset,
            counts_offset,
            self._checksum,
        ) = HEADER.unpack_from(buffer, 0)
        if magic != MAGIC:
            raise DatabaseFormatError(f"{self.path} is not a typegram database")
        if version != FORMAT_VERSION:
            raise DatabaseFormatError(
                f"{self.path} has format version {version}, expected {FORMAT_VERSION}"
            )
        if bitness not in (32, 64) or vocabulary not in _VOCABULARY_BY_CODE:
            raise DatabaseFormatError(f"{self.path} has a corrupt header")
        self.bitness = Bitness(bitness)
        self.vocabulary = _VOCABULARY_BY_CODE[vocabulary]

        end = counts_offset + 4 * pair_count
        if len(buffer) < end:
            raise DatabaseFormatError(
                f"{self.path} is truncated: {len(buffer)} bytes, expected {end}"
            )
        raw_names = self._section("u1", names_size, names_offset, "label names")
        try:
            names = json.loads(raw_names.tobytes())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DatabaseFormatError(f"{self.path} has a corrupt label table: {exc}")
        frequency = self._section("<u8", label_count, frequency_offset, "frequencies")
        try:
            self.labels = LabelTable(tuple(names), tuple(frequency.tolist()))
        except (TypeError, ValueError) as exc:
            raise DatabaseFormatError(f"{self.path} has a corrupt label table: {exc}")

        self._keys = self._section("<u8", key_count, keys_offset, "keys")
        self._starts = self._section("<u8", key_count + 1, starts_offset, "starts")
        self._label_ids = self._section("<u4", pair_count, ids_offset, "label ids")
        self._counts = self._section("<u4", pair_count, counts_offset, "counts")
        if int(self._starts[0]) != 0 or int(self._starts[-1]) != pair_count:
            raise DatabaseFormatError(
                f"{self.path} has a corrupt header: pair starts do not span "
                f"{pair_count} pairs"
            )

    def _section(self, dtype: str, count: int, offset: int, name: str) -> np.ndarray:
        """View ``count`` items at ``offset`` after checking they lie in the file."""
        buffer = self._buffer
        size = np.dtype(dtype).itemsize * count
        if offset < HEADER_SIZE or offset + size > len(buffer):
            raise DatabaseFormatError(
                f"{self.path} has a corrupt header: {name} at [{offset}, "
                f"{offset + size}) lies outside its {len(buffer)} bytes"
            )
        return np.frombuffer(buffer, dtype=dtype, count=count, offset=offset)

    @property
    def _buffer(self) -> mmap.mmap:
        if self._map is None:
            raise ValueError(f"database {self.path} is closed")
        return self._map

    def verify(self) -> None:
        """Recompute the payload checksum.

        Raises:
            DatabaseFormatError: If the stored and computed checksums differ.

        """
        buffer = self._buffer
        actual = zlib.crc32(memoryview(buffer)[HEADER_SIZE:])
        if actual != self._checksum:
            raise DatabaseFormatError(
                f"{self.path} failed its checksum "
                f"(stored {self._checksum:#010x}, computed {actual:#010x})"
            )

    def _lookup(self, key: int) -> Sequence[LabelCount]:
        index = int(np.searchsorted(self._keys, np.uint64(key)))
        if index >= len(self._keys) or int(self._keys[index]) != key:
            return ()
        start, end = int(self._starts[index]), int(self._starts[index + 1])
        return tuple(
            zip(
                self._label_ids[start:end].tolist(),
                self._counts[start:end].tolist(),
            )
        )

    def query_many(
        self, keys: Union[Sequence[int], np.ndarray], k: int = 3
    ) -> BatchResult:
        """Answer a batch of queries with one binary search over the key array.

        Raises:
            ValueError: If k is smaller than 1.

        """
        check_k(k)
        wanted = np.asarray(keys, dtype=np.uint64)
        if not len(self._keys):
            empty = np.empty(0, dtype=np.int64)
            return BatchResult(empty, empty, empty, empty)
        found = np.searchsorted(self._keys, wanted)
        np.minimum(found, len(self._keys) - 1, out=found)
        rows = np.flatnonzero(self._keys[found] == wanted)
        found = found[rows]
        starts = self._starts[found].astype(np.int64)
        distinct = self._starts[found + 1].astype(np.int64) - starts
        taken = np.minimum(distinct, k)
        owner = np.repeat(np.arange(len(rows)), taken)
        rank = np.arange(len(owner)) - np.repeat(np.cumsum(taken) - taken, taken)
        pairs = starts[owner] + rank
        return BatchResult(
            rows=rows[owner],
            label_ids=self._label_ids[pairs].astype(np.int64),
            counts=self._counts[pairs].astype(np.int64),
            distinct=distinct[owner],
        )

    def keys(self) -> Iterator[int]:
        """Iterate stored keys in ascending order."""
        return iter(self._keys.tolist())

    def __len__(self) -> int:
        """Return the number of stored keys."""
        return len(self._keys)

    @property
    def pair_count(self) -> int:
        """Total number of (key, label) pairs."""
        return len(self._label_ids)

    @property
    def resident_bytes(self) -> int:
        """Bytes of index and payload arrays addressed through the map."""
        return int(
            self._keys.nbytes
            + self._starts.nbytes
            + self._label_ids.nbytes
            + self._counts.nbytes
        )

    @property
    def file_size(self) -> int:
        """Length of the mapped file."""
        return len(self._buffer)

    def close(self) -> None:
        """Drop the array views and unmap the file."""
        if self._map is None:
            return
        empty_u8 = np.empty(0, dtype="<u8")
        empty_u4 = np.empty(0, dtype="<u4")
        self._keys, self._starts = empty_u8, empty_u8
        self._label_ids, self._counts = empty_u4, empty_u4
        mapping, self._map = self._map, None
        try:
            mapping.close()
        except BufferError:
            # Views handed out to callers keep the map alive until collected.
            logger.debug("Map of %s still referenced; left to the collector", self.path)

    def __reduce__(self) -> tuple:
        """Pickle as the path, so worker processes map the file themselves."""
        return (MappedDatabase, (str(self.path), False))

    def __enter__(self) -> "MappedDatabase":
        """Return self."""
        return self

    def __exit__(self, *exc_info: object) -> None:
        """Close the map."""
        self.close()


def open_mapped(path: Union[str, Path], verify: bool = True) -> MappedDatabase:
    """Open a serialized database without reading its payload.

    Args:
        path (str | Path): Database file.
        verify (bool): Check the payload checksum; costs one pass over the file.

    Returns:
        MappedDatabase: Query-identical to the database that was serialized.

    Raises:
        DatabaseFormatError: On bad magic, version, truncation or checksum.

    """
    started = time.perf_counter()
    db = MappedDatabase(path, verify=verify)
    logger.debug(
        "Opened %s (n=%d, %d keys) in %.1f ms",
        path,
        db.n,
        len(db),
        (time.perf_counter() - started) * 1000,
    )
    return db
