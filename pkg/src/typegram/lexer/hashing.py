"""Module hashing normalized token sequences into 64-bit n-gram keys.

The key is FNV-1a 64 over the UTF-8 token texts joined with a 0x1F unit
separator. Databases written by one build are queried by another, so this
function must never change without bumping the database format version.

Feeding the unit ``0x1F + token`` to a state ``h`` gives
``h * P**len(unit) + table[h & 0xFF]`` modulo 2**64, because the xor only
touches the low byte and the low byte of a product depends only on the low
bytes of its factors. ``UnitCache`` keeps one such table per token, which lets
many windows be hashed at once with a few numpy operations per token.
"""

from functools import lru_cache
import logging
import sys
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
SEPARATOR = b"\x1f"
_MASK = 0xFFFFFFFFFFFFFFFF

# State that turns into the offset basis once the separator is fed, so every
# token, the first included, is hashed as a separator-prefixed unit.
UNIT_START = ((FNV_OFFSET_BASIS * pow(FNV_PRIME, -1, 1 << 64)) & _MASK) ^ SEPARATOR[0]
IDENTITY_ROW = 0
CACHE_TOKENS = 1 << 12

_PRIME = np.uint64(FNV_PRIME)
_LOW_BYTES = np.arange(256, dtype=np.uint64)
# Position of the least significant byte inside a uint64.
_LOW_BYTE = 0 if sys.byteorder == "little" else 7


@lru_cache(maxsize=1 << 12)
def fnv1a_64(data: bytes) -> int:
    """Return the FNV-1a 64-bit hash of a byte string."""
    h = FNV_OFFSET_BASIS
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK
    return h


def hash_encoded(parts: Iterable[bytes]) -> int:
    """Hash already-encoded token texts."""
    return fnv1a_64(SEPARATOR.join(parts))


def hash_context(tokens: Sequence[str]) -> int:
    """Hash a normalized token sequence into an n-gram key.

    Args:
        tokens (Sequence[str]): Token texts, center identifier already removed.

    Returns:
        int: Unsigned 64-bit key.

    Raises:
        ValueError: If the sequence is empty.

    """
    if not tokens:
        raise ValueError("cannot hash an empty context")
    return hash_encoded(token.encode("utf-8") for token in tokens)


class UnitCache:
    """Per-token transition tables of the FNV-1a fold, bounded in size.

    Row 0 is the identity (multiplier 1, empty table) used to pad windows
    shorter than the longest one in a batch. When a new batch would overflow
    ``capacity`` tokens the cache starts over.
    """

    def __init__(self, capacity: int = CACHE_TOKENS) -> None:
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self._rows: dict[str, int] = {}
        self._allocate(capacity)

    def _allocate(self, capacity: int) -> None:
        self.capacity = capacity
        self._rows.clear()
        self._multipliers = np.ones(capacity + 1, dtype=np.uint64)
        self._tables = np.zeros((capacity + 1, 256), dtype=np.uint64)

    def __len__(self) -> int:
        """Return the number of cached tokens."""
        return len(self._rows)

    def rows(self, texts: Sequence[str]) -> np.ndarray:
        """Return the table row of every token, adding the missing ones."""
        rows = self._rows
        missing = [text for text in dict.fromkeys(texts) if text not in rows]
        if missing:
            if len(rows) + len(missing) > self.capacity:
                logger.debug("Token table cache full at %d tokens", len(rows))
                missing = list(dict.fromkeys(texts))
                if len(missing) > self.capacity:
                    self._allocate(max(len(missing), 2 * self.capacity))
                else:
                    rows.clear()
            self._add(missing)
        return np.fromiter((rows[text] for text in texts), np.int64, len(texts))

    def _add(self, texts: list[str]) -> None:
        first = len(self._rows) + 1
        units = [SEPARATOR + text.encode("utf-8") for text in texts]
        by_length: dict[int, list[int]] = {}
        for position, unit in enumerate(units):
            by_length.setdefault(len(unit), []).append(position)
        for length, members in by_length.items():
            data = np.frombuffer(b"".join(units[m] for m in members), dtype=np.uint8)
            data = data.reshape(len(members), length).astype(np.uint64)
            h = np.tile(_LOW_BYTES, (len(members), 1))
            for column in range(length):
                h ^= data[:, column, None]
                h *= _PRIME
            multiplier = np.uint64(pow(FNV_PRIME, length, 1 << 64))
            target = np.asarray(members, dtype=np.int64) + first
            self._multipliers[target] = multiplier
            self._tables[target] = h - _LOW_BYTES * multiplier
        for position, text in enumerate(texts):
            self._rows[text] = first + position

    def fold(self, steps: np.ndarray) -> np.ndarray:
        """Hash each column of a (units, windows) matrix of table rows.

        Columns shorter than the matrix are padded with ``IDENTITY_ROW``.

        Returns:
            np.ndarray: One uint64 key per column.

        """
        width = steps.shape[1]
        h = np.full(width, UNIT_START, dtype=np.uint64)
        if width == 0 or steps.shape[0] == 0:
            return h
        offsets = steps * 256
        multipliers = self._multipliers[steps]
        tables = self._tables.reshape(-1)
        low = h.view(np.uint8)[_LOW_BYTE::8]
        index = np.empty(width, dtype=np.int64)
        gathered = np.empty(width, dtype=np.uint64)
        for offset, multiplier in zip(offsets, multipliers):
            np.add(offset, low, out=index)
            np.take(tables, index, out=gathered, mode="clip")
            h *= multiplier
            h += gathered
        return h

    def hash(self, tokens: Sequence[str]) -> int:
        """Hash one token sequence; equals ``hash_context(tokens)``."""
        if not tokens:
            raise ValueError("cannot hash an empty context")
        return int(self.fold(self.rows(tokens)[:, None])[0])


UNIT_CACHE = UnitCache()
