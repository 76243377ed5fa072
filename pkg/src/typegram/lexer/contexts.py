"""Module extracting fixed-radius context windows around identifier occurrences."""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from typegram.lexer.hashing import IDENTITY_ROW, UNIT_CACHE, UnitCache, hash_encoded
from typegram.lexer.tokens import BOS, EOS, TokenStream

_BOS_BYTES = BOS.encode("utf-8")
_EOS_BYTES = EOS.encode("utf-8")

# A parenthesis opened right after one of these holds a condition, not a cast.
_CONDITION_KEYWORDS = frozenset({"if", "while", "for", "switch", "sizeof"})
_STATEMENT_BOUNDARIES = frozenset({";", "{", "}"})


@dataclass(frozen=True, slots=True)
class ContextWindow:
    """Context of one identifier occurrence at radius ``n``.

    ``key`` hashes ``left + right``; the center identifier is never part of it.
    ``truncated`` marks call windows whose argument list ran off the stream end.
    """

    n: int
    left: tuple[str, ...]
    center: str
    index: int
    right: tuple[str, ...]
    key: int
    truncated: bool = False


def _closes_callee_casts(texts: Sequence[str], index: int, closing: int) -> bool:
    """Check that ``closing`` parentheses after ``index`` close casts around it.

    Each must match a ``(`` opened before the identifier within the same
    statement, and none of those may follow a condition keyword.
    """
    depth = 0
    opened = 0
    for position in range(index - 1, -1, -1):
        text = texts[position]
        if text in _STATEMENT_BOUNDARIES:
            return False
        if text == ")":
            depth += 1
        elif text == "(":
            if depth:
                depth -= 1
                continue
            if position and texts[position - 1] in _CONDITION_KEYWORDS:
                return False
            opened += 1
            if opened == closing:
                return True
    return False


def argument_list_start(texts: Sequence[str], index: int) -> Optional[int]:
    """Return the index of the ``(`` opening the argument list after ``index``.

    Closing parentheses of a cast wrapped around the callee, as in
    ``(*(f)(a))``, are skipped. A ``)`` that closes a condition, as in
    ``if ( a1 ) (*fn)(a1)``, is not. Returns None when no argument list follows.
    """
    j = index + 1
    while j < len(texts) and texts[j] == ")":
        j += 1
    if j >= len(texts) or texts[j] != "(":
        return None
    closing = j - index - 1
    if closing and not _closes_callee_casts(texts, index, closing):
        return None
    return j


def argument_list_end(texts: Sequence[str], start: int) -> tuple[int, bool]:
    """Return the index after the ``)`` balancing ``texts[start]``.

    The flag is True when the stream ends before the list closes.
    """
    depth = 0
    j = start
    while j < len(texts):
        if texts[j] == "(":
            depth += 1
        elif texts[j] == ")":
            depth -= 1
        j += 1
        if depth == 0:
            break
    return j, depth != 0


def call_span(texts: Sequence[str], index: int) -> Optional[tuple[int, bool]]:
    """Return where the argument list after ``index`` ends, and if it was cut."""
    start = argument_list_start(texts, index)
    if start is None:
        return None
    return argument_list_end(texts, start)


def call_sites(stream: TokenStream) -> list[tuple[str, int]]:
    """List every (callee, token index) pair of the stream in source order."""
    texts = stream.texts
    sites = [
        (name, index)
        for name, indices in stream.occurrences.items()
        for index in indices
        if argument_list_start(texts, index) is not None
    ]
    return sorted(sites, key=lambda site: site[1])


def callee_names(stream: TokenStream) -> set[str]:
    """Identifiers with at least one occurrence followed by an argument list."""
    return {name for name, _ in call_sites(stream)}


def _left(stream: TokenStream, index: int, n: int) -> tuple[int, tuple[str, ...]]:
    start = index - n
    texts = stream.texts[max(start, 0) : index]
    pad = -start if start < 0 else 0
    return pad, (BOS,) * pad + texts


def _window(
    stream: TokenStream, index: int, n: int, right_end: int, truncated: bool = False
) -> ContextWindow:
    """Assemble a window; the right side ends before ``right_end + n``."""
    encoded = stream.encoded
    pad_left, left = _left(stream, index, n)
    stop = min(right_end + n, len(stream.texts))
    right = stream.texts[index + 1 : stop]
    pad_right = right_end + n - stop
    right = right + (EOS,) * pad_right
    parts = (
        [_BOS_BYTES] * pad_left
        + list(encoded[max(index - n, 0) : index])
        + list(encoded[index + 1 : stop])
        + [_EOS_BYTES] * pad_right
    )
    key = hash_encoded(parts)
    return ContextWindow(
        n=n,
        left=left,
        center=stream.texts[index],
        index=index,
        right=right,
        key=key,
        truncated=truncated,
    )


def variable_window(stream: TokenStream, index: int, n: int) -> ContextWindow:
    """Window of exactly ``n`` tokens on each side of the occurrence at ``index``."""
    return _window(stream, index, n, index + 1)


def call_window(stream: TokenStream, index: int, n: int) -> Optional[ContextWindow]:
    """Window of a call site: the whole argument list plus ``n`` further tokens.

    Returns None when no argument list follows the token at ``index``.
    """
    span = call_span(stream.texts, index)
    if span is None:
        return None
    end, truncated = span
    return _window(stream, index, n, end, truncated=truncated)


def window_keys(
    stream: TokenStream,
    indices: Sequence[int],
    ns: Sequence[int],
    right_ends: Optional[Sequence[int]] = None,
    cache: UnitCache = UNIT_CACHE,
) -> np.ndarray:
    """Hash the windows of many occurrences at every radius in one pass.

    Args:
        stream (TokenStream): Tokenized function.
        indices (Sequence[int]): Token indices of the occurrences.
        ns (Sequence[int]): Window radii.
        right_ends (Sequence[int], optional): End of each argument list, as
            given by ``call_span``; None hashes variable windows.
        cache (UnitCache): Token tables to fold with.

    Returns:
        np.ndarray: uint64 keys of shape (len(ns), len(indices)), equal to the
        ``key`` of ``variable_window`` (or ``call_window``) at each radius.

    """
    ns = tuple(ns)
    count = len(indices)
    if not count or not ns:
        return np.empty((len(ns), count), dtype=np.uint64)
    pad = max(ns)
    rows = cache.rows((BOS, EOS) + stream.texts)
    padded = np.concatenate([np.full(pad, rows[0]), rows[2:], np.full(pad, rows[1])])
    last = len(padded) - 1
    index = np.asarray(indices, dtype=np.int64)
    if right_ends is None:
        inner = np.zeros(count, dtype=np.int64)
    else:
        inner = np.asarray(right_ends, dtype=np.int64) - index - 1
    steps = np.full(
        (2 * pad + int(inner.max()), len(ns) * count), IDENTITY_ROW, dtype=np.int64
    )
    for group, n in enumerate(ns):
        lengths = inner + 2 * n
        span = int(lengths.max())
        offset = np.arange(span)[:, None]
        # The center token sits between the n left and the remaining right units.
        source = (pad + index - n) + offset + (offset >= n)
        np.minimum(source, last, out=source)
        block = padded[source]
        if right_ends is not None:
            block[offset >= lengths] = IDENTITY_ROW
        steps[:span, group * count : (group + 1) * count] = block
    return cache.fold(steps).reshape(len(ns), count)


def extract_variable_contexts(
    stream: TokenStream, identifier: str, n: int
) -> list[ContextWindow]:
    """Extract one window per occurrence of ``identifier``, in source order.

    Windows are padded with ``<BOS>``/``<EOS>`` to exactly ``n`` tokens per side.

    Args:
        stream (TokenStream): Tokenized function.
        identifier (str): Variable name to look up.
        n (int): Window radius, at least 1.

    Returns:
        list[ContextWindow]: Empty when the identifier does not occur.

    Raises:
        ValueError: If n is smaller than 1.

    """
    if n < 1:
        raise ValueError(f"variable window radius must be >= 1, got {n}")
    return [
        variable_window(stream, index, n)
        for index in stream.occurrences.get(identifier, ())
    ]


def extract_call_contexts(
    stream: TokenStream, callee: str, n: int
) -> list[ContextWindow]:
    """Extract one window per call of ``callee``, in source order.

    The right side carries every token of the balanced argument list (not
    counted against ``n``) followed by ``n`` more tokens. An argument list left
    open at the end of the stream is cut there and the window flagged.

    Raises:
        ValueError: If n is negative.

    """
    if n < 0:
        raise ValueError(f"call window radius must be >= 0, got {n}")
    windows = []
    for index in stream.occurrences.get(callee, ()):
        window = call_window(stream, index, n)
        if window is not None:
            windows.append(window)
    return windows
