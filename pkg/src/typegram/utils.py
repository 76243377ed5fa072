"""Module provides helper functions."""

from enum import Enum
import json
from pathlib import Path
from typing import (
    Any,
    Iterable,
    Iterator,
    Optional,
    Type,
    TypedDict,
    TypeVar,
    Union,
)

from typegram.errors import CorpusError

E = TypeVar("E", bound=Enum)  # Provides mypy proper Enum member typing


class CandidateRecord(TypedDict):
    """Ranked candidate as written to prediction files."""

    label: str
    raw_score: float


class PredictionRecord(TypedDict, total=False):
    """Variable prediction line template."""

    binary_id: str
    address: str
    identifier: str
    label: Optional[str]
    raw_score: float
    confidence: float
    calibrated: Optional[float]
    abstained: bool
    contexts: int
    candidates: list[CandidateRecord]


class FunctionPredictionRecord(TypedDict):
    """Aggregated function signature line template."""

    binary_id: str
    callee: str
    address: Optional[str]
    signature: str
    weight: float
    contexts: int
    sites: int


def check_enum_value(field: Union[str, int, Enum], enum_cls: Type[E]) -> E:
    """Return the enum member for a raw value or an existing member.

    Args:
        field: A raw value (string or integer) or Enum member.
        enum_cls: Enum class to validate against.

    Returns:
        The matching enum member.

    Raises:
        ValueError: If field is not a valid enum member or value.

    """
    if isinstance(field, enum_cls):
        return field
    for member in enum_cls:
        if member.value == field or str(member.value) == str(field):
            return member
    raise ValueError(
        f"'{field}' is not a valid value of {enum_cls.__name__}. "
        f"Expected one of: {[m.value for m in enum_cls]}"
    )


def resolve_enum(
    value: Optional[Union[str, int, Enum]], enum_cls: Type[E], default: E
) -> E:
    """Help check and resolve enumerated fields.

    Args:
        value: Raw value or Enum member to check.
        enum_cls: The Enum class to validate against.
        default: The default Enum member to utilize if value is None.

    Returns:
        Valid member from enum.

    Raises:
        ValueError: If value is not a valid enum value/member.

    """
    if value is None:
        return default
    return check_enum_value(value, enum_cls)


def format_address(address: int) -> str:
    """Render an address as the hex string used by the file formats."""
    return f"0x{address:x}"


def parse_address(value: Union[str, int]) -> int:
    """Parse a hex address string (with or without 0x) into an integer.

    Raises:
        ValueError: If the value is not a non-negative 64-bit hex number.

    """
    if isinstance(value, int):
        address = value
    else:
        address = int(value, 16)
    if not 0 <= address < 2**64:
        raise ValueError(f"address {value!r} is outside the unsigned 64-bit range")
    return address


def write_jsonl(path: Union[str, Path], records: Iterable[Any]) -> int:
    """Write one JSON document per line and return the record count."""
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True))
            handle.write("\n")
            count += 1
    return count


def read_jsonl(path: Union[str, Path]) -> Iterator[tuple[int, Any]]:
    """Yield (line number, decoded object) for every non-blank line."""
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON: {exc.msg}", str(path), lineno)


def safe_ratio(numerator: float, denominator: float) -> Optional[float]:
    """Return numerator/denominator, or None when the denominator is zero."""
    if denominator == 0:
        return None
    return numerator / denominator


def harmonic_mean(p: Optional[float], r: Optional[float]) -> Optional[float]:
    """F1 of precision and recall; None when either is undefined."""
    if p is None or r is None:
        return None
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)
