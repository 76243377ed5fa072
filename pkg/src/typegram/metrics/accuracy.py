"""Module computing non-selective accuracy figures."""

from dataclasses import dataclass
from typing import Optional, Sequence

from typegram.errors import InputError
from typegram.metrics.records import EvalRecord
from typegram.utils import safe_ratio


@dataclass(frozen=True)
class AccuracyReport:
    """Exact-match accuracy overall and per train membership.

    Abstentions count as errors. A subset without records reports None.
    """

    total: int
    correct: int
    overall: float
    in_train: Optional[float]
    out_of_train: Optional[float]
    struct: Optional[float]
    in_train_count: int = 0
    struct_count: int = 0


def _accuracy(records: Sequence[EvalRecord]) -> Optional[float]:
    return safe_ratio(sum(r.correct for r in records), len(records))


def overall_accuracy(records: Sequence[EvalRecord]) -> AccuracyReport:
    """Return overall, in-train, out-of-train and struct-type accuracy.

    Raises:
        InputError: If ``records`` is empty.

    """
    if not records:
        raise InputError("cannot compute accuracy over zero records")
    inside = [r for r in records if r.in_train]
    outside = [r for r in records if not r.in_train]
    structs = [r for r in records if r.truth_is_struct]
    correct = sum(r.correct for r in records)
    return AccuracyReport(
        total=len(records),
        correct=correct,
        overall=correct / len(records),
        in_train=_accuracy(inside),
        out_of_train=_accuracy(outside),
        struct=_accuracy(structs),
        in_train_count=len(inside),
        struct_count=len(structs),
    )
