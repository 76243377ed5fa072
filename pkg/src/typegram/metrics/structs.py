"""Module scoring struct identification and struct layout recovery."""

from dataclasses import dataclass, field
from enum import Enum
import logging
from statistics import fmean
from typing import Any, Callable, Optional, Sequence, TypeVar

from typegram.corpus.types import Bitness, TypeKind, TypeLayout, TypeLibrary
from typegram.metrics.records import EvalRecord
from typegram.utils import harmonic_mean, safe_ratio

logger = logging.getLogger(__name__)

R = TypeVar("R")


class GroupBy(str, Enum):
    """Record attribute that macro averages are taken over."""

    BINARY = "binary"
    OPT_LEVEL = "opt_level"


@dataclass(frozen=True)
class StructIdReport:
    """Confusion counts and P/R/F1 of struct-kind identification."""

    true_positives: int
    false_positives: int
    false_negatives: int
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]


def struct_identification(records: Sequence[EvalRecord]) -> StructIdReport:
    """Score how well struct and pointer-to-struct variables are recognized.

    A prediction is positive when its label is a struct kind; abstentions on
    struct ground truth are false negatives. Precision is None without positive
    predictions and recall None without positive ground truth.
    """
    tp = fp = fn = 0
    for record in records:
        if record.predicted_is_struct:
            if record.truth_is_struct:
                tp += 1
            else:
                fp += 1
        elif record.truth_is_struct:
            fn += 1
    precision = safe_ratio(tp, tp + fp)
    recall = safe_ratio(tp, tp + fn)
    f1 = harmonic_mean(precision, recall)
    return StructIdReport(tp, fp, fn, precision, recall, f1)


@dataclass(frozen=True)
class LayoutScore:
    """Field-level comparison of one predicted layout against its ground truth."""

    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float
    full_match: bool


def score_layout(
    predicted: frozenset[tuple[int, int]], truth: frozenset[tuple[int, int]]
) -> LayoutScore:
    """Compare (offset, width) sets.

    A field counts only when offset and width both match. Two empty layouts
    match fully; otherwise an empty side scores 0 precision or recall.

    Examples:
        >>> s = score_layout(frozenset({(0, 4), (4, 4)}), frozenset({(0, 4), (4, 8)}))
        >>> (s.true_positives, s.false_positives, s.false_negatives, s.precision)
        (1, 1, 1, 0.5)

    """
    tp = len(predicted & truth)
    fp = len(predicted - truth)
    fn = len(truth - predicted)
    if not predicted and not truth:
        return LayoutScore(0, 0, 0, 1.0, 1.0, 1.0, True)
    precision = tp / (tp + fp) if predicted else 0.0
    recall = tp / (tp + fn) if truth else 0.0
    f1 = harmonic_mean(precision, recall) or 0.0
    return LayoutScore(tp, fp, fn, precision, recall, f1, predicted == truth)


@dataclass(frozen=True)
class LayoutReport:
    """Per-variable layout scores and their macro averages.

    ``skipped`` counts struct-on-struct records whose layouts did not resolve.
    Averages are None when no record was scored.
    """

    scores: tuple[LayoutScore, ...] = ()
    skipped: int = 0
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    full_match_accuracy: Optional[float] = None


def resolve_layout(
    type_library: TypeLibrary, name: str, bitness: Optional[Bitness]
) -> Optional[TypeLayout]:
    """Return the struct layout behind ``name``, following pointers to structs."""
    label = type_library.resolve(name, bitness)
    if label is None and name in type_library:
        label = type_library[name]
    if label is None:
        return None
    if label.layout is not None:
        return label.layout
    if label.kind is TypeKind.POINTER_TO_STRUCT and label.pointee:
        return resolve_layout(type_library, label.pointee, bitness)
    return None


def layout_recovery(
    records: Sequence[EvalRecord], type_library: TypeLibrary
) -> LayoutReport:
    """Score field layouts where both prediction and ground truth are structs."""
    scores = []
    skipped = 0
    for record in records:
        if not (record.truth_is_struct and record.predicted_is_struct):
            continue
        assert record.predicted is not None
        predicted = resolve_layout(type_library, record.predicted, record.bitness)
        truth = resolve_layout(type_library, record.truth, record.bitness)
        if predicted is None or truth is None:
            skipped += 1
            continue
        scores.append(score_layout(predicted.offset_widths(), truth.offset_widths()))
    if skipped:
        logger.warning("Skipped %d records with unresolvable layouts", skipped)
    if not scores:
        return LayoutReport(skipped=skipped)
    return LayoutReport(
        scores=tuple(scores),
        skipped=skipped,
        precision=fmean(s.precision for s in scores),
        recall=fmean(s.recall for s in scores),
        f1=fmean(s.f1 for s in scores),
        full_match_accuracy=fmean(s.full_match for s in scores),
    )


def group_records(
    records: Sequence[EvalRecord], by: GroupBy
) -> dict[str, list[EvalRecord]]:
    """Split records by binary or by optimization level, in first-seen order.

    Records without an optimization level group under ``"unknown"``.
    """
    groups: dict[str, list[EvalRecord]] = {}
    for record in records:
        if by is GroupBy.BINARY:
            key = record.binary_id
        else:
            key = record.opt_level or "unknown"
        groups.setdefault(key, []).append(record)
    return groups


@dataclass(frozen=True)
class MacroReport:
    """Per-group reports and the macro average of their P/R/F1."""

    by: GroupBy
    groups: dict[str, Any] = field(default_factory=dict)
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None


def _macro(values: list[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return fmean(defined) if defined else None


def macro_average(
    records: Sequence[EvalRecord],
    by: GroupBy,
    metric: Callable[[Sequence[EvalRecord]], R],
) -> MacroReport:
    """Apply ``metric`` per group and average P/R/F1 over groups.

    Groups where a figure is undefined are left out of that figure's average.
    """
    groups = {key: metric(group) for key, group in group_records(records, by).items()}
    return MacroReport(
        by=by,
        groups=dict(groups),
        precision=_macro([getattr(r, "precision") for r in groups.values()]),
        recall=_macro([getattr(r, "recall") for r in groups.values()]),
        f1=_macro([getattr(r, "f1") for r in groups.values()]),
    )
