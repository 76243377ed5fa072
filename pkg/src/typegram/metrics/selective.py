"""Module computing selective-prediction coverage and risk."""

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from typegram.calibrate import passes_threshold
from typegram.metrics.records import EvalRecord
from typegram.utils import safe_ratio

# Thresholds of the default coverage-risk table; None keeps every emitted label.
DEFAULT_TAU_GRID: tuple[Optional[float], ...] = (None, 0.40, 0.65, 0.90)


@dataclass(frozen=True)
class SelectiveReport:
    """Coverage and risk at one threshold.

    ``kept`` and ``correct`` are K_t and C_t. Risks and ``sel_acc`` are None
    when nothing was kept; ``struct_risk`` only looks at records whose ground
    truth is a struct kind.
    """

    tau: Optional[float]
    total: int
    kept: int
    correct: int
    coverage: Optional[float]
    sel_acc: Optional[float]
    var_risk: Optional[float]
    struct_kept: int
    struct_correct: int
    struct_risk: Optional[float]


def _risk(kept: int, correct: int) -> Optional[float]:
    return safe_ratio(kept - correct, kept)


def kept_records(
    records: Iterable[EvalRecord], tau: Optional[float]
) -> list[EvalRecord]:
    """Records with an emitted label whose confidence clears ``tau``."""
    return [
        r for r in records if not r.abstained and passes_threshold(r.confidence, tau)
    ]


def selective_metrics(
    records: Sequence[EvalRecord], tau: Optional[float]
) -> SelectiveReport:
    """Compute K_t, C_t, coverage, sel-acc, var-risk and struct-risk at ``tau``."""
    kept = kept_records(records, tau)
    correct = sum(r.correct for r in kept)
    structs = [r for r in kept if r.truth_is_struct]
    struct_correct = sum(r.correct for r in structs)
    return SelectiveReport(
        tau=tau,
        total=len(records),
        kept=len(kept),
        correct=correct,
        coverage=safe_ratio(len(kept), len(records)),
        sel_acc=safe_ratio(correct, len(kept)),
        var_risk=_risk(len(kept), correct),
        struct_kept=len(structs),
        struct_correct=struct_correct,
        struct_risk=_risk(len(structs), struct_correct),
    )


def coverage_risk_curve(
    records: Sequence[EvalRecord],
    taus: Sequence[Optional[float]] = DEFAULT_TAU_GRID,
) -> list[SelectiveReport]:
    """Return one ``SelectiveReport`` per threshold, in the given order."""
    return [selective_metrics(records, tau) for tau in taus]
