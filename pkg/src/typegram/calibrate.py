"""Module fitting isotonic calibration maps and applying confidence thresholds."""

from bisect import bisect_right
from dataclasses import dataclass
import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Optional, Sequence, TypeVar, Union

import numpy as np
from sklearn.isotonic import IsotonicRegression

from typegram.errors import InputError

if TYPE_CHECKING:
    from typegram.corpus.types import Corpus
    from typegram.engine.inference import Prediction

logger = logging.getLogger(__name__)

CALIBRATION_FORMAT_VERSION = 1

P = TypeVar("P", bound="Prediction")


@dataclass(frozen=True, slots=True)
class CalibrationPair:
    """Confidence of one validation prediction and whether it was right."""

    score: float
    correct: bool


@dataclass(frozen=True)
class CalibrationMap:
    """Non-decreasing step function from confidence to probability.

    ``breakpoints`` holds (score threshold, value) pairs with ascending
    thresholds. A score takes the value of the last threshold not above it;
    scores below the first threshold take the first value.
    """

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        """Check ordering and range of the breakpoints.

        Raises:
            ValueError: If empty, unordered, decreasing or outside [0, 1].

        """
        if not self.breakpoints:
            raise ValueError("a calibration map needs at least one breakpoint")
        thresholds = [t for t, _ in self.breakpoints]
        values = [v for _, v in self.breakpoints]
        if any(a >= b for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("calibration thresholds must be strictly increasing")
        if any(a > b for a, b in zip(values, values[1:])):
            raise ValueError("calibrated values must be non-decreasing")
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError("calibrated values must lie in [0, 1]")

    @property
    def thresholds(self) -> list[float]:
        """Breakpoint thresholds, ascending."""
        return [t for t, _ in self.breakpoints]

    def __call__(self, score: float) -> float:
        """Apply the map to ``score``."""
        return apply_calibration(self, score)

    def to_dict(self) -> dict:
        """Return the persisted JSON form."""
        return {
            "format_version": CALIBRATION_FORMAT_VERSION,
            "breakpoints": [[t, v] for t, v in self.breakpoints],
        }

    def save(self, path: Union[str, Path]) -> None:
        """Write the map as JSON."""
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CalibrationMap":
        """Read a map written by ``save``.

        Raises:
            InputError: On unreadable files, wrong versions or bad breakpoints.

        """
        try:
            with open(path, "r", encoding="utf-8") as handle:
                document = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read calibration map {path}: {exc}")
        if document.get("format_version") != CALIBRATION_FORMAT_VERSION:
            raise InputError(
                f"calibration map {path} has version "
                f"{document.get('format_version')}, expected "
                f"{CALIBRATION_FORMAT_VERSION}"
            )
        try:
            return cls(tuple((float(t), float(v)) for t, v in document["breakpoints"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"calibration map {path} is malformed: {exc}")


def fit_isotonic(pairs: Sequence[CalibrationPair]) -> CalibrationMap:
    """Fit the least-squares non-decreasing step function to ``pairs``.

    Equal scores are pooled first; adjacent blocks that end up with the same
    value share one breakpoint.

    Args:
        pairs (Sequence[CalibrationPair]): Validation scores and outcomes.

    Returns:
        CalibrationMap: Fitted map.

    Raises:
        InputError: If ``pairs`` is empty.

    Examples:
        >>> fit_isotonic([CalibrationPair(0.2, True), CalibrationPair(0.8, False)])
        CalibrationMap(breakpoints=((0.2, 0.5),))

    """
    if not pairs:
        raise InputError("cannot fit a calibration map without calibration pairs")
    scores = np.fromiter((p.score for p in pairs), dtype=float, count=len(pairs))
    outcomes = np.fromiter(
        (1.0 if p.correct else 0.0 for p in pairs), dtype=float, count=len(pairs)
    )
    model = IsotonicRegression(
        y_min=0.0, y_max=1.0, increasing=True, out_of_bounds="clip"
    )
    model.fit(scores, outcomes)
    grid = np.unique(scores)
    fitted = model.predict(grid)

    breakpoints: list[tuple[float, float]] = []
    for threshold, value in zip(grid.tolist(), fitted.tolist()):
        if breakpoints and value == breakpoints[-1][1]:
            continue
        breakpoints.append((threshold, value))
    correct = int(outcomes.sum())
    logger.info(
        "Fitted calibration on %d pairs (%d correct) into %d steps",
        len(pairs),
        correct,
        len(breakpoints),
    )
    if correct in (0, len(pairs)):
        logger.warning("Calibration pairs are all one class; the map is constant")
    return CalibrationMap(tuple(breakpoints))


def apply_calibration(calibration: CalibrationMap, score: float) -> float:
    """Return the value of the block whose left-closed interval holds ``score``."""
    position = bisect_right(calibration.thresholds, score) - 1
    return calibration.breakpoints[max(position, 0)][1]


def passes_threshold(confidence: float, tau: Optional[float]) -> bool:
    """Return True when ``confidence`` clears ``tau``.

    The comparison is strict except at ``tau == 1.0``, where a confidence of
    exactly 1.0 passes. ``tau`` of None passes everything.
    """
    if tau is None:
        return True
    if tau >= 1.0:
        return confidence >= 1.0
    return confidence > tau


def threshold_filter(predictions: Iterable[P], tau: Optional[float]) -> list[P]:
    """Keep non-abstained predictions whose confidence clears ``tau``.

    Confidence is the calibrated probability when present, else c_norm.
    """
    return [
        p
        for p in predictions
        if not p.abstained and passes_threshold(p.effective_confidence, tau)
    ]


def collect_calibration_pairs(
    predictions: Iterable["Prediction"], corpus: "Corpus"
) -> tuple[list[CalibrationPair], int]:
    """Pair each non-abstained prediction's c_norm with its correctness.

    Returns:
        tuple[list[CalibrationPair], int]: Pairs in input order, and the number
        of predictions skipped because the corpus has no ground truth for them.

    """
    pairs = []
    skipped = 0
    for prediction in predictions:
        if prediction.abstained:
            continue
        function = corpus.find(prediction.binary_id, prediction.function_address)
        truth = (
            function.variable_annotations.get(prediction.identifier)
            if function is not None
            else None
        )
        if truth is None:
            skipped += 1
            continue
        pairs.append(CalibrationPair(prediction.confidence, prediction.label == truth))
    if skipped:
        logger.warning("Skipped %d predictions without ground truth", skipped)
    return pairs, skipped


@dataclass(frozen=True)
class ReliabilityBin:
    """Mean score against observed accuracy for one score decile."""

    lower: float
    upper: float
    count: int
    mean_score: Optional[float]
    accuracy: Optional[float]


def reliability_table(
    pairs: Sequence[CalibrationPair], bins: int = 10
) -> list[ReliabilityBin]:
    """Bucket pairs by score into ``bins`` equal-width bins over [0, 1]."""
    table = []
    scores = np.array([p.score for p in pairs], dtype=float)
    correct = np.array([p.correct for p in pairs], dtype=bool)
    edges = np.linspace(0.0, 1.0, bins + 1)
    # The last bin is closed on the right so a score of 1.0 lands in it.
    index = np.clip(np.searchsorted(edges, scores, side="right") - 1, 0, bins - 1)
    for b in range(bins):
        mask = index == b
        count = int(mask.sum())
        table.append(
            ReliabilityBin(
                lower=float(edges[b]),
                upper=float(edges[b + 1]),
                count=count,
                mean_score=float(scores[mask].mean()) if count else None,
                accuracy=float(correct[mask].mean()) if count else None,
            )
        )
    return table
