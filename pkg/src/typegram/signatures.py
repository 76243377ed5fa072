"""Module recovering function signatures from call sites.

Call sites are scored like variables, against a database indexed by call
contexts over the signature vocabulary. Surviving call-site predictions are then
merged into one prediction per callee across the whole binary.
"""

from dataclasses import dataclass, field
from enum import Enum
import logging
import math
import re
from typing import Iterable, Optional, Sequence, Union

from typegram.calibrate import CalibrationMap, passes_threshold
from typegram.corpus.types import AnnotatedFunction, Bitness, Corpus, Split, Vocabulary
from typegram.engine.inference import check_ensemble, decide_ranked, score_occurrences
from typegram.engine.scoring import Candidate, ScoringConfig
from typegram.lexer.contexts import call_sites, call_span
from typegram.ngramdb.builder import build_ensemble
from typegram.ngramdb.ensemble import DEFAULT_PORTFOLIO, DatabaseEnsemble
from typegram.utils import (
    FunctionPredictionRecord,
    format_address,
    harmonic_mean,
    parse_address,
    safe_ratio,
)

logger = logging.getLogger(__name__)

# Decompiler names for functions without a symbol, e.g. sub_401000.
_SYNTHETIC_NAME = re.compile(r"sub_([0-9A-Fa-f]+)")

CalleeKey = Union[int, str]


class TriageMatch(str, Enum):
    """What counts as a hit in a prefix triage report."""

    MEMBERSHIP = "membership"
    EXACT = "exact"


@dataclass(frozen=True)
class CallSitePrediction:
    """Signature prediction for one call site."""

    binary_id: str
    function_address: int
    token_index: int
    callee: str
    candidates: tuple[Candidate, ...] = ()
    label: Optional[str] = None
    confidence: float = 0.0
    calibrated: Optional[float] = None
    abstained: bool = True
    raw_score: float = 0.0
    matched_contexts: int = 0
    callee_address: Optional[int] = None

    @property
    def effective_confidence(self) -> float:
        """Calibrated probability when available, else c_norm."""
        return self.calibrated if self.calibrated is not None else self.confidence


@dataclass(frozen=True)
class FunctionPrediction:
    """Binary-wide signature prediction for one callee."""

    binary_id: str
    callee: str
    address: Optional[int]
    signature: str
    weight: float
    contexts: int
    sites: int
    votes: dict[str, float] = field(default_factory=dict)

    def to_record(self) -> FunctionPredictionRecord:
        """Return the JSON-lines form."""
        address = format_address(self.address) if self.address is not None else None
        return {
            "binary_id": self.binary_id,
            "callee": self.callee,
            "address": address,
            "signature": self.signature,
            "weight": self.weight,
            "contexts": self.contexts,
            "sites": self.sites,
        }

    @classmethod
    def from_record(cls, record: FunctionPredictionRecord) -> "FunctionPrediction":
        """Rebuild a function prediction from its JSON-lines form.

        Raises:
            KeyError: If a required key is missing.
            ValueError: If the address does not parse.

        """
        address = record.get("address")
        return cls(
            binary_id=record["binary_id"],
            callee=record["callee"],
            address=parse_address(address) if address is not None else None,
            signature=record["signature"],
            weight=float(record["weight"]),
            contexts=int(record["contexts"]),
            sites=int(record["sites"]),
        )


def callee_key(callee: str, address: Optional[int] = None) -> CalleeKey:
    """Return the identity a callee aggregates under.

    A known address wins; ``sub_<hex>`` names yield their address; any other
    callee keys on its name.

    Examples:
        >>> callee_key("sub_aaa")
        2730
        >>> callee_key("memcpy")
        'memcpy'

    """
    if address is not None:
        return address
    match = _SYNTHETIC_NAME.fullmatch(callee)
    if match:
        return int(match.group(1), 16)
    return callee


def build_signature_database(
    corpus: Corpus,
    portfolio: Sequence[int] = DEFAULT_PORTFOLIO,
    bitness: Bitness = Bitness.B64,
    threads: int = 1,
) -> DatabaseEnsemble:
    """Build a call-context ensemble over the signature vocabulary.

    Raises:
        EmptyCorpusError: If no train function has the requested bitness.

    """
    return build_ensemble(corpus, portfolio, bitness, Vocabulary.SIGNATURES, threads)


def infer_call_sites(
    function: AnnotatedFunction,
    ensemble: DatabaseEnsemble,
    config: ScoringConfig = ScoringConfig(),
    tau: Optional[float] = None,
    calibration: Optional[CalibrationMap] = None,
) -> list[CallSitePrediction]:
    """Predict a signature for every call site of ``function``, in source order.

    Raises:
        BitnessMismatchError: If the function and ensemble bitness differ.
        VocabularyMismatchError: If ``ensemble`` indexes types.

    """
    check_ensemble(ensemble, Vocabulary.SIGNATURES, function.bitness)
    stream = function.stream
    sites = call_sites(stream)
    spans = [call_span(stream.texts, index) for _, index in sites]
    right_ends = [span[0] for span in spans if span is not None]
    ranked = score_occurrences(
        stream, [[index] for _, index in sites], ensemble, config, right_ends
    )
    predictions = []
    for (callee, index), candidates in zip(sites, ranked):
        decision = decide_ranked(candidates, config, tau, calibration)
        chosen = decision.chosen
        predictions.append(
            CallSitePrediction(
                binary_id=function.binary_id,
                function_address=function.function_address,
                token_index=index,
                callee=callee,
                candidates=decision.ranked[: config.k],
                label=None if decision.abstained or chosen is None else chosen.label,
                confidence=decision.confidence,
                calibrated=decision.calibrated,
                abstained=decision.abstained,
                raw_score=chosen.raw_score if chosen is not None else 0.0,
                matched_contexts=(
                    chosen.matched_context_count if chosen is not None else 0
                ),
            )
        )
    return predictions


def aggregate_by_address(
    predictions: Iterable[CallSitePrediction], tau: Optional[float] = None
) -> list[FunctionPrediction]:
    """Merge call-site predictions into one signature per callee and binary.

    Abstained and below-``tau`` sites are dropped. Each remaining signature
    weighs the sum of its sites' confidences times the number of those sites;
    the heaviest wins, then the one with more sites, then the smaller name.
    Callees without a surviving site are left out.
    """
    groups: dict[tuple[str, CalleeKey], list[CallSitePrediction]] = {}
    names: dict[tuple[str, CalleeKey], str] = {}
    for prediction in predictions:
        group = (
            prediction.binary_id,
            callee_key(prediction.callee, prediction.callee_address),
        )
        groups.setdefault(group, []).append(prediction)
        names[group] = min(names.get(group, prediction.callee), prediction.callee)

    results = []
    for group, sites in groups.items():
        confidences: dict[str, list[float]] = {}
        for site in sites:
            if site.abstained or site.label is None:
                continue
            if not passes_threshold(site.effective_confidence, tau):
                continue
            confidences.setdefault(site.label, []).append(site.effective_confidence)
        if not confidences:
            continue
        votes = {
            signature: math.fsum(values) * len(values)
            for signature, values in confidences.items()
        }
        signature = min(votes, key=lambda s: (-votes[s], -len(confidences[s]), s))
        binary_id, key = group
        results.append(
            FunctionPrediction(
                binary_id=binary_id,
                callee=names[group],
                address=key if isinstance(key, int) else None,
                signature=signature,
                weight=votes[signature],
                contexts=len(confidences[signature]),
                sites=len(sites),
                votes=dict(sorted(votes.items())),
            )
        )
    results.sort(
        key=lambda p: (p.binary_id, p.address is None, p.address or 0, p.callee)
    )
    return results


def ground_truth_signatures(
    corpus: Corpus, split: Optional[Split] = None
) -> dict[tuple[str, CalleeKey], str]:
    """Map (binary_id, callee identity) to the annotated signature name."""
    truth: dict[tuple[str, CalleeKey], str] = {}
    for function in corpus.functions:
        if split is not None and function.split_tag is not split:
            continue
        for callee, signature in function.call_annotations.items():
            truth[(function.binary_id, callee_key(callee))] = signature
    return truth


@dataclass(frozen=True)
class TriageReport:
    """Prefix-filtered function predictions and, with ground truth, P/R/F1."""

    prefix: str
    listed: tuple[FunctionPrediction, ...]
    true_positives: Optional[int] = None
    predicted_positives: Optional[int] = None
    actual_positives: Optional[int] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None


def triage_report(
    function_predictions: Sequence[FunctionPrediction],
    prefix: str,
    ground_truth: Optional[dict[tuple[str, CalleeKey], str]] = None,
    match: TriageMatch = TriageMatch.MEMBERSHIP,
) -> TriageReport:
    """List predictions whose signature starts with ``prefix``.

    Listed predictions are ordered by weight descending, then callee. With
    ground truth, a listed prediction is a hit when its callee's true
    signature also starts with ``prefix`` (``MEMBERSHIP``) or equals the
    predicted one (``EXACT``); recall counts against every prefixed callee of
    the ground truth.
    """
    listed = sorted(
        (p for p in function_predictions if p.signature.startswith(prefix)),
        key=lambda p: (-p.weight, p.binary_id, p.callee),
    )
    if ground_truth is None:
        return TriageReport(prefix=prefix, listed=tuple(listed))

    hits = 0
    for prediction in listed:
        key = (
            prediction.binary_id,
            callee_key(prediction.callee, prediction.address),
        )
        truth = ground_truth.get(key)
        if truth is None:
            continue
        if match is TriageMatch.EXACT:
            hits += truth == prediction.signature
        else:
            hits += truth.startswith(prefix)
    actual = sum(1 for name in ground_truth.values() if name.startswith(prefix))
    precision = safe_ratio(hits, len(listed))
    recall = safe_ratio(hits, actual)
    return TriageReport(
        prefix=prefix,
        listed=tuple(listed),
        true_positives=hits,
        predicted_positives=len(listed),
        actual_positives=actual,
        precision=precision,
        recall=recall,
        f1=harmonic_mean(precision, recall),
    )
