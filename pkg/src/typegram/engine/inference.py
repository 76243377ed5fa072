"""Module running per-variable inference against a database ensemble."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
import logging
from typing import Optional, Sequence, Union

import numpy as np

from typegram.calibrate import CalibrationMap, apply_calibration, passes_threshold
from typegram.corpus.types import AnnotatedFunction, Bitness, TypeLibrary, Vocabulary
from typegram.engine.scoring import (
    Candidate,
    MatchArrays,
    MatchEvidence,
    ScoringConfig,
    apply_struct_priority,
    normalize_confidence,
    score_candidates,
    score_match_arrays,
)
from typegram.errors import BitnessMismatchError, VocabularyMismatchError
from typegram.lexer.contexts import callee_names, window_keys
from typegram.lexer.tokens import TokenStream, tokenize
from typegram.ngramdb.ensemble import DatabaseEnsemble
from typegram.utils import (
    CandidateRecord,
    PredictionRecord,
    format_address,
    parse_address,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Prediction:
    """Outcome of inferring one identifier.

    ``confidence`` is c_norm of the chosen candidate, even when a threshold
    made the prediction abstain; only the no-evidence path reports 0.
    """

    binary_id: str
    function_address: int
    identifier: str
    candidates: tuple[Candidate, ...] = ()
    label: Optional[str] = None
    confidence: float = 0.0
    calibrated: Optional[float] = None
    abstained: bool = True
    raw_score: float = 0.0
    matched_contexts: int = 0

    @property
    def effective_confidence(self) -> float:
        """Calibrated probability when available, else c_norm."""
        return self.calibrated if self.calibrated is not None else self.confidence

    def to_record(self) -> PredictionRecord:
        """Return the JSON-lines form of the prediction."""
        candidates: list[CandidateRecord] = [
            {"label": c.label, "raw_score": c.raw_score} for c in self.candidates
        ]
        return {
            "binary_id": self.binary_id,
            "address": format_address(self.function_address),
            "identifier": self.identifier,
            "label": self.label,
            "raw_score": self.raw_score,
            "confidence": self.confidence,
            "calibrated": self.calibrated,
            "abstained": self.abstained,
            "contexts": self.matched_contexts,
            "candidates": candidates,
        }

    @classmethod
    def from_record(cls, record: PredictionRecord) -> "Prediction":
        """Rebuild a prediction from its JSON-lines form.

        Candidates come back without label ids or per-context contributions.

        Raises:
            KeyError: If a required key is missing.
            ValueError: If the address does not parse.

        """
        return cls(
            binary_id=record["binary_id"],
            function_address=parse_address(record["address"]),
            identifier=record["identifier"],
            candidates=tuple(
                Candidate(
                    label_id=-1,
                    label=c["label"],
                    raw_score=c["raw_score"],
                    contributions=(),
                )
                for c in record.get("candidates", [])
            ),
            label=record.get("label"),
            confidence=record.get("confidence", 0.0),
            calibrated=record.get("calibrated"),
            abstained=record.get("abstained", record.get("label") is None),
            raw_score=record.get("raw_score", 0.0),
            matched_contexts=record.get("contexts", 0),
        )


@dataclass(frozen=True)
class Decision:
    """Ranked candidates plus the emit/abstain verdict on the top one."""

    ranked: tuple[Candidate, ...]
    chosen: Optional[Candidate]
    confidence: float
    calibrated: Optional[float]
    abstained: bool


def score_occurrences(
    stream: TokenStream,
    groups: Sequence[Sequence[int]],
    ensemble: DatabaseEnsemble,
    config: ScoringConfig,
    right_ends: Optional[Sequence[int]] = None,
) -> list[list[Candidate]]:
    """Rank candidates for each group of occurrences against every member database.

    Every window of every group is hashed in one batch and each database answers
    a single batch query. Groups are usually the occurrences of one identifier,
    or a single call site.

    Args:
        stream (TokenStream): Tokenized function.
        groups (Sequence[Sequence[int]]): Token indices per group, ascending.
        ensemble (DatabaseEnsemble): Databases to query.
        config (ScoringConfig): Scoring knobs.
        right_ends (Sequence[int], optional): Argument list end of every
            occurrence, groups flattened in order; None for variable windows.

    Returns:
        list[list[Candidate]]: Ranked candidates, one list per group.

    """
    indices = [index for group in groups for index in group]
    if not indices:
        return [[] for _ in groups]
    owners = np.repeat(np.arange(len(groups)), [len(group) for group in groups])
    keys = window_keys(stream, indices, ensemble.ns, right_ends)
    width = len(ensemble.databases)
    batches = [
        (position, db.n, db.query_many(keys[position], config.k))
        for position, db in enumerate(ensemble.databases)
    ]
    matches = MatchArrays(
        group=np.concatenate([owners[batch.rows] for _, _, batch in batches]),
        order=np.concatenate(
            [batch.rows * width + position for position, _, batch in batches]
        ),
        label_ids=np.concatenate([batch.label_ids for _, _, batch in batches]),
        radius=np.concatenate(
            [np.full(len(batch), n, dtype=np.int64) for _, n, batch in batches]
        ),
        distinct=np.concatenate([batch.distinct for _, _, batch in batches]),
    )
    return score_match_arrays(
        matches, len(groups), ensemble.n_max, ensemble.labels, config
    )


def decide(
    evidence: MatchEvidence,
    config: ScoringConfig,
    tau: Optional[float] = None,
    calibration: Optional[CalibrationMap] = None,
    type_library: Optional[TypeLibrary] = None,
    bitness: Optional[Bitness] = None,
) -> Decision:
    """Score evidence and decide whether to emit the top candidate."""
    return decide_ranked(
        score_candidates(evidence, config),
        config,
        tau,
        calibration,
        type_library,
        bitness,
    )


def decide_ranked(
    ranked: list[Candidate],
    config: ScoringConfig,
    tau: Optional[float] = None,
    calibration: Optional[CalibrationMap] = None,
    type_library: Optional[TypeLibrary] = None,
    bitness: Optional[Bitness] = None,
) -> Decision:
    """Decide whether to emit the top of an already ranked candidate list.

    Abstains when nothing matched, when the chosen label matched fewer than
    ``config.min_contexts`` contexts, or when its confidence does not clear
    ``tau``.
    """
    if not ranked:
        return Decision((), None, 0.0, None, True)
    if config.struct_priority and type_library is not None:
        ranked = apply_struct_priority(
            ranked, type_library, config.struct_priority_margin, bitness
        )
    chosen = ranked[0]
    confidence = normalize_confidence(chosen.raw_score, chosen.matched_context_count)
    calibrated = (
        apply_calibration(calibration, confidence) if calibration is not None else None
    )
    effective = calibrated if calibrated is not None else confidence
    abstained = (
        chosen.matched_context_count < config.min_contexts
        or not passes_threshold(effective, tau)
    )
    return Decision(tuple(ranked), chosen, confidence, calibrated, abstained)


def check_ensemble(
    ensemble: DatabaseEnsemble, vocabulary: Vocabulary, bitness: Optional[Bitness]
) -> None:
    """Reject ensembles of the wrong vocabulary or bitness.

    Raises:
        VocabularyMismatchError: If the ensemble indexes the other vocabulary.
        BitnessMismatchError: If ``bitness`` is given and differs.

    """
    if ensemble.vocabulary is not vocabulary:
        raise VocabularyMismatchError(
            f"expected a {vocabulary.value} ensemble, got {ensemble.vocabulary.value}"
        )
    if bitness is not None and ensemble.bitness != bitness:
        raise BitnessMismatchError(
            f"{int(bitness)}-bit input cannot query a "
            f"{int(ensemble.bitness)}-bit ensemble"
        )


def infer_variable(
    function: Union[AnnotatedFunction, str],
    identifier: str,
    ensemble: DatabaseEnsemble,
    config: ScoringConfig = ScoringConfig(),
    tau: Optional[float] = None,
    calibration: Optional[CalibrationMap] = None,
    type_library: Optional[TypeLibrary] = None,
    bitness: Optional[Bitness] = None,
) -> Prediction:
    """Infer the type of ``identifier`` inside one function.

    Args:
        function (AnnotatedFunction | str): Function record, or raw pseudo-code.
        identifier (str): Variable to type.
        ensemble (DatabaseEnsemble): Type-vocabulary ensemble.
        config (ScoringConfig): Scoring knobs.
        tau (float, optional): Confidence threshold; None keeps every match.
        calibration (CalibrationMap, optional): Applied to c_norm before
            thresholding.
        type_library (TypeLibrary, optional): Needed for struct priority.
        bitness (Bitness, optional): Bitness of raw code; records carry their own.

    Returns:
        Prediction: Emitted or abstained prediction.

    Raises:
        BitnessMismatchError: If the function and ensemble bitness differ.
        VocabularyMismatchError: If ``ensemble`` indexes signatures.

    """
    if isinstance(function, AnnotatedFunction):
        bitness = function.bitness
        stream = function.stream
        binary_id, address = function.identity
    else:
        stream = tokenize(function)
        binary_id, address = "", 0
    check_ensemble(ensemble, Vocabulary.TYPES, bitness)
    (ranked,) = score_occurrences(
        stream, [stream.occurrences.get(identifier, ())], ensemble, config
    )
    return _predict(
        identifier,
        ranked,
        config,
        tau,
        calibration,
        type_library,
        ensemble.bitness,
        binary_id,
        address,
    )


def _predict(
    identifier: str,
    ranked: list[Candidate],
    config: ScoringConfig,
    tau: Optional[float],
    calibration: Optional[CalibrationMap],
    type_library: Optional[TypeLibrary],
    bitness: Bitness,
    binary_id: str,
    address: int,
) -> Prediction:
    decision = decide_ranked(ranked, config, tau, calibration, type_library, bitness)
    chosen = decision.chosen
    return Prediction(
        binary_id=binary_id,
        function_address=address,
        identifier=identifier,
        candidates=decision.ranked[: config.k],
        label=None if decision.abstained or chosen is None else chosen.label,
        confidence=decision.confidence,
        calibrated=decision.calibrated,
        abstained=decision.abstained,
        raw_score=chosen.raw_score if chosen is not None else 0.0,
        matched_contexts=chosen.matched_context_count if chosen is not None else 0,
    )


def variable_identifiers(stream: TokenStream) -> list[str]:
    """Identifiers to type, by first occurrence; callees are left out."""
    callees = callee_names(stream)
    return [name for name in stream.occurrences if name not in callees]


def infer_function(
    function: AnnotatedFunction,
    ensemble: DatabaseEnsemble,
    config: ScoringConfig = ScoringConfig(),
    tau: Optional[float] = None,
    calibration: Optional[CalibrationMap] = None,
    type_library: Optional[TypeLibrary] = None,
) -> list[Prediction]:
    """Infer every non-callee identifier of ``function`` in first-occurrence order.

    Raises:
        BitnessMismatchError: If the function and ensemble bitness differ.
        VocabularyMismatchError: If ``ensemble`` indexes signatures.

    """
    check_ensemble(ensemble, Vocabulary.TYPES, function.bitness)
    stream = function.stream
    identifiers = variable_identifiers(stream)
    ranked = score_occurrences(
        stream, [stream.occurrences[name] for name in identifiers], ensemble, config
    )
    return [
        _predict(
            identifier,
            candidates,
            config,
            tau,
            calibration,
            type_library,
            function.bitness,
            function.binary_id,
            function.function_address,
        )
        for identifier, candidates in zip(identifiers, ranked)
    ]


def infer_corpus(
    functions: Sequence[AnnotatedFunction],
    ensemble: DatabaseEnsemble,
    config: ScoringConfig = ScoringConfig(),
    tau: Optional[float] = None,
    calibration: Optional[CalibrationMap] = None,
    type_library: Optional[TypeLibrary] = None,
    threads: int = 1,
) -> list[list[Prediction]]:
    """Run ``infer_function`` over ``functions``, keeping input order.

    With ``threads`` > 1 the functions are spread over worker processes; each
    worker maps the ensemble files itself.
    """
    task = partial(
        infer_function,
        ensemble=ensemble,
        config=config,
        tau=tau,
        calibration=calibration,
        type_library=type_library,
    )
    if threads <= 1 or len(functions) < 2:
        return [task(function) for function in functions]
    chunksize = max(1, len(functions) // (threads * 4))
    logger.debug(
        "Inferring %d functions on %d workers (chunks of %d)",
        len(functions),
        threads,
        chunksize,
    )
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(task, functions, chunksize=chunksize))
