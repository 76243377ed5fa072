"""Module pairing predictions with their ground truth for evaluation."""

from dataclasses import dataclass
import logging
from typing import Iterable, Optional

from typegram.corpus.splits import split_hashes, stream_hash
from typegram.corpus.types import STRUCT_KINDS, Bitness, Corpus, Split, TypeKind
from typegram.engine.inference import Prediction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalRecord:
    """One prediction next to the label it should have produced.

    ``predicted`` is None for abstentions. ``confidence`` is the calibrated
    probability when the prediction had one, else c_norm.
    """

    binary_id: str
    function_address: int
    identifier: str
    predicted: Optional[str]
    truth: str
    confidence: float
    in_train: bool = False
    bitness: Optional[Bitness] = None
    truth_kind: Optional[TypeKind] = None
    predicted_kind: Optional[TypeKind] = None
    opt_level: Optional[str] = None

    @property
    def abstained(self) -> bool:
        """True when no label was emitted."""
        return self.predicted is None

    @property
    def correct(self) -> bool:
        """Exact match of fully qualified names."""
        return self.predicted is not None and self.predicted == self.truth

    @property
    def truth_is_struct(self) -> bool:
        """Ground truth is a struct or pointer to struct."""
        return self.truth_kind in STRUCT_KINDS

    @property
    def predicted_is_struct(self) -> bool:
        """The emitted label is a struct or pointer to struct."""
        return not self.abstained and self.predicted_kind in STRUCT_KINDS


def build_eval_records(
    predictions: Iterable[Prediction], corpus: Corpus
) -> tuple[list[EvalRecord], int]:
    """Attach ground truth, kinds and in-train membership to predictions.

    A function is in-train when its normalized token stream also occurs in the
    train split.

    Returns:
        tuple[list[EvalRecord], int]: Records in input order, and the number of
        predictions without ground truth that were skipped.

    """
    train = split_hashes(corpus.split(Split.TRAIN))
    library = corpus.type_library
    in_train_cache: dict[tuple[str, int], bool] = {}
    records = []
    skipped = 0
    for prediction in predictions:
        function = corpus.find(prediction.binary_id, prediction.function_address)
        truth = (
            function.variable_annotations.get(prediction.identifier)
            if function is not None
            else None
        )
        if function is None or truth is None:
            skipped += 1
            continue
        if function.identity not in in_train_cache:
            in_train_cache[function.identity] = stream_hash(function.stream) in train
        label = None if prediction.abstained else prediction.label
        records.append(
            EvalRecord(
                binary_id=function.binary_id,
                function_address=function.function_address,
                identifier=prediction.identifier,
                predicted=label,
                truth=truth,
                confidence=prediction.effective_confidence,
                in_train=in_train_cache[function.identity],
                bitness=function.bitness,
                truth_kind=library.kind_of(truth, function.bitness),
                predicted_kind=(
                    library.kind_of(label, function.bitness) if label else None
                ),
                opt_level=function.opt_level,
            )
        )
    if skipped:
        logger.warning("Skipped %d predictions without ground truth", skipped)
    return records, skipped
