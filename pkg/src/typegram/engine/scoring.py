"""Module turning database matches into ranked, scored candidates."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from typegram.corpus.types import STRUCT_KINDS, Bitness, TypeLibrary
from typegram.ngramdb.labels import LabelTable


@dataclass(frozen=True)
class ScoringConfig:
    """Knobs of the scoring and decision rule.

    Attributes:
        k: Labels kept per query.
        weight_exponent: Growth of the window weight with n; 1 gives n/n_max.
        struct_priority: Promote near-tied struct candidates to rank 1.
        struct_priority_margin: Relative score margin for the promotion.
        min_contexts: Matched contexts the chosen label needs to be emitted.

    """

    k: int = 3
    weight_exponent: float = 1.0
    struct_priority: bool = False
    struct_priority_margin: float = 0.05
    min_contexts: int = 1

    def __post_init__(self) -> None:
        """Validate ranges.

        Raises:
            ValueError: On k < 1, a margin outside [0, 1), a negative exponent
                or a negative min_contexts.

        """
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0 <= self.struct_priority_margin < 1:
            raise ValueError(
                f"struct_priority_margin must be in [0, 1), "
                f"got {self.struct_priority_margin}"
            )
        if self.weight_exponent < 0:
            raise ValueError(
                f"weight_exponent must be >= 0, got {self.weight_exponent}"
            )
        if self.min_contexts < 0:
            raise ValueError(f"min_contexts must be >= 0, got {self.min_contexts}")


@dataclass(frozen=True, slots=True)
class ContextMatch:
    """One query result in which a label was returned."""

    occurrence: int
    n: int
    count: int
    distinct_label_count: int
    in_top_k: bool = True


@dataclass
class MatchEvidence:
    """Matches per label id gathered over every occurrence and window radius."""

    n_max: int
    labels: LabelTable
    matches: dict[int, list[ContextMatch]] = field(default_factory=dict)

    def record(self, label_id: int, match: ContextMatch) -> None:
        """Append a match for ``label_id``.

        Raises:
            ValueError: If the match reports no labels under its key.

        """
        if match.distinct_label_count < 1:
            raise ValueError("a recorded match needs distinct_label_count >= 1")
        self.matches.setdefault(label_id, []).append(match)

    def __bool__(self) -> bool:
        """True when any label matched."""
        return bool(self.matches)


@dataclass(frozen=True)
class Candidate:
    """Label with its raw score and per-context contributions."""

    label_id: int
    label: str
    raw_score: float
    contributions: tuple[float, ...]
    global_frequency: int = 0

    @property
    def matched_context_count(self) -> int:
        """Number of contexts that contributed to ``raw_score``."""
        return len(self.contributions)


def context_contribution(
    n: int, n_max: int, distinct_label_count: int, weight_exponent: float = 1.0
) -> float:
    """Score one matched context: ``0.5 + 0.5 * (n/n_max)**exp / distinct``.

    The result lies in [0.5, 1.0]; it grows with the window radius and shrinks
    with the number of labels stored under the matched key.

    Examples:
        >>> context_contribution(48, 48, 1)
        1.0
        >>> round(context_contribution(8, 48, 1), 4)
        0.5833

    """
    weight = (n / n_max) ** weight_exponent
    return 0.5 + 0.5 * weight / distinct_label_count


def _rank_key(candidate: Candidate) -> tuple[float, int, str]:
    return (-candidate.raw_score, -candidate.global_frequency, candidate.label)


def rank_candidates(candidates: list[Candidate]) -> list[Candidate]:
    """Order by raw score descending, global frequency descending, then name."""
    candidates.sort(key=_rank_key)
    return candidates


def score_candidates(evidence: MatchEvidence, config: ScoringConfig) -> list[Candidate]:
    """Sum contributions per label and rank the labels.

    Only matches where the label was within the top-k of its query count. The
    ranking orders by raw score descending, then global label frequency
    descending, then label name ascending.
    """
    candidates = []
    for label_id, matches in evidence.matches.items():
        contributions = tuple(
            context_contribution(
                m.n, evidence.n_max, m.distinct_label_count, config.weight_exponent
            )
            for m in matches
            if m.in_top_k
        )
        if not contributions:
            continue
        candidates.append(
            Candidate(
                label_id=label_id,
                label=evidence.labels.name(label_id),
                raw_score=sum(contributions),
                contributions=contributions,
                global_frequency=evidence.labels.frequency_of(label_id),
            )
        )
    return rank_candidates(candidates)


@dataclass(frozen=True)
class MatchArrays:
    """Matches of many identifiers at once, one entry per parallel array slot.

    ``group`` names the identifier, ``order`` sorts matches of one label the
    way ``MatchEvidence`` would record them (by occurrence, then radius), and
    ``radius`` and ``distinct`` feed ``context_contribution``.
    """

    group: np.ndarray
    order: np.ndarray
    label_ids: np.ndarray
    radius: np.ndarray
    distinct: np.ndarray


def score_match_arrays(
    matches: MatchArrays,
    groups: int,
    n_max: int,
    labels: LabelTable,
    config: ScoringConfig,
) -> list[list[Candidate]]:
    """Rank candidates per group; same result as ``score_candidates`` per group.

    Contributions are summed left to right in occurrence-then-radius order, so
    raw scores match the per-match path bit for bit.
    """
    ranked: list[list[Candidate]] = [[] for _ in range(groups)]
    if not len(matches.group):
        return ranked
    radii, inverse = np.unique(matches.radius, return_inverse=True)
    weights = np.asarray(
        [(n / n_max) ** config.weight_exponent for n in radii.tolist()]
    )
    values = 0.5 + 0.5 * weights[inverse.reshape(-1)] / matches.distinct
    order = np.lexsort((matches.order, matches.label_ids, matches.group))
    group = matches.group[order]
    label_ids = matches.label_ids[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = (group[1:] != group[:-1]) | (label_ids[1:] != label_ids[:-1])
    bounds = np.flatnonzero(first).tolist() + [len(order)]
    value_list = values[order].tolist()
    group_list = group.tolist()
    label_list = label_ids.tolist()
    for start, end in zip(bounds, bounds[1:]):
        label_id = label_list[start]
        contributions = tuple(value_list[start:end])
        ranked[group_list[start]].append(
            Candidate(
                label_id=label_id,
                label=labels.name(label_id),
                raw_score=sum(contributions),
                contributions=contributions,
                global_frequency=labels.frequency_of(label_id),
            )
        )
    return [rank_candidates(candidates) for candidates in ranked]


def normalize_confidence(s_star: float, matched_contexts: int) -> float:
    """Map a raw score onto [0, 1] against its context-based maximum.

    With ``B = M/2``, returns ``(s* - B) / (M - B)`` when ``M > 0`` and
    ``s* > B``, otherwise 0.

    Examples:
        >>> normalize_confidence(3.0, 4)
        0.5

    """
    baseline = matched_contexts / 2
    if matched_contexts <= 0 or s_star <= baseline:
        return 0.0
    value = (s_star - baseline) / (matched_contexts - baseline)
    return min(max(value, 0.0), 1.0)


def apply_struct_priority(
    ranked: list[Candidate],
    type_library: TypeLibrary,
    margin: float,
    bitness: Optional[Bitness] = None,
) -> list[Candidate]:
    """Promote the best struct-kind candidate when it is within ``margin`` of the top.

    Fires only when the current top candidate is not a struct kind and some
    struct-kind candidate scores at least ``(1 - margin)`` times the top score.
    Only the order changes, never the set of labels.
    """
    if not ranked:
        return ranked

    def is_struct(candidate: Candidate) -> bool:
        return type_library.kind_of(candidate.label, bitness) in STRUCT_KINDS

    top = ranked[0]
    if is_struct(top):
        return ranked
    floor = (1 - margin) * top.raw_score
    for position, candidate in enumerate(ranked[1:], start=1):
        if candidate.raw_score < floor:
            break
        if is_struct(candidate):
            return [candidate] + ranked[:position] + ranked[position + 1 :]
    return ranked
