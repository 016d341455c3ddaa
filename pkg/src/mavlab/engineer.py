"""Verifier subset engineering and scaling analysis over cached approvals.

Everything here works on an :class:`EvalCache`: per-question approval
matrices over one fixed verifier pool plus per-candidate correctness bits.
Because the matrices cover the whole pool, any subset can be evaluated by
column selection alone, with no further model queries.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Final, Iterable, Mapping, Sequence

from mavlab.core import ApprovalMatrix, Split
from mavlab.select import modal_choice_from_keys

__all__ = [
    "EmptySplit",
    "EvalCache",
    "InsufficientCandidates",
    "PoolTooLarge",
    "QuestionEval",
    "ScalingCurve",
    "ScalingPoint",
    "SubsetReport",
    "SubsetTooLarge",
    "UnknownVerifierId",
    "engineer_subset",
    "evaluate_subset",
    "scaling_curve",
    "scaling_in_n",
]

logger = logging.getLogger(__name__)


class UnknownVerifierId(Exception):
    """A subset mentions a verifier the cache's pool does not contain."""


class EmptySplit(Exception):
    """No cached questions fall in the requested split."""


class PoolTooLarge(Exception):
    """Exhaustive search was requested over more verifiers than the guard allows."""


class SubsetTooLarge(Exception):
    """Full combination enumeration was requested over too many verifiers."""


class InsufficientCandidates(Exception):
    """A truncation point exceeds the number of cached candidates."""


@dataclass(frozen=True)
class QuestionEval:
    """Cached per-question evidence: approvals over the full pool plus truth bits.

    ``answer_keys`` holds one canonical answer string per candidate (``None``
    for failed extraction) and feeds the self-consistency baseline;
    ``rm_scores`` holds scalar reward scores when a provider ran.
    """

    question_id: str
    generator_id: str
    split: Split
    matrix: ApprovalMatrix
    correct: tuple[bool, ...]
    answer_keys: tuple[str | None, ...] = ()
    rm_scores: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if len(self.correct) != self.matrix.n:
            raise ValueError(
                f"question {self.question_id}: {len(self.correct)} correctness bits "
                f"for {self.matrix.n} candidates"
            )
        if self.answer_keys and len(self.answer_keys) != self.matrix.n:
            raise ValueError(f"question {self.question_id}: answer key count mismatch")
        if self.rm_scores and len(self.rm_scores) != self.matrix.n:
            raise ValueError(f"question {self.question_id}: reward score count mismatch")


@dataclass(frozen=True)
class EvalCache:
    """A pool-wide approval cache for a set of questions and generators."""

    pool: tuple[str, ...]
    entries: tuple[QuestionEval, ...]

    def __post_init__(self) -> None:
        if len(set(self.pool)) != len(self.pool):
            raise ValueError("pool ids must be distinct")
        for entry in self.entries:
            if entry.matrix.verifier_ids != self.pool:
                raise ValueError(
                    f"question {entry.question_id}: matrix columns do not match the pool"
                )

    def generators(self) -> tuple[str, ...]:
        return tuple(sorted({e.generator_id for e in self.entries}))

    def for_split(self, split: Split) -> tuple[QuestionEval, ...]:
        return tuple(e for e in self.entries if e.split is split)


def _column_mask(pool: Sequence[str], subset: Iterable[str]) -> int:
    column = {vid: j for j, vid in enumerate(pool)}
    mask = 0
    for vid in subset:
        if vid not in column:
            raise UnknownVerifierId(f"verifier {vid!r} is not in the cached pool")
        bit = 1 << column[vid]
        if mask & bit:
            raise ValueError(f"verifier {vid!r} listed twice in the subset")
        mask |= bit
    return mask


def _row_masks(matrix: ApprovalMatrix) -> list[int]:
    masks = []
    for row in matrix.entries:
        mask = 0
        for j, cell in enumerate(row):
            if cell:
                mask |= 1 << j
        masks.append(mask)
    return masks


def _pick_by_mask(row_masks: Sequence[int], subset_mask: int) -> int:
    """Index of the max-approval row under the subset, lowest index on ties.

    Mirrors ``select_bon_mav`` exactly: the popcount ordering equals the
    mean-of-approvals ordering because the denominator is shared.
    """
    best_count = -1
    best_index = 0
    for i, row in enumerate(row_masks):
        count = (row & subset_mask).bit_count()
        if count > best_count:
            best_count = count
            best_index = i
    return best_index


@dataclass(frozen=True)
class _PreparedEntry:
    generator_id: str
    row_masks: tuple[int, ...]
    correct: tuple[bool, ...]


def _prepare(entries: Sequence[QuestionEval]) -> list[_PreparedEntry]:
    return [
        _PreparedEntry(
            generator_id=e.generator_id,
            row_masks=tuple(_row_masks(e.matrix)),
            correct=e.correct,
        )
        for e in entries
    ]


def _accuracy_by_generator(
    prepared: Sequence[_PreparedEntry], subset_mask: int
) -> dict[str, float]:
    correct_counts: dict[str, int] = {}
    totals: dict[str, int] = {}
    for entry in prepared:
        chosen = _pick_by_mask(entry.row_masks, subset_mask)
        totals[entry.generator_id] = totals.get(entry.generator_id, 0) + 1
        if entry.correct[chosen]:
            correct_counts[entry.generator_id] = correct_counts.get(entry.generator_id, 0) + 1
    return {g: correct_counts.get(g, 0) / totals[g] for g in totals}


def evaluate_subset(
    cache: EvalCache, subset: Sequence[str], split: Split
) -> dict[str, float]:
    """Accuracy of max-approval selection restricted to ``subset``, per generator."""
    if not subset:
        raise ValueError("subset must be non-empty")
    mask = _column_mask(cache.pool, subset)
    entries = cache.for_split(split)
    if not entries:
        raise EmptySplit(f"no cached questions in the {split.value} split")
    return _accuracy_by_generator(_prepare(entries), mask)


def _mean(values: Iterable[float]) -> float:
    items = list(values)
    return sum(items) / len(items)


@dataclass(frozen=True)
class SubsetReport:
    """Outcome of a subset search on the validation split."""

    subset: tuple[str, ...]
    mean_accuracy: float
    per_generator: Mapping[str, float]
    method: str


_DEFAULT_MAX_POOL: Final = 20


def _subset_ids(pool: Sequence[str], mask: int) -> tuple[str, ...]:
    return tuple(vid for j, vid in enumerate(pool) if mask & (1 << j))


def _search_exhaustive(
    cache: EvalCache, prepared: Sequence[_PreparedEntry], max_pool_size: int
) -> tuple[int, float]:
    pool_size = len(cache.pool)
    if pool_size > max_pool_size:
        raise PoolTooLarge(
            f"pool has {pool_size} verifiers; exhaustive search is guarded at "
            f"{max_pool_size}. Use the greedy method instead."
        )
    best_mask = 0
    best_key: tuple | None = None
    for mask in range(1, 1 << pool_size):
        accuracy = _mean(_accuracy_by_generator(prepared, mask).values())
        # Rank by accuracy, then smaller subsets, then lexicographic ids.
        key = (-accuracy, mask.bit_count(), _subset_ids(cache.pool, mask))
        if best_key is None or key < best_key:
            best_key = key
            best_mask = mask
    assert best_key is not None
    return best_mask, -best_key[0]


def _search_greedy(
    cache: EvalCache, prepared: Sequence[_PreparedEntry]
) -> tuple[int, float]:
    pool = cache.pool
    chosen_mask = 0
    chosen_accuracy = -1.0
    remaining = dict.fromkeys(range(len(pool)))
    while remaining:
        candidates = []
        for j in remaining:
            mask = chosen_mask | (1 << j)
            accuracy = _mean(_accuracy_by_generator(prepared, mask).values())
            candidates.append((-accuracy, pool[j], j))
        candidates.sort()
        neg_accuracy, _, j = candidates[0]
        if -neg_accuracy <= chosen_accuracy:
            break
        chosen_accuracy = -neg_accuracy
        chosen_mask |= 1 << j
        del remaining[j]
    return chosen_mask, chosen_accuracy


def engineer_subset(
    cache: EvalCache,
    method: str = "auto",
    max_pool_size: int = _DEFAULT_MAX_POOL,
) -> SubsetReport:
    """Search for the verifier subset with the best mean validation accuracy.

    ``auto`` runs the exhaustive search for pools within the guard and falls
    back to greedy forward selection beyond it. Exhaustive search scans every
    non-empty subset as a bit mask; ties prefer higher accuracy, then smaller
    subsets, then lexicographically earlier id tuples. Greedy adds one
    verifier at a time while the mean strictly improves, preferring
    lexicographically earlier ids among equal gains.
    """
    entries = cache.for_split(Split.VALIDATION)
    if not entries:
        raise EmptySplit("subset engineering needs validation-split questions")
    prepared = _prepare(entries)
    if method == "auto":
        method = "exhaustive" if len(cache.pool) <= max_pool_size else "greedy"
    if method == "exhaustive":
        mask, accuracy = _search_exhaustive(cache, prepared, max_pool_size)
    elif method == "greedy":
        mask, accuracy = _search_greedy(cache, prepared)
    else:
        raise ValueError(f"unknown search method {method!r}")
    subset = _subset_ids(cache.pool, mask)
    per_generator = _accuracy_by_generator(prepared, mask)
    return SubsetReport(
        subset=subset,
        mean_accuracy=accuracy,
        per_generator=per_generator,
        method=method,
    )


def _nearest_rank(sorted_values: Sequence[float], percentile: float) -> float:
    rank = max(1, math.ceil(percentile / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class ScalingPoint:
    m: int
    mean: float
    p5: float
    p25: float
    p75: float
    p95: float
    combos: int


@dataclass(frozen=True)
class ScalingCurve:
    generator_id: str
    subset: tuple[str, ...]
    points: tuple[ScalingPoint, ...]


_MAX_CURVE_SUBSET: Final = 16


def _entries_for_generator(
    cache: EvalCache, generator: str, split: Split
) -> tuple[QuestionEval, ...]:
    entries = tuple(
        e for e in cache.for_split(split) if e.generator_id == generator
    )
    if not entries:
        raise EmptySplit(
            f"no cached {split.value}-split questions for generator {generator!r}"
        )
    return entries


def scaling_curve(
    cache: EvalCache,
    subset: Sequence[str],
    generator: str,
    split: Split = Split.TEST,
) -> ScalingCurve:
    """Accuracy as the number of verifiers m grows from 0 to the whole subset.

    Every size-m combination of the subset is evaluated; each point carries
    the mean and the nearest-rank 5th/25th/75th/95th percentiles over those
    combination accuracies. The m = 0 point is the pass@1 baseline.
    """
    if len(subset) > _MAX_CURVE_SUBSET:
        raise SubsetTooLarge(
            f"scaling over {len(subset)} verifiers would enumerate too many "
            f"combinations; the guard is {_MAX_CURVE_SUBSET}"
        )
    _column_mask(cache.pool, subset)  # validates ids and uniqueness
    entries = _entries_for_generator(cache, generator, split)
    prepared = _prepare(entries)
    column = {vid: j for j, vid in enumerate(cache.pool)}
    bits = [1 << column[vid] for vid in subset]

    points = []
    pass1 = _mean(float(e.correct[0]) for e in entries)
    points.append(ScalingPoint(m=0, mean=pass1, p5=pass1, p25=pass1, p75=pass1, p95=pass1, combos=1))
    for m in range(1, len(subset) + 1):
        accuracies = []
        for combo in itertools.combinations(bits, m):
            mask = 0
            for bit in combo:
                mask |= bit
            accuracies.append(_mean(_accuracy_by_generator(prepared, mask).values()))
        accuracies.sort()
        points.append(
            ScalingPoint(
                m=m,
                mean=_mean(accuracies),
                p5=_nearest_rank(accuracies, 5),
                p25=_nearest_rank(accuracies, 25),
                p75=_nearest_rank(accuracies, 75),
                p95=_nearest_rank(accuracies, 95),
                combos=len(accuracies),
            )
        )
    return ScalingCurve(generator_id=generator, subset=tuple(subset), points=tuple(points))


def scaling_in_n(
    cache: EvalCache,
    subset: Sequence[str],
    generator: str,
    n_values: Sequence[int],
    policies: Sequence[str] = ("mav", "cons", "rm", "pass1"),
    split: Split = Split.TEST,
) -> dict[int, dict[str, float]]:
    """Accuracy of each policy when only the first n candidates are kept.

    Requires every cached question to hold at least max(n_values) candidates.
    The cons policy needs cached answer keys and rm needs cached reward
    scores; asking for them without the data is an error.
    """
    if not n_values:
        raise ValueError("need at least one n value")
    if min(n_values) < 1:
        raise ValueError("n values must be positive")
    subset_mask = _column_mask(cache.pool, subset)
    entries = _entries_for_generator(cache, generator, split)
    prepared = _prepare(entries)
    max_n = max(n_values)
    for entry in entries:
        if entry.matrix.n < max_n:
            raise InsufficientCandidates(
                f"question {entry.question_id} has {entry.matrix.n} candidates; "
                f"scaling asked for {max_n}"
            )
    results: dict[int, dict[str, float]] = {}
    for n in n_values:
        per_policy: dict[str, list[float]] = {p: [] for p in policies}
        for entry, prep in zip(entries, prepared):
            for policy in policies:
                if policy == "mav":
                    chosen = _pick_by_mask(prep.row_masks[:n], subset_mask)
                elif policy == "pass1":
                    chosen = 0
                elif policy == "cons":
                    if not entry.answer_keys:
                        raise ValueError("cache has no answer keys; cannot evaluate cons")
                    chosen = modal_choice_from_keys(entry.answer_keys[:n]).chosen_index
                elif policy == "rm":
                    if not entry.rm_scores:
                        raise ValueError("cache has no reward scores; cannot evaluate rm")
                    scores = entry.rm_scores[:n]
                    chosen = max(range(n), key=lambda i: (scores[i], -i))
                else:
                    raise ValueError(f"unknown policy {policy!r}")
                per_policy[policy].append(float(entry.correct[chosen]))
        results[n] = {policy: _mean(values) for policy, values in per_policy.items()}
    return results
