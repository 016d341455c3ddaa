"""Selection policies: pick one candidate out of n sampled outputs.

All policies break score ties toward the lowest candidate index, so repeated
runs over the same inputs always choose the same candidate.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Sequence

from mavlab.core import ApprovalMatrix, CandidateOutput, DomainTag
from mavlab.answer import equivalence_key

__all__ = [
    "EmptyMatrix",
    "LengthMismatch",
    "SelectionResult",
    "agg_score",
    "modal_choice_from_keys",
    "pass_at_1",
    "select_bon_mav",
    "select_bon_rm",
    "select_self_consistency",
]


class EmptyMatrix(Exception):
    """Selection was requested with no candidates to choose from."""


class LengthMismatch(Exception):
    """Per-candidate inputs disagree about how many candidates there are."""


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of one policy over one candidate set.

    ``tie_set`` lists every index the policy considered equally good before
    the deterministic tie-break; ``chosen_index`` is always its minimum.
    """

    chosen_index: int
    policy: str
    scores: tuple
    tie: bool
    tie_set: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.chosen_index not in self.tie_set:
            raise ValueError("chosen index must be a member of the tie set")
        if self.tie != (len(self.tie_set) > 1):
            raise ValueError("tie flag must match the tie set size")


def agg_score(matrix: ApprovalMatrix) -> tuple[Fraction, ...]:
    """Exact mean-of-approvals score for every candidate row.

    Each candidate's score is the fraction of verifiers that approved it,
    returned as an exact rational with denominator m.
    """
    if matrix.n == 0 or matrix.m == 0:
        raise EmptyMatrix(f"matrix is {matrix.n}x{matrix.m}; need candidates and verifiers")
    m = matrix.m
    return tuple(Fraction(sum(row), m) for row in matrix.entries)


def _argmax_result(policy: str, scores: Sequence) -> SelectionResult:
    best = max(scores)
    tie_set = tuple(i for i, s in enumerate(scores) if s == best)
    return SelectionResult(
        chosen_index=tie_set[0],
        policy=policy,
        scores=tuple(scores),
        tie=len(tie_set) > 1,
        tie_set=tie_set,
    )


def select_bon_mav(matrix: ApprovalMatrix) -> SelectionResult:
    """Choose the candidate with the highest mean-of-approvals score.

    With zero verifier columns the policy degenerates to taking the first
    candidate, same as pass@1.
    """
    if matrix.n == 0:
        raise EmptyMatrix("no candidate rows to select from")
    if matrix.m == 0:
        return SelectionResult(
            chosen_index=0, policy="mav", scores=(), tie=False, tie_set=(0,)
        )
    return _argmax_result("mav", agg_score(matrix))


def modal_choice_from_keys(keys: Sequence[Hashable | None]) -> SelectionResult:
    """Majority vote over precomputed answer keys.

    ``None`` marks a candidate whose answer could not be extracted; such
    candidates form singleton buckets and never pool votes. The largest bucket
    wins; among equally large buckets the one whose first member appeared
    earliest wins, and the chosen candidate is that earliest member.
    """
    if not keys:
        raise EmptyMatrix("no candidate keys to vote over")
    buckets: dict[Hashable, list[int]] = {}
    for index, key in enumerate(keys):
        bucket_key: Hashable = ("missing", index) if key is None else ("found", key)
        buckets.setdefault(bucket_key, []).append(index)
    groups = sorted(buckets.values(), key=lambda members: (-len(members), members[0]))
    winner = groups[0]
    top_size = len(winner)
    tie_set = tuple(sorted(g[0] for g in groups if len(g) == top_size))
    votes = [0] * len(keys)
    for members in buckets.values():
        for index in members:
            votes[index] = len(members)
    return SelectionResult(
        chosen_index=winner[0],
        policy="cons",
        scores=tuple(votes),
        tie=len(tie_set) > 1,
        tie_set=tie_set,
    )


def select_self_consistency(
    domain: DomainTag, candidates: Sequence[CandidateOutput]
) -> SelectionResult:
    """Majority vote over equivalent extracted answers."""
    if not candidates:
        raise EmptyMatrix("no candidates to vote over")
    keys = [
        equivalence_key(domain, c.extracted) if c.extracted.is_found else None
        for c in candidates
    ]
    return modal_choice_from_keys(keys)


def select_bon_rm(
    candidates: Sequence[CandidateOutput], scores: Sequence[float]
) -> SelectionResult:
    """Choose the candidate with the highest scalar reward score."""
    if not candidates:
        raise EmptyMatrix("no candidates to select from")
    if len(candidates) != len(scores):
        raise LengthMismatch(
            f"{len(candidates)} candidates but {len(scores)} reward scores"
        )
    return _argmax_result("rm", tuple(scores))


def pass_at_1(candidates: Sequence[CandidateOutput]) -> SelectionResult:
    """Take the first sample; the no-verification baseline."""
    if not candidates:
        raise EmptyMatrix("no candidates")
    return SelectionResult(chosen_index=0, policy="pass1", scores=(), tie=False, tie_set=(0,))
