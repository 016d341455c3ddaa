"""Shared domain types: questions, candidates, verifier specs, and approval matrices."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Final, Iterable, Mapping, Sequence

__all__ = [
    "Aspect",
    "Approval",
    "ApprovalMatrix",
    "AspectVerifierSpec",
    "CandidateOutput",
    "Domain",
    "DomainTag",
    "ExtractedAnswer",
    "ExtractionStatus",
    "GoldKind",
    "GoldSpec",
    "ParseStatus",
    "PRESET_BASE_MODELS",
    "QuestionRecord",
    "SamplingParams",
    "Split",
    "Strategy",
    "preset_domain_subset",
    "preset_pool",
    "restrict_pool_to_base_models",
    "verifier_id",
]


class Domain(str, Enum):
    """Task family of a question; controls prompting, extraction, and scoring."""

    MATH = "math"
    MULTIPLE_CHOICE = "multiple_choice"
    CODING = "coding"


@dataclass(frozen=True)
class DomainTag:
    """A task family plus a free-form dataset label used in reports."""

    kind: Domain
    dataset: str = ""


class Split(str, Enum):
    VALIDATION = "validation"
    TEST = "test"


class GoldKind(str, Enum):
    EXACT_ANSWER = "exact_answer"
    CHOICE_LETTER = "choice_letter"
    CODE_TESTS = "code_tests"


_LETTER_RE: Final = re.compile(r"^[A-Z]$")


@dataclass(frozen=True)
class GoldSpec:
    """Ground truth for one question.

    ``value`` holds the exact answer text, the choice letter, or the test
    program source depending on ``kind``.
    """

    kind: GoldKind
    value: str

    def __post_init__(self) -> None:
        if self.kind is GoldKind.CHOICE_LETTER and not _LETTER_RE.match(self.value):
            raise ValueError(f"choice gold must be a single uppercase letter, got {self.value!r}")
        if self.kind is GoldKind.EXACT_ANSWER and not self.value.strip():
            raise ValueError("exact gold answer must be non-empty")

    @classmethod
    def exact(cls, text: str) -> "GoldSpec":
        return cls(GoldKind.EXACT_ANSWER, text)

    @classmethod
    def choice(cls, letter: str) -> "GoldSpec":
        return cls(GoldKind.CHOICE_LETTER, letter.strip().upper())

    @classmethod
    def code_tests(cls, tests: str) -> "GoldSpec":
        return cls(GoldKind.CODE_TESTS, tests)


_GOLD_KIND_FOR_DOMAIN: Final[Mapping[Domain, GoldKind]] = {
    Domain.MATH: GoldKind.EXACT_ANSWER,
    Domain.MULTIPLE_CHOICE: GoldKind.CHOICE_LETTER,
    Domain.CODING: GoldKind.CODE_TESTS,
}


@dataclass(frozen=True)
class QuestionRecord:
    """One benchmark item.

    Multiple-choice questions carry ``options`` as (letter, text) pairs with
    distinct uppercase letters running contiguously from ``A``; other domains
    carry no options at all.
    """

    id: str
    domain: DomainTag
    question_text: str
    gold: GoldSpec
    options: tuple[tuple[str, str], ...] | None = None
    split: Split = Split.TEST

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("question id must be non-empty")
        if not self.question_text.strip():
            raise ValueError(f"question {self.id}: empty question text")
        is_mc = self.domain.kind is Domain.MULTIPLE_CHOICE
        if is_mc:
            if not self.options:
                raise ValueError(f"question {self.id}: multiple-choice item without options")
            letters = [letter for letter, _ in self.options]
            expected = [chr(ord("A") + i) for i in range(len(letters))]
            if letters != expected:
                raise ValueError(
                    f"question {self.id}: option letters must run A..{expected[-1]}, got {letters}"
                )
        elif self.options is not None:
            raise ValueError(f"question {self.id}: options are only valid for multiple choice")
        expected_kind = _GOLD_KIND_FOR_DOMAIN[self.domain.kind]
        if self.gold.kind is not expected_kind:
            raise ValueError(
                f"question {self.id}: gold kind {self.gold.kind.value} does not match "
                f"domain {self.domain.kind.value}"
            )
        if is_mc and self.options and self.gold.value not in [l for l, _ in self.options]:
            raise ValueError(f"question {self.id}: gold letter {self.gold.value} not among options")


class ExtractionStatus(str, Enum):
    FOUND = "found"
    NOT_FOUND = "not_found"


@dataclass(frozen=True)
class ExtractedAnswer:
    """Result of pulling a final answer out of a raw model completion."""

    status: ExtractionStatus
    value: str = ""
    trace: str = ""

    def __post_init__(self) -> None:
        if self.status is ExtractionStatus.FOUND and not self.value:
            raise ValueError("found answers must carry a non-empty value")

    @classmethod
    def found(cls, value: str, trace: str = "") -> "ExtractedAnswer":
        return cls(ExtractionStatus.FOUND, value, trace)

    @classmethod
    def not_found(cls, trace: str = "") -> "ExtractedAnswer":
        return cls(ExtractionStatus.NOT_FOUND, "", trace)

    @property
    def is_found(self) -> bool:
        return self.status is ExtractionStatus.FOUND


@dataclass(frozen=True)
class CandidateOutput:
    """One sampled generator output for a question."""

    question_id: str
    index: int
    generator_id: str
    raw_text: str
    extracted: ExtractedAnswer

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("candidate index must be non-negative")


class Aspect(str, Enum):
    MATHEMATICAL_CORRECTNESS = "mathematical_correctness"
    LOGICAL_SOUNDNESS = "logical_soundness"
    FACTUAL_CORRECTNESS = "factual_correctness"
    UNIT_CONVERSIONS = "unit_conversions"
    GENERAL_CORRECTNESS = "general_correctness"


class Strategy(str, Enum):
    STEP_BY_STEP = "step_by_step"
    DIRECT_APPROVAL = "direct_approval"
    SUMMARIZE_SOLUTION = "summarize_solution"
    EXPLAIN_DIFFERENTLY = "explain_differently"
    EDGE_CASES = "edge_cases"
    COMMON_MISTAKES = "common_mistakes"
    DOMAIN_KNOWLEDGE = "domain_knowledge"


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    max_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must lie in [0, 2], got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


_WHITESPACE_RE: Final = re.compile(r"\s+")


def verifier_id(base_model: str, aspect: Aspect, strategy: Strategy) -> str:
    """Stable identifier for a verifier: lowercase segments joined by slashes."""
    if not base_model.strip():
        raise ValueError("base_model must be non-empty")
    model = _WHITESPACE_RE.sub("-", base_model.strip().lower())
    return f"{model}/{aspect.value}/{strategy.value}"


@dataclass(frozen=True)
class AspectVerifierSpec:
    """A prompted binary verifier: base model plus aspect plus prompting strategy."""

    base_model: str
    aspect: Aspect
    strategy: Strategy
    sampling: SamplingParams = field(default_factory=lambda: SamplingParams(temperature=0.3))

    def __post_init__(self) -> None:
        if not self.base_model.strip():
            raise ValueError("base_model must be non-empty")

    @property
    def id(self) -> str:
        return verifier_id(self.base_model, self.aspect, self.strategy)


class ParseStatus(str, Enum):
    PARSED = "parsed"
    RETRIED_THEN_PARSED = "retried_then_parsed"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class Approval:
    """A single binary verdict from one verifier about one candidate.

    Unparseable transcripts always carry a ``False`` verdict so that the
    aggregate score denominator never shrinks.
    """

    verifier_id: str
    question_id: str
    candidate_index: int
    verdict: bool
    parse_status: ParseStatus = ParseStatus.PARSED
    transcript: str = ""

    def __post_init__(self) -> None:
        if self.parse_status is ParseStatus.UNPARSEABLE and self.verdict:
            raise ValueError("unparseable approvals must carry verdict False")


@dataclass(frozen=True)
class ApprovalMatrix:
    """An n-by-m grid of binary verdicts: rows are candidates, columns verifiers."""

    question_id: str
    verifier_ids: tuple[str, ...]
    entries: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if len(set(self.verifier_ids)) != len(self.verifier_ids):
            raise ValueError("verifier ids must be distinct")
        for row in self.entries:
            if len(row) != len(self.verifier_ids):
                raise ValueError(
                    f"row length {len(row)} does not match {len(self.verifier_ids)} verifiers"
                )
            for cell in row:
                if cell not in (0, 1):
                    raise ValueError(f"matrix cells must be 0 or 1, got {cell!r}")

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def m(self) -> int:
        return len(self.verifier_ids)

    @classmethod
    def from_approvals(
        cls,
        question_id: str,
        verifier_ids: Sequence[str],
        n: int,
        approvals: Iterable[Approval],
    ) -> "ApprovalMatrix":
        """Assemble a complete matrix from individual approvals, in any order.

        Raises ``ValueError`` on duplicate (verifier, candidate) cells, on
        approvals that refer to unknown verifiers or out-of-range candidates,
        and on missing cells.
        """
        ids = tuple(verifier_ids)
        column = {vid: j for j, vid in enumerate(ids)}
        if len(column) != len(ids):
            raise ValueError("verifier ids must be distinct")
        cells: dict[tuple[int, int], int] = {}
        for approval in approvals:
            if approval.question_id != question_id:
                raise ValueError(
                    f"approval for question {approval.question_id!r} mixed into {question_id!r}"
                )
            if approval.verifier_id not in column:
                raise ValueError(f"unknown verifier id {approval.verifier_id!r}")
            if not 0 <= approval.candidate_index < n:
                raise ValueError(f"candidate index {approval.candidate_index} out of range")
            cell = (approval.candidate_index, column[approval.verifier_id])
            if cell in cells:
                raise ValueError(
                    f"duplicate approval for candidate {approval.candidate_index} "
                    f"by {approval.verifier_id}"
                )
            cells[cell] = 1 if approval.verdict else 0
        missing = n * len(ids) - len(cells)
        if missing:
            raise ValueError(f"{missing} approval cells missing for question {question_id}")
        rows = tuple(tuple(cells[(i, j)] for j in range(len(ids))) for i in range(n))
        return cls(question_id=question_id, verifier_ids=ids, entries=rows)

    def restrict(self, subset: Sequence[str]) -> "ApprovalMatrix":
        """Project the matrix onto a subset of verifier columns, in subset order."""
        column = {vid: j for j, vid in enumerate(self.verifier_ids)}
        try:
            keep = [column[vid] for vid in subset]
        except KeyError as exc:
            raise ValueError(f"unknown verifier id {exc.args[0]!r}") from None
        rows = tuple(tuple(row[j] for j in keep) for row in self.entries)
        return ApprovalMatrix(self.question_id, tuple(subset), rows)

    def truncate(self, n: int) -> "ApprovalMatrix":
        """Keep only the first ``n`` candidate rows."""
        if not 1 <= n <= self.n:
            raise ValueError(f"cannot truncate {self.n} rows to {n}")
        return ApprovalMatrix(self.question_id, self.verifier_ids, self.entries[:n])


PRESET_BASE_MODELS: Final[tuple[str, str]] = ("gpt-4o-mini", "gemini-1.5-flash")

_PRESET_COMBOS: Final[tuple[tuple[Aspect, Strategy], ...]] = (
    (Aspect.MATHEMATICAL_CORRECTNESS, Strategy.STEP_BY_STEP),
    (Aspect.LOGICAL_SOUNDNESS, Strategy.STEP_BY_STEP),
    (Aspect.FACTUAL_CORRECTNESS, Strategy.STEP_BY_STEP),
    (Aspect.UNIT_CONVERSIONS, Strategy.STEP_BY_STEP),
    (Aspect.GENERAL_CORRECTNESS, Strategy.DIRECT_APPROVAL),
    (Aspect.GENERAL_CORRECTNESS, Strategy.SUMMARIZE_SOLUTION),
    (Aspect.GENERAL_CORRECTNESS, Strategy.EXPLAIN_DIFFERENTLY),
    (Aspect.GENERAL_CORRECTNESS, Strategy.EDGE_CASES),
    (Aspect.GENERAL_CORRECTNESS, Strategy.COMMON_MISTAKES),
    (Aspect.GENERAL_CORRECTNESS, Strategy.DOMAIN_KNOWLEDGE),
)


def preset_pool(
    base_models: Sequence[str] = PRESET_BASE_MODELS,
    verify_sampling: SamplingParams | None = None,
) -> tuple[AspectVerifierSpec, ...]:
    """The shipped verifier pool: ten aspect-strategy combinations per base model.

    Each base model contributes the four non-general aspects checked step by
    step plus general correctness probed with the six remaining strategies.
    """
    sampling = verify_sampling if verify_sampling is not None else SamplingParams(temperature=0.3)
    pool = tuple(
        AspectVerifierSpec(base_model=model, aspect=aspect, strategy=strategy, sampling=sampling)
        for model in base_models
        for aspect, strategy in _PRESET_COMBOS
    )
    return pool


def _ids(model: str, combos: Iterable[tuple[Aspect, Strategy]]) -> tuple[str, ...]:
    return tuple(verifier_id(model, aspect, strategy) for aspect, strategy in combos)


_GPT: Final = "gpt-4o-mini"
_GEMINI: Final = "gemini-1.5-flash"

_DOMAIN_SUBSETS: Final[Mapping[str, tuple[str, ...]]] = {
    "MATH": _ids(
        _GPT,
        [
            (Aspect.UNIT_CONVERSIONS, Strategy.STEP_BY_STEP),
            (Aspect.GENERAL_CORRECTNESS, Strategy.SUMMARIZE_SOLUTION),
            (Aspect.GENERAL_CORRECTNESS, Strategy.EDGE_CASES),
            (Aspect.GENERAL_CORRECTNESS, Strategy.COMMON_MISTAKES),
            (Aspect.GENERAL_CORRECTNESS, Strategy.DOMAIN_KNOWLEDGE),
        ],
    )
    + _ids(_GEMINI, [(Aspect.GENERAL_CORRECTNESS, Strategy.EDGE_CASES)]),
    "MMLU-Pro": _ids(
        _GPT,
        [
            (Aspect.MATHEMATICAL_CORRECTNESS, Strategy.STEP_BY_STEP),
            (Aspect.LOGICAL_SOUNDNESS, Strategy.STEP_BY_STEP),
            (Aspect.GENERAL_CORRECTNESS, Strategy.EXPLAIN_DIFFERENTLY),
            (Aspect.GENERAL_CORRECTNESS, Strategy.EDGE_CASES),
            (Aspect.GENERAL_CORRECTNESS, Strategy.COMMON_MISTAKES),
            (Aspect.GENERAL_CORRECTNESS, Strategy.DOMAIN_KNOWLEDGE),
        ],
    )
    + _ids(
        _GEMINI,
        [
            (Aspect.UNIT_CONVERSIONS, Strategy.STEP_BY_STEP),
            (Aspect.GENERAL_CORRECTNESS, Strategy.COMMON_MISTAKES),
        ],
    ),
    "GPQA": _ids(
        _GPT,
        [
            (Aspect.MATHEMATICAL_CORRECTNESS, Strategy.STEP_BY_STEP),
            (Aspect.LOGICAL_SOUNDNESS, Strategy.STEP_BY_STEP),
            (Aspect.UNIT_CONVERSIONS, Strategy.STEP_BY_STEP),
            (Aspect.GENERAL_CORRECTNESS, Strategy.EXPLAIN_DIFFERENTLY),
        ],
    )
    + _ids(
        _GEMINI,
        [
            (Aspect.UNIT_CONVERSIONS, Strategy.STEP_BY_STEP),
            (Aspect.GENERAL_CORRECTNESS, Strategy.EXPLAIN_DIFFERENTLY),
            (Aspect.GENERAL_CORRECTNESS, Strategy.COMMON_MISTAKES),
        ],
    ),
    "HumanEval": _ids(
        _GPT,
        [
            (Aspect.MATHEMATICAL_CORRECTNESS, Strategy.STEP_BY_STEP),
            (Aspect.LOGICAL_SOUNDNESS, Strategy.STEP_BY_STEP),
            (Aspect.FACTUAL_CORRECTNESS, Strategy.STEP_BY_STEP),
            (Aspect.UNIT_CONVERSIONS, Strategy.STEP_BY_STEP),
            (Aspect.GENERAL_CORRECTNESS, Strategy.DIRECT_APPROVAL),
            (Aspect.GENERAL_CORRECTNESS, Strategy.EXPLAIN_DIFFERENTLY),
            (Aspect.GENERAL_CORRECTNESS, Strategy.EDGE_CASES),
            (Aspect.GENERAL_CORRECTNESS, Strategy.DOMAIN_KNOWLEDGE),
        ],
    )
    + _ids(
        _GEMINI,
        [
            (Aspect.LOGICAL_SOUNDNESS, Strategy.STEP_BY_STEP),
            (Aspect.UNIT_CONVERSIONS, Strategy.STEP_BY_STEP),
            (Aspect.GENERAL_CORRECTNESS, Strategy.DIRECT_APPROVAL),
            (Aspect.GENERAL_CORRECTNESS, Strategy.SUMMARIZE_SOLUTION),
            (Aspect.GENERAL_CORRECTNESS, Strategy.EXPLAIN_DIFFERENTLY),
            (Aspect.GENERAL_CORRECTNESS, Strategy.DOMAIN_KNOWLEDGE),
        ],
    ),
}


def preset_domain_subset(dataset: str) -> tuple[str, ...]:
    """The shipped engineered verifier subset for a known dataset label."""
    try:
        return _DOMAIN_SUBSETS[dataset]
    except KeyError:
        known = ", ".join(sorted(_DOMAIN_SUBSETS))
        raise KeyError(f"no engineered subset for {dataset!r}; known: {known}") from None


def restrict_pool_to_base_models(
    pool: Sequence[AspectVerifierSpec], base_models: Iterable[str]
) -> tuple[AspectVerifierSpec, ...]:
    """Keep only pool members whose base model is in the given set.

    Useful for self-verification setups (verifiers share the generator model)
    and for weak-to-strong setups (verifiers restricted to weaker models).
    """
    wanted = {m.strip().lower() for m in base_models}
    return tuple(spec for spec in pool if spec.base_model.strip().lower() in wanted)
