"""Shared fixtures: small hand-built questions and golden-file access."""

from pathlib import Path

import pytest

from mavlab.core import (
    CandidateOutput,
    Domain,
    DomainTag,
    ExtractedAnswer,
    GoldSpec,
    QuestionRecord,
)

GOLDEN_DIR = Path(__file__).parent / "golden"


def read_golden(name: str) -> str:
    """Return the exact bytes of a golden file, decoded as UTF-8."""
    return (GOLDEN_DIR / f"{name}.txt").read_bytes().decode("utf-8")


@pytest.fixture
def math_question() -> QuestionRecord:
    return QuestionRecord(
        id="toy-math-1",
        domain=DomainTag(kind=Domain.MATH, dataset="toy"),
        question_text=r"What is $\frac{1}{2} + \frac{1}{3}$?",
        gold=GoldSpec.exact(r"\frac{5}{6}"),
    )


@pytest.fixture
def math_candidate(math_question) -> CandidateOutput:
    text = (
        "Adding the fractions over a common denominator of 6:\n"
        "$\\frac{3}{6} + \\frac{2}{6} = \\frac{5}{6}$\n"
        "The final answer is $\\boxed{\\frac{5}{6}}$."
    )
    return CandidateOutput(
        question_id=math_question.id,
        index=0,
        generator_id="toy",
        raw_text=text,
        extracted=ExtractedAnswer.found(r"\frac{5}{6}"),
    )


@pytest.fixture
def mc_question() -> QuestionRecord:
    return QuestionRecord(
        id="toy-mc-1",
        domain=DomainTag(kind=Domain.MULTIPLE_CHOICE, dataset="toy"),
        question_text="Which planet has the largest mass in the Solar System?",
        gold=GoldSpec.choice("A"),
        options=(("A", "Jupiter"), ("B", "Mars"), ("C", "Venus"), ("D", "Mercury")),
    )


@pytest.fixture
def mc_candidate(mc_question) -> CandidateOutput:
    text = (
        "Jupiter is by far the most massive planet in the Solar System.\n"
        "The answer is (A)"
    )
    return CandidateOutput(
        question_id=mc_question.id,
        index=0,
        generator_id="toy",
        raw_text=text,
        extracted=ExtractedAnswer.found("A"),
    )


@pytest.fixture
def code_question() -> QuestionRecord:
    return QuestionRecord(
        id="toy-code-1",
        domain=DomainTag(kind=Domain.CODING, dataset="toy"),
        question_text='def add(a, b):\n    """Return the sum of a and b."""',
        gold=GoldSpec.code_tests("assert add(1, 2) == 3"),
    )
