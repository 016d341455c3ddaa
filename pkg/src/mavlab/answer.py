"""Final-answer extraction, answer equivalence, and correctness scoring."""

from __future__ import annotations

import logging
import os
import re
import subprocess
import tempfile
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Final

from mavlab.core import (
    CandidateOutput,
    Domain,
    DomainTag,
    ExtractedAnswer,
    GoldKind,
    QuestionRecord,
)

__all__ = [
    "CodeJudge",
    "EquivalenceKey",
    "JudgeInvocationError",
    "NotFoundAnswer",
    "ScoreStatus",
    "equivalence_key",
    "extract_answer",
    "gold_key",
    "score_correct",
]

logger = logging.getLogger(__name__)


class NotFoundAnswer(Exception):
    """An equivalence key was requested for an extraction that found nothing."""


class JudgeInvocationError(Exception):
    """The external code judge failed to deliver a correct/incorrect exit code."""


_BOXED_MARKER: Final = "\\boxed"


def _boxed_content(text: str, start: int) -> str | None:
    """Return the brace-balanced content of a ``\\boxed{...}`` starting at ``start``."""
    i = start + len(_BOXED_MARKER)
    while i < len(text) and text[i].isspace():
        i += 1
    if i >= len(text) or text[i] != "{":
        return None
    depth = 0
    for j in range(i, len(text)):
        if text[j] == "{":
            depth += 1
        elif text[j] == "}":
            depth -= 1
            if depth == 0:
                return text[i + 1 : j]
    return None


def _extract_math(raw_text: str) -> ExtractedAnswer:
    pos = raw_text.rfind(_BOXED_MARKER)
    while pos != -1:
        content = _boxed_content(raw_text, pos)
        if content is not None:
            if content.strip():
                return ExtractedAnswer.found(content, trace=f"boxed at offset {pos}")
            return ExtractedAnswer.not_found(trace=f"empty box at offset {pos}")
        pos = raw_text.rfind(_BOXED_MARKER, 0, pos)
    return ExtractedAnswer.not_found(trace="no balanced \\boxed{...} found")


_CHOICE_RE: Final = re.compile(r"the answer is\s*\(?\s*([A-Za-z])\s*\)?", re.IGNORECASE)


def _extract_choice(raw_text: str) -> ExtractedAnswer:
    matches = _CHOICE_RE.findall(raw_text)
    if not matches:
        return ExtractedAnswer.not_found(trace="no 'The answer is (X)' marker")
    return ExtractedAnswer.found(matches[-1].upper(), trace="last answer marker")


_FENCE_RE: Final = re.compile(r"```[ \t]*[\w+-]*[ \t]*\n(.*?)```", re.DOTALL)


def _extract_code(raw_text: str) -> ExtractedAnswer:
    blocks = _FENCE_RE.findall(raw_text)
    if blocks:
        best = max(blocks, key=len)
        if best.strip():
            return ExtractedAnswer.found(best, trace="largest fenced block")
    if raw_text.strip():
        return ExtractedAnswer.found(raw_text, trace="no fenced block, raw text")
    return ExtractedAnswer.not_found(trace="empty completion")


def extract_answer(domain: DomainTag | Domain, raw_text: str) -> ExtractedAnswer:
    """Pull the final answer out of a completion. Total: never raises on any text."""
    kind = domain.kind if isinstance(domain, DomainTag) else domain
    if kind is Domain.MATH:
        return _extract_math(raw_text)
    if kind is Domain.MULTIPLE_CHOICE:
        return _extract_choice(raw_text)
    return _extract_code(raw_text)


_SPACING_MACROS: Final = ("\\,", "\\;", "\\:", "\\!", "\\quad", "\\qquad", "\\ ")
_FRAC_RE: Final = re.compile(r"\\frac\{([^{}]*)\}\{([^{}]*)\}")
_INT_RE: Final = re.compile(r"[+-]?\d+")
_RATIO_RE: Final = re.compile(r"([+-]?\d+)/(\d+)")
_DECIMAL_RE: Final = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+)")


def _normalize_math_form(text: str) -> str:
    s = text.strip()
    s = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac")
    s = s.replace("\\left", "").replace("\\right", "")
    for macro in _SPACING_MACROS:
        s = s.replace(macro, "")
    s = re.sub(r"\s+", "", s)
    while True:
        flattened = _FRAC_RE.sub(r"\1/\2", s)
        if flattened == s:
            break
        s = flattened
    if _DECIMAL_RE.fullmatch(s):
        s = s.rstrip("0").rstrip(".")
        if s in ("", "+", "-"):
            s = s + "0"
    return s


def _parse_rational(form: str) -> Fraction | None:
    if _INT_RE.fullmatch(form):
        return Fraction(int(form))
    match = _RATIO_RE.fullmatch(form)
    if match:
        denominator = int(match.group(2))
        if denominator == 0:
            return None
        return Fraction(int(match.group(1)), denominator)
    if _DECIMAL_RE.fullmatch(form) or re.fullmatch(r"[+-]?\d+\.", form):
        try:
            return Fraction(form)
        except (ValueError, ZeroDivisionError):
            return None
    return None


@dataclass(frozen=True)
class EquivalenceKey:
    """Canonical form of an answer.

    Two keys compare equal when their normalized forms match or both parse to
    the same exact rational. Every numeric spelling collapses onto one
    canonical string, so equality is transitive and safe for dict grouping.
    """

    form: str
    numeric: Fraction | None = None

    @property
    def canon(self) -> str:
        return self.form if self.numeric is None else str(self.numeric)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EquivalenceKey):
            return NotImplemented
        return self.canon == other.canon

    def __hash__(self) -> int:
        return hash(self.canon)


def _math_key(value: str) -> EquivalenceKey:
    form = _normalize_math_form(value)
    return EquivalenceKey(form=form, numeric=_parse_rational(form))


def equivalence_key(domain: DomainTag | Domain, extracted: ExtractedAnswer) -> EquivalenceKey:
    """Canonicalize an extracted answer for voting and gold comparison.

    Math answers lose whitespace and LaTeX decoration, ``\\frac{a}{b}``
    becomes ``a/b``, and anything that parses as an exact rational collapses
    onto its canonical spelling. Choice letters are uppercased. Code is
    compared as stripped text.
    """
    if not extracted.is_found:
        raise NotFoundAnswer("cannot build an equivalence key for a missing answer")
    kind = domain.kind if isinstance(domain, DomainTag) else domain
    if kind is Domain.MATH:
        return _math_key(extracted.value)
    if kind is Domain.MULTIPLE_CHOICE:
        return EquivalenceKey(form=extracted.value.strip().upper())
    return EquivalenceKey(form=extracted.value.strip())


def gold_key(question: QuestionRecord) -> EquivalenceKey:
    """Equivalence key of a question's gold answer (exact-answer and choice golds)."""
    if question.gold.kind is GoldKind.EXACT_ANSWER:
        return _math_key(question.gold.value)
    if question.gold.kind is GoldKind.CHOICE_LETTER:
        return EquivalenceKey(form=question.gold.value)
    raise ValueError("code-test golds have no equivalence key; use the judge")


class ScoreStatus(str, Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    UNSCORABLE = "unscorable"


_DEFAULT_JUDGE_TIMEOUT: Final = 10.0


@dataclass(frozen=True)
class CodeJudge:
    """External command deciding whether candidate code passes a test program.

    The command is invoked as ``<command...> <candidate_file> <test_file>``.
    Exit code 0 means correct, 1 means incorrect, anything else (including a
    timeout) is a judge failure.
    """

    command: tuple[str, ...]
    timeout: float = _DEFAULT_JUDGE_TIMEOUT

    def run(self, solution_source: str, test_source: str) -> ScoreStatus:
        with tempfile.TemporaryDirectory(prefix="mavlab-judge-") as workdir:
            candidate_path = os.path.join(workdir, "candidate.py")
            test_path = os.path.join(workdir, "tests.py")
            with open(candidate_path, "w", encoding="utf-8") as fh:
                fh.write(solution_source)
            with open(test_path, "w", encoding="utf-8") as fh:
                fh.write(test_source)
            argv = [*self.command, candidate_path, test_path]
            try:
                proc = subprocess.run(
                    argv,
                    timeout=self.timeout,
                    stdout=subprocess.DEVNULL,
                    stderr=subprocess.DEVNULL,
                    check=False,
                )
            except subprocess.TimeoutExpired as exc:
                raise JudgeInvocationError(
                    f"judge timed out after {self.timeout}s: {argv[0]}"
                ) from exc
            except OSError as exc:
                raise JudgeInvocationError(f"judge could not run: {exc}") from exc
        if proc.returncode == 0:
            return ScoreStatus.CORRECT
        if proc.returncode == 1:
            return ScoreStatus.INCORRECT
        raise JudgeInvocationError(f"judge exited with unexpected code {proc.returncode}")


def score_correct(
    question: QuestionRecord,
    candidate: CandidateOutput,
    judge: CodeJudge | None = None,
) -> ScoreStatus:
    """Decide whether one candidate answers the question correctly.

    Candidates whose extraction failed are unscorable; accuracy computations
    count them as wrong. Coding questions need a configured judge.
    """
    if not candidate.extracted.is_found:
        return ScoreStatus.UNSCORABLE
    kind = question.domain.kind
    if kind is Domain.CODING:
        if judge is None:
            return ScoreStatus.UNSCORABLE
        return judge.run(candidate.extracted.value, question.gold.value)
    candidate_key = equivalence_key(question.domain, candidate.extracted)
    if candidate_key == gold_key(question):
        return ScoreStatus.CORRECT
    return ScoreStatus.INCORRECT
