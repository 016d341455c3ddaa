"""Seeded stand-in models for end-to-end statistical testing.

A :class:`SimProfile` fixes the probability that a sampled solution is
correct, the true/false-positive rates of simulated verifiers, a pairwise
correlation knob, and a seed. Synthetic completions are real text that flows
through the ordinary prompt rendering, answer extraction, and verdict parsing
paths, so the whole stack gets exercised, not just the arithmetic.
"""

from __future__ import annotations

import hashlib
import logging
import math
import re
from dataclasses import dataclass
from typing import Final

from mavlab.answer import equivalence_key, extract_answer
from mavlab.backend import ChatBackend, ChatRequest, ChatResponse
from mavlab.core import Domain, ExtractedAnswer

__all__ = [
    "SimBackend",
    "SimProfile",
    "SimulationError",
    "expected_accuracy_oracle",
    "sim_generate",
    "sim_gold_answer",
    "sim_verify",
    "synthetic_questions",
]

logger = logging.getLogger(__name__)


class SimulationError(Exception):
    """The simulator received a request it cannot interpret."""


@dataclass(frozen=True)
class SimProfile:
    """Statistical profile of a simulated generator-verifier population."""

    p_correct: float = 0.5
    tpr: float = 0.8
    fpr: float = 0.2
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_correct", "tpr", "fpr", "rho"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


_SEP: Final = "\x1f"


def _unit(seed: int, *keys: object) -> float:
    """Deterministic uniform draw in [0, 1) keyed by the seed and key parts."""
    payload = _SEP.join([str(seed), *(str(k) for k in keys)]).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def sim_gold_answer(question_text: str) -> str:
    """The gold answer convention for simulated questions: a hash-derived integer."""
    digest = hashlib.sha256(("gold" + _SEP + question_text).encode("utf-8")).digest()
    return str(100 + int.from_bytes(digest[:8], "big") % 900)


def synthetic_questions(count: int, dataset: str = "sim-math") -> list[dict]:
    """Wire-format math questions whose gold answers follow the simulation convention."""
    if count < 1:
        raise ValueError("count must be positive")
    records = []
    for i in range(count):
        text = (
            f"Compute the calibration constant for specimen {i:04d} "
            f"of series {dataset}."
        )
        records.append({"id": f"sim-{i:04d}", "question": text, "answer": sim_gold_answer(text)})
    return records


_WRONG_SPREAD: Final = 50


def _solution_text(value: str) -> str:
    return (
        "Working through the problem in order.\n"
        "Each given quantity enters the computation exactly once, which pins "
        "down a single value.\n"
        f"The final answer is $\\boxed{{{value}}}$."
    )


def sim_generate(profile: SimProfile, question_text: str, index: object) -> tuple[str, bool]:
    """Synthesize one candidate solution and report whether it is correct.

    The correctness bit is Bernoulli(p_correct), keyed by (seed, question,
    index), so the same coordinates always reproduce the same draw. Wrong
    answers land in a small band above the gold value, so distinct wrong
    draws can still collide, as real wrong answers do.
    """
    correct = _unit(profile.seed, "gen", question_text, index) < profile.p_correct
    gold = sim_gold_answer(question_text)
    if correct:
        value = gold
    else:
        offset = 1 + int(_unit(profile.seed, "wrong", question_text, index) * _WRONG_SPREAD)
        value = str(int(gold) + offset)
    return _solution_text(value), correct


_TRANSCRIPT_PREAMBLE: Final = (
    "Checked the proposed solution against the question requirements."
)


def sim_verify(profile: SimProfile, correct: bool, *, share_key: str, draw_key: str) -> str:
    """Synthesize one verifier transcript ending in the standard answer marker.

    The approval probability is ``tpr`` for correct solutions and ``fpr`` for
    incorrect ones. With probability ``rho`` the draw reuses a latent shared
    by every verdict about the same (question, solution) pair, which is what
    makes rho=1 verifiers move in lockstep and rho=0 verifiers independent.
    """
    q = profile.tpr if correct else profile.fpr
    use_shared = _unit(profile.seed, "mix", draw_key) < profile.rho
    if use_shared:
        u = _unit(profile.seed, "latent", share_key)
    else:
        u = _unit(profile.seed, "idio", draw_key)
    verdict = "True" if u < q else "False"
    return f"{_TRANSCRIPT_PREAMBLE}\nFINAL VERIFICATION ANSWER: {verdict}"


_GEN_HEAD: Final = "step by step:\n\n"
_GEN_TAIL: Final = "\n\nProvide your detailed solution below:"
_VERIFY_RE: Final = re.compile(
    r"QUESTION: (.*?)\n\nPROPOSED SOLUTION: (.*?)\n\nINSTRUCTIONS: ", re.DOTALL
)


def _question_from_generator_prompt(prompt: str) -> str:
    head = prompt.find(_GEN_HEAD)
    tail = prompt.rfind(_GEN_TAIL)
    if head == -1 or tail == -1 or tail <= head:
        raise SimulationError(
            "the simulator only understands the shipped math generation prompt"
        )
    return prompt[head + len(_GEN_HEAD) : tail]


def _sections_from_verifier_prompt(prompt: str) -> tuple[str, str]:
    match = _VERIFY_RE.match(prompt)
    if not match:
        raise SimulationError("the simulator could not find QUESTION/PROPOSED SOLUTION sections")
    return match.group(1), match.group(2)


class SimBackend(ChatBackend):
    """A chat backend that plays both generator and verifiers from a profile.

    Generation requests yield solution texts whose correctness against the
    synthetic gold convention is Bernoulli(p_correct). Verification requests
    re-derive the solution's true correctness from the prompt itself and then
    apply the profile's true/false-positive rates. Randomness is keyed by
    (seed, request digest, repetition), so identical requests re-issued k
    times produce k independent draws and everything replays deterministically.
    """

    def __init__(self, profile: SimProfile) -> None:
        super().__init__()
        self.profile = profile

    def _execute(self, request: ChatRequest, rep: int) -> ChatResponse:
        draw_key = f"{request.digest}#{rep}"
        if request.purpose == "generation":
            question = _question_from_generator_prompt(request.user_prompt)
            text, _ = sim_generate(self.profile, question, draw_key)
            return ChatResponse(text=text, provider_meta={"mode": "sim"})
        if request.purpose == "verification":
            question, solution = _sections_from_verifier_prompt(request.user_prompt)
            correct = self._solution_correct(question, solution)
            transcript = sim_verify(
                self.profile,
                correct,
                share_key=f"{question}{_SEP}{solution}",
                draw_key=draw_key,
            )
            return ChatResponse(text=transcript, provider_meta={"mode": "sim"})
        raise SimulationError("scalar reward requests are not served by the chat simulator")

    def _solution_correct(self, question: str, solution: str) -> bool:
        extracted = extract_answer(Domain.MATH, solution)
        if not extracted.is_found:
            return False
        gold = ExtractedAnswer.found(sim_gold_answer(question))
        return equivalence_key(Domain.MATH, extracted) == equivalence_key(Domain.MATH, gold)


def _binom_pmf(m: int, q: float) -> list[float]:
    return [math.comb(m, k) * q**k * (1.0 - q) ** (m - k) for k in range(m + 1)]


def expected_accuracy_oracle(profile: SimProfile, n: int, m: int) -> float:
    """Exact probability that max-approval selection picks a correct candidate.

    Covers the independent case (rho = 0): candidate correctness is iid
    Bernoulli(p_correct) and each of the m approval draws is independent with
    rate tpr or fpr. The sum runs over the approval-count level k achieved by
    the winning candidate and over its position, using the fact that ties
    break toward the lowest index. With m = 0 the policy degenerates to
    taking the first candidate, so the value is p_correct.
    """
    if profile.rho != 0.0:
        raise ValueError("the exact oracle covers the independent case (rho = 0) only")
    if n < 1:
        raise ValueError("need at least one candidate")
    if m < 0:
        raise ValueError("verifier count must be non-negative")
    p = profile.p_correct
    if m == 0:
        return p
    pmf_correct = _binom_pmf(m, profile.tpr)
    pmf_wrong = _binom_pmf(m, profile.fpr)
    total = 0.0
    cdf_correct = 0.0
    cdf_wrong = 0.0
    for k in range(m + 1):
        below = p * cdf_correct + (1.0 - p) * cdf_wrong
        cdf_correct += pmf_correct[k]
        cdf_wrong += pmf_wrong[k]
        at_or_below = p * cdf_correct + (1.0 - p) * cdf_wrong
        if at_or_below == below:
            positions = n * below ** (n - 1)
        else:
            positions = (at_or_below**n - below**n) / (at_or_below - below)
        total += p * pmf_correct[k] * positions
    return total


class SimRewardProvider:
    """Scalar scores that noisily track the simulation's true correctness."""

    def __init__(self, profile: SimProfile) -> None:
        self._profile = profile

    def score(self, question_text: str, solution_text: str, index: int) -> float:
        extracted = extract_answer(Domain.MATH, solution_text)
        correct = extracted.is_found and extracted.value == sim_gold_answer(question_text)
        noise = _unit(self._profile.seed, "rm", question_text, solution_text, index)
        return (1.0 if correct else 0.0) + 0.5 * noise
