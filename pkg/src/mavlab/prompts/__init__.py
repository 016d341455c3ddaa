"""Prompt templates, prompt rendering, and verdict parsing for verifier transcripts.

Templates live as text resources next to this module. Placeholders use
``string.Template`` syntax (``${question}``, ``${solution}``, ``${options}``,
``${signature}``) so that literal braces such as ``\\boxed{}`` never collide
with substitution.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from string import Template
from typing import Final

from mavlab.core import (
    Aspect,
    AspectVerifierSpec,
    CandidateOutput,
    Domain,
    QuestionRecord,
    Strategy,
)

__all__ = [
    "MissingOptions",
    "PromptError",
    "PromptTemplate",
    "TemplateRegistry",
    "UnboundPlaceholder",
    "UnknownTemplate",
    "Verdict",
    "format_options",
    "parse_verdict",
    "render_generator_prompt",
    "render_verifier_prompt",
]

logger = logging.getLogger(__name__)


class PromptError(Exception):
    """Base class for prompt rendering problems."""


class UnknownTemplate(PromptError):
    """No template is registered for the requested key."""


class MissingOptions(PromptError):
    """A multiple-choice prompt was requested for a question without options."""


class UnboundPlaceholder(PromptError):
    """The template references a placeholder the caller did not bind."""


_PLACEHOLDER_RE: Final = re.compile(r"\$\{([a-z_]+)\}|\$([a-z_]+)")


@dataclass(frozen=True)
class PromptTemplate:
    """A named template body with ``${name}`` placeholders."""

    template_id: str
    body: str

    def placeholders(self) -> frozenset[str]:
        names = set()
        for braced, bare in _PLACEHOLDER_RE.findall(self.body):
            names.add(braced or bare)
        return frozenset(names)

    def render(self, **bindings: str) -> str:
        try:
            return Template(self.body).substitute(bindings)
        except KeyError as exc:
            raise UnboundPlaceholder(
                f"template {self.template_id!r} needs placeholder {exc.args[0]!r}"
            ) from None
        except ValueError as exc:
            raise UnboundPlaceholder(f"template {self.template_id!r}: {exc}") from None


def _load_resource(name: str) -> str:
    ref = resources.files(__package__).joinpath("templates").joinpath(f"{name}.txt")
    # The trailing newline is a property of the file, not of the prompt.
    return ref.read_text(encoding="utf-8").rstrip("\n")


_GENERATOR_KEYS: Final = {
    Domain.MATH: "generator_math",
    Domain.MULTIPLE_CHOICE: "generator_multiple_choice",
    Domain.CODING: "generator_coding",
}

_SYSTEM_KEYS: Final = {
    Domain.MATH: "system_math",
    Domain.MULTIPLE_CHOICE: "system_multiple_choice",
    Domain.CODING: "system_coding",
}

_VERIFY_FILE_RE: Final = re.compile(r"^verify_([a-z_]+)__([a-z_]+)\.txt$")


class TemplateRegistry:
    """Holds generator, system, and verifier templates; supports user overrides.

    The built-in registry ships one generator prompt and one verifier system
    prompt per domain, plus the ten aspect-strategy verification bodies.
    ``load_directory`` registers files named ``verify_<aspect>__<strategy>.txt``
    (new combinations or overrides), ``generator_<domain>.txt``, and
    ``system_<domain>.txt``.
    """

    def __init__(self) -> None:
        self._generator: dict[Domain, PromptTemplate] = {}
        self._system: dict[Domain, PromptTemplate] = {}
        self._verify: dict[tuple[str, str], PromptTemplate] = {}

    @classmethod
    def builtin(cls) -> "TemplateRegistry":
        registry = cls()
        for domain, key in _GENERATOR_KEYS.items():
            registry._generator[domain] = PromptTemplate(key, _load_resource(key))
        for domain, key in _SYSTEM_KEYS.items():
            registry._system[domain] = PromptTemplate(key, _load_resource(key))
        for aspect in Aspect:
            for strategy in Strategy:
                name = f"verify_{aspect.value}__{strategy.value}"
                try:
                    body = _load_resource(name)
                except FileNotFoundError:
                    continue
                registry._verify[(aspect.value, strategy.value)] = PromptTemplate(name, body)
        return registry

    def register_verifier_template(self, aspect: str, strategy: str, body: str) -> None:
        name = f"verify_{aspect}__{strategy}"
        self._verify[(aspect, strategy)] = PromptTemplate(name, body)

    def load_directory(self, path: str | Path) -> int:
        """Register every recognized template file under ``path``; returns the count."""
        root = Path(path)
        if not root.is_dir():
            raise UnknownTemplate(f"template directory {root} does not exist")
        loaded = 0
        for entry in sorted(root.iterdir()):
            if not entry.is_file() or entry.suffix != ".txt":
                continue
            body = entry.read_text(encoding="utf-8").rstrip("\n")
            match = _VERIFY_FILE_RE.match(entry.name)
            if match:
                self.register_verifier_template(match.group(1), match.group(2), body)
                loaded += 1
                continue
            stem = entry.stem
            for domain, key in _GENERATOR_KEYS.items():
                if stem == key:
                    self._generator[domain] = PromptTemplate(key, body)
                    loaded += 1
            for domain, key in _SYSTEM_KEYS.items():
                if stem == key:
                    self._system[domain] = PromptTemplate(key, body)
                    loaded += 1
        logger.info("loaded %d template files from %s", loaded, root)
        return loaded

    def generator_template(self, domain: Domain) -> PromptTemplate:
        try:
            return self._generator[domain]
        except KeyError:
            raise UnknownTemplate(f"no generator template for domain {domain.value}") from None

    def system_template(self, domain: Domain) -> PromptTemplate:
        try:
            return self._system[domain]
        except KeyError:
            raise UnknownTemplate(f"no system template for domain {domain.value}") from None

    def verifier_template(self, aspect: Aspect | str, strategy: Strategy | str) -> PromptTemplate:
        aspect_key = aspect.value if isinstance(aspect, Aspect) else aspect
        strategy_key = strategy.value if isinstance(strategy, Strategy) else strategy
        try:
            return self._verify[(aspect_key, strategy_key)]
        except KeyError:
            raise UnknownTemplate(
                f"no verification template for aspect {aspect_key!r} "
                f"with strategy {strategy_key!r}"
            ) from None


_BUILTIN: TemplateRegistry | None = None


def _default_registry() -> TemplateRegistry:
    global _BUILTIN
    if _BUILTIN is None:
        _BUILTIN = TemplateRegistry.builtin()
    return _BUILTIN


def format_options(options: tuple[tuple[str, str], ...]) -> str:
    """Render multiple-choice options as one ``(A) text`` line per option."""
    return "\n".join(f"({letter}) {text}" for letter, text in options)


def _question_block(question: QuestionRecord) -> str:
    if question.domain.kind is Domain.MULTIPLE_CHOICE:
        if not question.options:
            raise MissingOptions(f"question {question.id} has no options")
        return f"{question.question_text}\n{format_options(question.options)}"
    return question.question_text


def render_generator_prompt(
    question: QuestionRecord, registry: TemplateRegistry | None = None
) -> str:
    """Render the generation prompt for a question in its domain's house style."""
    reg = registry or _default_registry()
    template = reg.generator_template(question.domain.kind)
    kind = question.domain.kind
    if kind is Domain.MULTIPLE_CHOICE:
        if not question.options:
            raise MissingOptions(f"question {question.id} has no options")
        return template.render(
            question=question.question_text, options=format_options(question.options)
        )
    if kind is Domain.CODING:
        return template.render(signature=question.question_text)
    return template.render(question=question.question_text)


def render_verifier_prompt(
    spec: AspectVerifierSpec,
    question: QuestionRecord,
    candidate: CandidateOutput,
    registry: TemplateRegistry | None = None,
) -> tuple[str, str]:
    """Render the (system, user) message pair one verifier sees for one candidate.

    Multiple-choice options are folded into the QUESTION section so that every
    aspect-strategy body stays domain independent.
    """
    reg = registry or _default_registry()
    system = reg.system_template(question.domain.kind).body
    template = reg.verifier_template(spec.aspect, spec.strategy)
    user = template.render(question=_question_block(question), solution=candidate.raw_text)
    return system, user


class Verdict(str, Enum):
    TRUE = "true"
    FALSE = "false"
    UNPARSEABLE = "unparseable"


_VERDICT_RE: Final = re.compile(
    r"FINAL\s+VERIFICATION\s+ANSWER\s*:?[\s\*_`'\"\-\.\(\[]*?(TRUE|FALSE)\b",
    re.IGNORECASE,
)


def parse_verdict(transcript: str) -> Verdict:
    """Extract the binary verdict from a verifier transcript.

    The last occurrence of the answer marker wins, so step-by-step transcripts
    that restate the marker mid-stream parse to their final decision. Markdown
    emphasis and stray punctuation around the value are tolerated. Anything
    else is ``UNPARSEABLE``; callers map that to a ``False`` verdict.
    """
    matches = _VERDICT_RE.findall(transcript)
    if not matches:
        return Verdict.UNPARSEABLE
    return Verdict.TRUE if matches[-1].upper() == "TRUE" else Verdict.FALSE
