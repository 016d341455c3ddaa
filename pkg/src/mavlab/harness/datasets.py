"""Dataset ingestion: the internal wire format, splitting, and source adapters.

The internal format is one JSON object per line::

    {"id": "q1", "question": "...", "answer": "42"}                  # math
    {"id": "q2", "question": "...", "options": ["...", "..."],
     "answer": "B"}                                                  # choice
    {"id": "q3", "question": "<signature + docstring>",
     "tests": "<test program source>"}                               # coding

Options may be plain strings (lettered A, B, ... in order) or
``[letter, text]`` pairs. Adapters convert common source layouts into this
shape.
"""

from __future__ import annotations

import json
import logging
import random
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from mavlab.answer import extract_answer
from mavlab.core import Domain, DomainTag, GoldSpec, QuestionRecord, Split

__all__ = [
    "ParseError",
    "SplitTooLarge",
    "convert_humaneval_records",
    "convert_math_records",
    "convert_mmlu_pro_records",
    "ingest_dataset",
    "read_wire_records",
    "write_wire_records",
]

logger = logging.getLogger(__name__)


class ParseError(Exception):
    """A dataset line could not be parsed; the message names the line."""


class SplitTooLarge(Exception):
    """The requested split sizes exceed the number of available questions."""


def _normalize_options(raw: Any, line_no: int) -> tuple[tuple[str, str], ...]:
    if not isinstance(raw, list) or not raw:
        raise ParseError(f"line {line_no}: options must be a non-empty list")
    pairs = []
    for i, item in enumerate(raw):
        letter = chr(ord("A") + i)
        if isinstance(item, str):
            pairs.append((letter, item))
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            given, text = item
            if str(given).strip().upper() != letter:
                raise ParseError(
                    f"line {line_no}: option letters must run A.. in order, got {given!r}"
                )
            pairs.append((letter, str(text)))
        else:
            raise ParseError(f"line {line_no}: bad option entry {item!r}")
    return tuple(pairs)


def _record_from_wire(payload: Mapping[str, Any], domain: DomainTag, line_no: int) -> QuestionRecord:
    try:
        qid = str(payload["id"])
        question = str(payload["question"])
    except KeyError as exc:
        raise ParseError(f"line {line_no}: missing field {exc.args[0]!r}") from None
    options = None
    if domain.kind is Domain.MULTIPLE_CHOICE:
        if "options" not in payload:
            raise ParseError(f"line {line_no}: multiple-choice record without options")
        options = _normalize_options(payload["options"], line_no)
    try:
        if domain.kind is Domain.MATH:
            gold = GoldSpec.exact(str(payload["answer"]))
        elif domain.kind is Domain.MULTIPLE_CHOICE:
            gold = GoldSpec.choice(str(payload["answer"]))
        else:
            gold = GoldSpec.code_tests(str(payload["tests"]))
    except KeyError as exc:
        raise ParseError(f"line {line_no}: missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ParseError(f"line {line_no}: {exc}") from None
    try:
        return QuestionRecord(
            id=qid, domain=domain, question_text=question, gold=gold, options=options
        )
    except ValueError as exc:
        raise ParseError(f"line {line_no}: {exc}") from None


def ingest_dataset(
    path: str | Path,
    domain: DomainTag,
    split_sizes: tuple[int, int],
    seed: int,
) -> list[QuestionRecord]:
    """Read, shuffle, and split a wire-format dataset.

    A seeded shuffle assigns the first ``split_sizes[0]`` questions to the
    validation split and the next ``split_sizes[1]`` to the test split;
    anything beyond that is dropped. The same (path, seed, sizes) always
    yields the same membership.
    """
    val_size, test_size = split_sizes
    if val_size < 0 or test_size < 0:
        raise ValueError("split sizes must be non-negative")
    records: list[QuestionRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            if not isinstance(payload, dict):
                raise ParseError(f"line {line_no}: record must be a JSON object")
            record = _record_from_wire(payload, domain, line_no)
            if record.id in seen:
                raise ParseError(f"line {line_no}: duplicate question id {record.id!r}")
            seen.add(record.id)
            records.append(record)
    if val_size + test_size > len(records):
        raise SplitTooLarge(
            f"asked for {val_size}+{test_size} questions but the file has {len(records)}"
        )
    rng = random.Random(seed)
    rng.shuffle(records)
    split_records = []
    for i, record in enumerate(records[: val_size + test_size]):
        split = Split.VALIDATION if i < val_size else Split.TEST
        split_records.append(
            QuestionRecord(
                id=record.id,
                domain=record.domain,
                question_text=record.question_text,
                gold=record.gold,
                options=record.options,
                split=split,
            )
        )
    logger.info(
        "ingested %d questions (%d validation, %d test) from %s",
        len(split_records),
        val_size,
        test_size,
        path,
    )
    return split_records


def write_wire_records(records: Iterable[Mapping[str, Any]], path: str | Path) -> int:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(target, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
            count += 1
    return count


def read_wire_records(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from None
    return rows


def convert_math_records(rows: Sequence[Mapping[str, Any]]) -> list[dict]:
    """Adapt problem/solution records whose solutions end in a boxed answer."""
    out = []
    for i, row in enumerate(rows):
        solution = str(row.get("solution", ""))
        extracted = extract_answer(Domain.MATH, solution)
        if not extracted.is_found:
            logger.warning("skipping math record %d: no boxed answer in solution", i)
            continue
        out.append(
            {
                "id": str(row.get("id", f"math-{i:05d}")),
                "question": str(row["problem"]),
                "answer": extracted.value,
            }
        )
    return out


def convert_mmlu_pro_records(rows: Sequence[Mapping[str, Any]]) -> list[dict]:
    """Adapt records with a question, an option list, and a letter answer."""
    out = []
    for i, row in enumerate(rows):
        out.append(
            {
                "id": str(row.get("question_id", row.get("id", f"mc-{i:05d}"))),
                "question": str(row["question"]),
                "options": [str(o) for o in row["options"]],
                "answer": str(row["answer"]).strip().upper(),
            }
        )
    return out


def convert_humaneval_records(rows: Sequence[Mapping[str, Any]]) -> list[dict]:
    """Adapt signature/docstring tasks with a check-based test program."""
    out = []
    for i, row in enumerate(rows):
        tests = str(row["test"])
        entry_point = str(row.get("entry_point", ""))
        if entry_point:
            tests = f"{tests}\n\ncheck({entry_point})\n"
        out.append(
            {
                "id": str(row.get("task_id", f"code-{i:05d}")),
                "question": str(row["prompt"]),
                "tests": tests,
            }
        )
    return out
