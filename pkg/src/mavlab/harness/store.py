"""The run store: an append-only directory of canonical-JSON records.

Every record file is written with sorted keys, fixed separators, and ASCII
escapes, so re-running a stage over the same inputs reproduces identical
bytes. Stream files (``*.jsonl``) are written once and never overwritten;
summary files (ledger, manifest, reports) may be rewritten deterministically.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

__all__ = ["BudgetLedger", "MissingStage", "RunStore", "StoreError", "canonical_json"]

logger = logging.getLogger(__name__)


class StoreError(Exception):
    """A store record was written twice or could not be read."""


class MissingStage(Exception):
    """A stage was asked to run before the records it depends on exist."""


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass
class BudgetLedger:
    """Query accounting for one run: who was asked, how many times.

    ``total`` covers generator, per-verifier, and scalar-reward queries; the
    ``retries`` field counts how many of the verifier queries were re-samples
    after unparseable verdicts (they are already included in the per-verifier
    counts).
    """

    generator: int = 0
    verifiers: dict[str, int] = field(default_factory=dict)
    scalar: int = 0
    retries: int = 0

    def add_verifier(self, column_id: str, count: int = 1) -> None:
        self.verifiers[column_id] = self.verifiers.get(column_id, 0) + count

    @property
    def verifier_total(self) -> int:
        return sum(self.verifiers.values())

    @property
    def total(self) -> int:
        return self.generator + self.verifier_total + self.scalar

    def to_payload(self) -> dict[str, Any]:
        return {
            "generator": self.generator,
            "verifiers": dict(sorted(self.verifiers.items())),
            "scalar": self.scalar,
            "retries": self.retries,
            "total": self.total,
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "BudgetLedger":
        return cls(
            generator=int(payload.get("generator", 0)),
            verifiers={k: int(v) for k, v in payload.get("verifiers", {}).items()},
            scalar=int(payload.get("scalar", 0)),
            retries=int(payload.get("retries", 0)),
        )


_STREAMS = frozenset(
    {
        "questions",
        "candidates",
        "approvals",
        "scores",
        "rm_scores",
        "selections",
    }
)
_SUMMARIES = frozenset(
    {
        "config",
        "ledger",
        "generation_meta",
        "subset_report",
        "scaling_m",
        "scaling_n",
        "manifest",
    }
)


class RunStore:
    """Filesystem layout for one run directory."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.reports_dir = self.root / "reports"

    def path(self, name: str) -> Path:
        if name in _STREAMS:
            return self.root / f"{name}.jsonl"
        if name in _SUMMARIES:
            return self.root / f"{name}.json"
        raise StoreError(f"unknown store record {name!r}")

    def has(self, name: str) -> bool:
        return self.path(name).exists()

    def write_jsonl(self, name: str, rows: Iterable[Mapping[str, Any]]) -> int:
        if name not in _STREAMS:
            raise StoreError(f"{name!r} is not a stream record")
        target = self.path(name)
        if target.exists():
            raise StoreError(f"store record {name} already exists; stages are append-only")
        count = 0
        with open(target, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(canonical_json(row) + "\n")
                count += 1
        logger.info("wrote %d rows to %s", count, target.name)
        return count

    def read_jsonl(self, name: str) -> list[dict]:
        target = self.path(name)
        if not target.exists():
            raise MissingStage(f"store record {name} does not exist yet")
        rows = []
        with open(target, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise StoreError(f"{target}:{line_no}: corrupt record ({exc})") from None
        return rows

    def write_json(self, name: str, payload: Any) -> None:
        with open(self.path(name), "w", encoding="utf-8") as fh:
            fh.write(canonical_json(payload) + "\n")

    def read_json(self, name: str) -> Any:
        target = self.path(name)
        if not target.exists():
            raise MissingStage(f"store record {name} does not exist yet")
        with open(target, encoding="utf-8") as fh:
            return json.load(fh)

    def write_report(self, filename: str, text: str) -> Path:
        self.reports_dir.mkdir(parents=True, exist_ok=True)
        target = self.reports_dir / filename
        target.write_text(text, encoding="utf-8")
        return target

    def update_manifest(self) -> None:
        """Record a digest of every store file; reports included."""
        digests: dict[str, str] = {}
        files = sorted(self.root.glob("*.json")) + sorted(self.root.glob("*.jsonl"))
        if self.reports_dir.is_dir():
            files += sorted(self.reports_dir.iterdir())
        for file in files:
            if file.name == "manifest.json" or not file.is_file():
                continue
            rel = str(file.relative_to(self.root))
            digests[rel] = hashlib.sha256(file.read_bytes()).hexdigest()
        self.write_json("manifest", digests)
