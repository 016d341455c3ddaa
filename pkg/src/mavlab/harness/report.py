"""Deterministic report files for a completed run.

Every byte written here is a pure function of the run store's contents:
fixed headers, fixed float formatting, no timestamps. Re-running report
emission — or replaying the run from a cassette — reproduces identical files.
"""

from __future__ import annotations

import logging
from typing import Any, Mapping, Sequence

from mavlab.harness.config import RunConfig
from mavlab.harness.store import RunStore

__all__ = [
    "render_accuracy_csv",
    "render_accuracy_table",
    "render_budget_csv",
    "render_scaling_m_csv",
    "render_scaling_n_csv",
    "stage_report",
]

logger = logging.getLogger(__name__)

SCALING_M_HEADER = "m,mean,p5,p25,p75,p95,combos"

# One query per generator sample; verification adds m approval queries per
# sample; the scalar-reward baseline prices one reward query per sample; the
# single-sample baseline needs one query per question regardless of n.
_BUDGET_FORMULAS = {
    "mav": lambda q, n, m: q * n * (1 + m),
    "cons": lambda q, n, m: q * n,
    "rm": lambda q, n, m: 2 * q * n,
    "pass1": lambda q, n, m: q,
}


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _test_split_tallies(
    selections: Sequence[Mapping[str, Any]], policies: Sequence[str]
) -> dict[str, tuple[int, int]]:
    """Per policy: (test-split questions seen, correct picks)."""
    tallies = {policy: (0, 0) for policy in policies}
    for row in selections:
        if row["split"] != "test":
            continue
        policy = row["policy"]
        if policy not in tallies:
            continue
        seen, correct = tallies[policy]
        tallies[policy] = (seen + 1, correct + (1 if row["correct"] else 0))
    return tallies


def render_accuracy_csv(
    generator: str,
    tallies: Mapping[str, tuple[int, int]],
    policies: Sequence[str],
) -> str:
    lines = ["generator,policy,questions,correct,accuracy"]
    for policy in policies:
        seen, correct = tallies[policy]
        accuracy = correct / seen if seen else 0.0
        lines.append(f"{generator},{policy},{seen},{correct},{_fmt(accuracy)}")
    return "\n".join(lines) + "\n"


def render_accuracy_table(
    generator: str,
    tallies: Mapping[str, tuple[int, int]],
    policies: Sequence[str],
    unscorable: int,
) -> str:
    """Fixed-width text table: one row per generator, one column per policy."""
    questions = max((seen for seen, _ in tallies.values()), default=0)
    name_width = max(len("generator"), len(generator)) + 2
    header = "generator".ljust(name_width) + "  ".join(p.ljust(8) for p in policies)
    cells = []
    for policy in policies:
        seen, correct = tallies[policy]
        accuracy = correct / seen if seen else 0.0
        cells.append(_fmt(accuracy).ljust(8))
    body = generator.ljust(name_width) + "  ".join(cells)
    lines = [
        f"accuracy by generator and policy (test split, {questions} questions)",
        "",
        header.rstrip(),
        body.rstrip(),
    ]
    if unscorable:
        lines += ["", f"unscorable candidate outputs counted incorrect: {unscorable}"]
    return "\n".join(lines) + "\n"


def render_scaling_m_csv(payload: Mapping[str, Any]) -> str:
    lines = [SCALING_M_HEADER]
    for point in payload["points"]:
        lines.append(
            ",".join(
                [
                    str(point["m"]),
                    _fmt(point["mean"]),
                    _fmt(point["p5"]),
                    _fmt(point["p25"]),
                    _fmt(point["p75"]),
                    _fmt(point["p95"]),
                    str(point["combos"]),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def render_scaling_n_csv(payload: Mapping[str, Any]) -> str:
    policies = list(payload["policies"])
    lines = ["n," + ",".join(policies)]
    for n in payload["n_values"]:
        per = payload["accuracy"][str(n)]
        lines.append(str(n) + "," + ",".join(_fmt(per[policy]) for policy in policies))
    return "\n".join(lines) + "\n"


def render_budget_csv(payload: Mapping[str, Any], question_count: int) -> str:
    """Query budget per policy and n, next to the accuracy bought for it."""
    policies = list(payload["policies"])
    m = len(payload["subset"])
    lines = ["policy,n,queries,accuracy"]
    for policy in policies:
        formula = _BUDGET_FORMULAS[policy]
        for n in payload["n_values"]:
            queries = formula(question_count, n, m)
            accuracy = payload["accuracy"][str(n)][policy]
            lines.append(f"{policy},{n},{queries},{_fmt(accuracy)}")
    return "\n".join(lines) + "\n"


def stage_report(store: RunStore, config: RunConfig) -> list[str]:
    """Emit every report the store has data for; returns the filenames written."""
    written: list[str] = []
    generator = store.read_json("generation_meta")["generator"]
    selections = store.read_jsonl("selections")
    tallies = _test_split_tallies(selections, config.policies)
    unscorable = sum(
        1 for row in store.read_jsonl("scores") if row["status"] == "unscorable"
    )
    store.write_report(
        "accuracy.csv", render_accuracy_csv(generator, tallies, config.policies)
    )
    written.append("accuracy.csv")
    store.write_report(
        "accuracy.txt",
        render_accuracy_table(generator, tallies, config.policies, unscorable),
    )
    written.append("accuracy.txt")

    scaling_m = store.read_json("scaling_m")
    if "skipped" in scaling_m:
        logger.info("no scaling-in-m report: %s", scaling_m["skipped"])
    else:
        store.write_report("scaling_m.csv", render_scaling_m_csv(scaling_m))
        written.append("scaling_m.csv")

    scaling_n = store.read_json("scaling_n")
    store.write_report("scaling_n.csv", render_scaling_n_csv(scaling_n))
    written.append("scaling_n.csv")
    question_count = len(store.read_jsonl("questions"))
    store.write_report("budget.csv", render_budget_csv(scaling_n, question_count))
    written.append("budget.csv")
    logger.info("wrote %d report files", len(written))
    return written
