"""Pipeline stages over a run store: generate, verify, score, select, analyze.

Each ``stage_*`` function is idempotent against a :class:`RunStore`: if the
records it would produce already exist, it returns without touching the
backend. The pure functions underneath (``generate_candidates``,
``verify_candidates``, ...) carry no storage concerns and are what the
statistical tests drive directly.

Request ordering is fixed (questions in store order, candidates by index,
pool columns in pool order), so repetition counters — and therefore cassettes
and replays — line up across runs regardless of concurrency.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

from mavlab.answer import (
    CodeJudge,
    ScoreStatus,
    equivalence_key,
    extract_answer,
    score_correct,
)
from mavlab.backend import (
    BackendError,
    ChatBackend,
    ChatRequest,
    LiveBackend,
    LiveSettings,
    RecordBackend,
    ReplayBackend,
)
from mavlab.core import (
    Approval,
    ApprovalMatrix,
    Aspect,
    AspectVerifierSpec,
    CandidateOutput,
    Domain,
    DomainTag,
    ExtractedAnswer,
    ParseStatus,
    QuestionRecord,
    SamplingParams,
    Split,
    Strategy,
    preset_domain_subset,
    preset_pool,
)
from mavlab.engineer import (
    EvalCache,
    QuestionEval,
    SubsetTooLarge,
    engineer_subset,
    scaling_curve,
    scaling_in_n,
)
from mavlab.prompts import (
    TemplateRegistry,
    Verdict,
    parse_verdict,
    render_generator_prompt,
    render_verifier_prompt,
)
from mavlab.select import (
    SelectionResult,
    pass_at_1,
    select_bon_mav,
    select_bon_rm,
    select_self_consistency,
)
from mavlab.simlab import SimBackend, SimRewardProvider
from mavlab.harness.config import RunConfig
from mavlab.harness.datasets import ingest_dataset
from mavlab.harness.store import BudgetLedger, MissingStage, RunStore

__all__ = [
    "PoolColumn",
    "RewardProvider",
    "StageError",
    "StubRewardProvider",
    "VerificationOutcome",
    "apply_policies",
    "build_eval_cache",
    "build_pool",
    "generate_candidates",
    "load_candidates",
    "load_matrices",
    "load_questions",
    "make_backend",
    "make_reward_provider",
    "resolve_subset",
    "run_pipeline",
    "score_candidates",
    "reward_candidates",
    "stage_engineer",
    "stage_generate",
    "stage_ingest",
    "stage_scale",
    "stage_score",
    "stage_select",
    "stage_verify",
    "verify_candidates",
]

logger = logging.getLogger(__name__)


class StageError(Exception):
    """A pipeline stage received inputs it cannot act on."""


# A pool column: (column id, verifier spec). Column ids are what approval
# matrices carry; re-sampled copies of one verifier get distinct column ids
# while their chat requests keep the true verifier identity, so each copy is
# a fresh draw of the same underlying verifier.
PoolColumn = tuple[str, AspectVerifierSpec]


def build_pool(config: RunConfig) -> tuple[PoolColumn, ...]:
    """Resolve the configured verifier pool into ordered (column id, spec) pairs.

    Accepted forms: ``"preset"`` (the full shipped pool), ``"preset:<LABEL>"``
    (the shipped engineered subset for a dataset label), or a list of
    ``{base_model, aspect, strategy, copies?, temperature?}`` mappings.
    """
    spec = config.pool
    sampling = SamplingParams(
        temperature=config.verify_temperature, max_tokens=config.max_tokens
    )
    if spec is None or spec == "preset":
        return tuple((s.id, s) for s in preset_pool(verify_sampling=sampling))
    if isinstance(spec, str) and spec.startswith("preset:"):
        label = spec.split(":", 1)[1]
        try:
            ids = preset_domain_subset(label)
        except KeyError as exc:
            raise StageError(str(exc.args[0])) from None
        by_id = {s.id: s for s in preset_pool(verify_sampling=sampling)}
        return tuple((vid, by_id[vid]) for vid in ids)
    if isinstance(spec, Sequence) and not isinstance(spec, str):
        columns: list[PoolColumn] = []
        seen: set[str] = set()
        for i, entry in enumerate(spec):
            if not isinstance(entry, Mapping):
                raise StageError(f"pool entry {i} must be a mapping, got {entry!r}")
            try:
                vspec = AspectVerifierSpec(
                    base_model=str(entry["base_model"]),
                    aspect=Aspect(entry["aspect"]),
                    strategy=Strategy(entry["strategy"]),
                    sampling=SamplingParams(
                        temperature=float(
                            entry.get("temperature", config.verify_temperature)
                        ),
                        max_tokens=config.max_tokens,
                    ),
                )
            except (KeyError, ValueError) as exc:
                raise StageError(f"pool entry {i}: {exc}") from None
            copies = int(entry.get("copies", 1))
            if copies < 1:
                raise StageError(f"pool entry {i}: copies must be at least 1")
            for c in range(copies):
                column_id = vspec.id if copies == 1 else f"{vspec.id}#{c + 1}"
                if column_id in seen:
                    raise StageError(f"pool column {column_id!r} appears twice")
                seen.add(column_id)
                columns.append((column_id, vspec))
        if not columns:
            raise StageError("pool must not be empty")
        return tuple(columns)
    raise StageError(f"unrecognized pool specification {spec!r}")


class RewardProvider(Protocol):
    """Scalar scorer used by the best-of-n-with-reward baseline."""

    def score(self, question_text: str, solution_text: str, index: int) -> float: ...


class StubRewardProvider:
    """Scores every candidate zero; selection then degenerates to pass@1."""

    def score(self, question_text: str, solution_text: str, index: int) -> float:
        return 0.0


def make_reward_provider(config: RunConfig) -> RewardProvider:
    if config.rm_provider == "stub":
        return StubRewardProvider()
    if config.rm_provider == "sim":
        return SimRewardProvider(config.sim)
    raise StageError(f"unknown reward provider {config.rm_provider!r}")


def _live_settings(config: RunConfig) -> LiveSettings:
    if not config.endpoint:
        raise StageError("a live backend needs an endpoint")
    return LiveSettings(
        endpoint=config.endpoint,
        api_key_env=config.api_key_env,
        max_attempts=config.max_attempts,
        rate_limit_per_s=config.rate_limit_per_s,
        timeout_s=config.timeout_s,
    )


def make_backend(config: RunConfig) -> ChatBackend:
    """Construct the chat backend the configuration asks for."""
    if config.backend == "simulate":
        return SimBackend(config.sim)
    if config.backend == "live":
        return LiveBackend(_live_settings(config))
    if config.backend == "replay":
        assert config.cassette is not None  # enforced by RunConfig
        return ReplayBackend(config.cassette)
    if config.backend == "record":
        if config.record_source == "simulate":
            inner: ChatBackend = SimBackend(config.sim)
        elif config.record_source == "live":
            inner = LiveBackend(_live_settings(config))
        else:
            raise StageError(f"unknown record source {config.record_source!r}")
        assert config.cassette is not None
        return RecordBackend(inner, config.cassette)
    raise StageError(f"unknown backend {config.backend!r}")


def _registry_for(config: RunConfig) -> TemplateRegistry | None:
    if config.template_dir is None:
        return None
    registry = TemplateRegistry.builtin()
    registry.load_directory(config.template_dir)
    return registry


# ---------------------------------------------------------------------------
# Pure stage functions.
# ---------------------------------------------------------------------------


def generate_candidates(
    questions: Sequence[QuestionRecord],
    generator_id: str,
    n: int,
    backend: ChatBackend,
    *,
    registry: TemplateRegistry | None = None,
    sampling: SamplingParams | None = None,
    max_in_flight: int = 4,
) -> list[CandidateOutput]:
    """Sample n candidate solutions per question and extract their answers.

    Generation failures are hard errors: a missing candidate would silently
    shrink every later computation, so the stage refuses to continue.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    params = sampling if sampling is not None else SamplingParams()
    requests = []
    for question in questions:
        prompt = render_generator_prompt(question, registry)
        request = ChatRequest(
            model=generator_id,
            user_prompt=prompt,
            sampling=params,
            purpose="generation",
        )
        requests.extend([request] * n)
    results = backend.complete_batch(requests, max_in_flight=max_in_flight)
    candidates = []
    for qi, question in enumerate(questions):
        for i in range(n):
            result = results[qi * n + i]
            if isinstance(result, BackendError):
                raise StageError(
                    f"generation failed for question {question.id} sample {i}: {result}"
                ) from result
            candidates.append(
                CandidateOutput(
                    question_id=question.id,
                    index=i,
                    generator_id=generator_id,
                    raw_text=result.text,
                    extracted=extract_answer(question.domain, result.text),
                )
            )
    return candidates


def _failed_approval(question_id: str, column_id: str, candidate_index: int) -> Approval:
    return Approval(
        verifier_id=column_id,
        question_id=question_id,
        candidate_index=candidate_index,
        verdict=False,
        parse_status=ParseStatus.UNPARSEABLE,
    )


@dataclass(frozen=True)
class VerificationOutcome:
    """Everything one verification pass produced.

    ``approvals`` keeps per-cell parse detail in deterministic plan order;
    ``matrices`` is the same information assembled per question;
    ``query_counts`` includes retries, which ``retries`` also counts on its own.
    """

    matrices: Mapping[str, ApprovalMatrix]
    approvals: Mapping[str, tuple[Approval, ...]]
    query_counts: Mapping[str, int]
    retries: int


def verify_candidates(
    questions: Sequence[QuestionRecord],
    candidates_by_question: Mapping[str, Sequence[CandidateOutput]],
    pool: Sequence[PoolColumn],
    backend: ChatBackend,
    *,
    registry: TemplateRegistry | None = None,
    max_in_flight: int = 4,
) -> VerificationOutcome:
    """Collect one binary verdict per (candidate, pool column) for every question.

    A transcript that fails verdict parsing — or a request that errors — is
    retried exactly once; a second failure becomes a ``False`` verdict marked
    unparseable.
    """
    if not pool:
        raise StageError("verifier pool must not be empty")
    plan: list[tuple[QuestionRecord, CandidateOutput, str, ChatRequest]] = []
    for question in questions:
        for candidate in candidates_by_question[question.id]:
            for column_id, spec in pool:
                system, user = render_verifier_prompt(spec, question, candidate, registry)
                request = ChatRequest(
                    model=spec.base_model,
                    system_prompt=system,
                    user_prompt=user,
                    sampling=spec.sampling,
                    purpose="verification",
                    verifier_id=spec.id,
                )
                plan.append((question, candidate, column_id, request))

    first = backend.complete_batch([item[3] for item in plan], max_in_flight=max_in_flight)
    counts: dict[str, int] = {column_id: 0 for column_id, _ in pool}
    outcomes: list[Approval | None] = []
    retry_slots: list[int] = []
    for (question, candidate, column_id, _), result in zip(plan, first):
        counts[column_id] += 1
        if isinstance(result, BackendError):
            retry_slots.append(len(outcomes))
            outcomes.append(None)
            continue
        verdict = parse_verdict(result.text)
        if verdict is Verdict.UNPARSEABLE:
            retry_slots.append(len(outcomes))
            outcomes.append(None)
            continue
        outcomes.append(
            Approval(
                verifier_id=column_id,
                question_id=question.id,
                candidate_index=candidate.index,
                verdict=verdict is Verdict.TRUE,
                parse_status=ParseStatus.PARSED,
            )
        )

    retries = 0
    if retry_slots:
        logger.info("retrying %d verification queries", len(retry_slots))
        second = backend.complete_batch(
            [plan[slot][3] for slot in retry_slots], max_in_flight=max_in_flight
        )
        for slot, result in zip(retry_slots, second):
            question, candidate, column_id, _ = plan[slot]
            counts[column_id] += 1
            retries += 1
            if isinstance(result, BackendError):
                outcomes[slot] = _failed_approval(question.id, column_id, candidate.index)
                continue
            verdict = parse_verdict(result.text)
            if verdict is Verdict.UNPARSEABLE:
                outcomes[slot] = _failed_approval(question.id, column_id, candidate.index)
            else:
                outcomes[slot] = Approval(
                    verifier_id=column_id,
                    question_id=question.id,
                    candidate_index=candidate.index,
                    verdict=verdict is Verdict.TRUE,
                    parse_status=ParseStatus.RETRIED_THEN_PARSED,
                )

    per_question: dict[str, list[Approval]] = {q.id: [] for q in questions}
    for (question, _, _, _), approval in zip(plan, outcomes):
        assert approval is not None
        per_question[question.id].append(approval)
    column_ids = [column_id for column_id, _ in pool]
    matrices = {
        question.id: ApprovalMatrix.from_approvals(
            question.id,
            column_ids,
            len(candidates_by_question[question.id]),
            per_question[question.id],
        )
        for question in questions
    }
    return VerificationOutcome(
        matrices=matrices,
        approvals={qid: tuple(items) for qid, items in per_question.items()},
        query_counts=counts,
        retries=retries,
    )


def score_candidates(
    questions: Sequence[QuestionRecord],
    candidates_by_question: Mapping[str, Sequence[CandidateOutput]],
    judge: CodeJudge | None = None,
) -> dict[tuple[str, int], ScoreStatus]:
    """Ground-truth score for every candidate, keyed by (question id, index)."""
    statuses: dict[tuple[str, int], ScoreStatus] = {}
    for question in questions:
        for candidate in candidates_by_question[question.id]:
            statuses[(question.id, candidate.index)] = score_correct(
                question, candidate, judge
            )
    return statuses


def reward_candidates(
    questions: Sequence[QuestionRecord],
    candidates_by_question: Mapping[str, Sequence[CandidateOutput]],
    provider: RewardProvider,
) -> dict[str, tuple[float, ...]]:
    """Scalar reward scores per question, one per candidate in index order."""
    return {
        question.id: tuple(
            provider.score(question.question_text, candidate.raw_text, candidate.index)
            for candidate in candidates_by_question[question.id]
        )
        for question in questions
    }


def apply_policies(
    question: QuestionRecord,
    candidates: Sequence[CandidateOutput],
    matrix: ApprovalMatrix,
    policies: Sequence[str],
    *,
    rm_scores: Sequence[float] | None = None,
) -> dict[str, SelectionResult]:
    """Run each selection policy over one question's candidates."""
    results: dict[str, SelectionResult] = {}
    for policy in policies:
        if policy == "mav":
            results[policy] = select_bon_mav(matrix)
        elif policy == "cons":
            results[policy] = select_self_consistency(question.domain, candidates)
        elif policy == "rm":
            if rm_scores is None:
                raise StageError("the rm policy needs reward scores")
            results[policy] = select_bon_rm(candidates, rm_scores)
        elif policy == "pass1":
            results[policy] = pass_at_1(candidates)
        else:
            raise StageError(f"unknown policy {policy!r}")
    return results


# ---------------------------------------------------------------------------
# Store (de)serialization helpers.
# ---------------------------------------------------------------------------


def _question_row(record: QuestionRecord) -> dict[str, Any]:
    return {
        "id": record.id,
        "domain": record.domain.kind.value,
        "dataset": record.domain.dataset,
        "split": record.split.value,
        "question": record.question_text,
        "gold_kind": record.gold.kind.value,
        "gold_value": record.gold.value,
        "options": [list(pair) for pair in record.options] if record.options else None,
    }


def _question_from_row(row: Mapping[str, Any]) -> QuestionRecord:
    from mavlab.core import GoldKind, GoldSpec  # local to keep module top lean

    options = row.get("options")
    return QuestionRecord(
        id=row["id"],
        domain=DomainTag(kind=Domain(row["domain"]), dataset=row.get("dataset", "")),
        question_text=row["question"],
        gold=GoldSpec(GoldKind(row["gold_kind"]), row["gold_value"]),
        options=tuple((l, t) for l, t in options) if options else None,
        split=Split(row["split"]),
    )


def load_questions(store: RunStore) -> list[QuestionRecord]:
    return [_question_from_row(row) for row in store.read_jsonl("questions")]


def load_candidates(store: RunStore) -> dict[str, list[CandidateOutput]]:
    """Candidates per question id, ordered by candidate index."""
    grouped: dict[str, list[CandidateOutput]] = {}
    for row in store.read_jsonl("candidates"):
        extracted = (
            ExtractedAnswer.found(row["value"])
            if row["found"]
            else ExtractedAnswer.not_found()
        )
        candidate = CandidateOutput(
            question_id=row["question_id"],
            index=row["index"],
            generator_id=row["generator_id"],
            raw_text=row["text"],
            extracted=extracted,
        )
        grouped.setdefault(candidate.question_id, []).append(candidate)
    for candidates in grouped.values():
        candidates.sort(key=lambda c: c.index)
    return grouped


def load_matrices(
    store: RunStore,
    column_ids: Sequence[str],
    candidates_by_question: Mapping[str, Sequence[CandidateOutput]],
) -> dict[str, ApprovalMatrix]:
    grouped: dict[str, list[Approval]] = {}
    for row in store.read_jsonl("approvals"):
        grouped.setdefault(row["question_id"], []).append(
            Approval(
                verifier_id=row["column_id"],
                question_id=row["question_id"],
                candidate_index=row["candidate_index"],
                verdict=row["verdict"],
                parse_status=ParseStatus(row["parse_status"]),
            )
        )
    return {
        qid: ApprovalMatrix.from_approvals(
            qid, column_ids, len(candidates_by_question[qid]), approvals
        )
        for qid, approvals in grouped.items()
    }


def _load_ledger(store: RunStore) -> BudgetLedger:
    try:
        return BudgetLedger.from_payload(store.read_json("ledger"))
    except MissingStage:
        return BudgetLedger()


# ---------------------------------------------------------------------------
# Store-backed stages.
# ---------------------------------------------------------------------------


def stage_ingest(store: RunStore, config: RunConfig) -> int:
    """Snapshot the configuration and materialize the question splits."""
    store.write_json("config", config.snapshot())
    if store.has("questions"):
        return len(store.read_jsonl("questions"))
    domain = DomainTag(
        kind=config.domain_kind,
        dataset=config.dataset_name or Path(config.dataset).stem,
    )
    records = ingest_dataset(
        config.dataset, domain, (config.val_size, config.test_size), config.seed
    )
    return store.write_jsonl("questions", (_question_row(r) for r in records))


def stage_generate(store: RunStore, config: RunConfig, backend: ChatBackend) -> int:
    """Sample n candidates per stored question and persist them."""
    if store.has("candidates"):
        return len(store.read_jsonl("candidates"))
    questions = load_questions(store)
    candidates = generate_candidates(
        questions,
        config.generator,
        config.n,
        backend,
        registry=_registry_for(config),
        sampling=SamplingParams(
            temperature=config.gen_temperature, max_tokens=config.max_tokens
        ),
        max_in_flight=config.max_in_flight,
    )
    rows = [
        {
            "question_id": c.question_id,
            "index": c.index,
            "generator_id": c.generator_id,
            "text": c.raw_text,
            "found": c.extracted.is_found,
            "value": c.extracted.value,
        }
        for c in candidates
    ]
    count = store.write_jsonl("candidates", rows)
    store.write_json("generation_meta", {"generator": config.generator, "n": config.n})
    ledger = _load_ledger(store)
    ledger.generator += len(questions) * config.n
    store.write_json("ledger", ledger.to_payload())
    return count


def stage_verify(store: RunStore, config: RunConfig, backend: ChatBackend) -> int:
    """Collect the full approval grid over the configured pool and persist it."""
    if store.has("approvals"):
        return len(store.read_jsonl("approvals"))
    questions = load_questions(store)
    candidates_by_question = load_candidates(store)
    pool = build_pool(config)
    outcome = verify_candidates(
        questions,
        candidates_by_question,
        pool,
        backend,
        registry=_registry_for(config),
        max_in_flight=config.max_in_flight,
    )
    rows = [
        {
            "question_id": approval.question_id,
            "candidate_index": approval.candidate_index,
            "column_id": approval.verifier_id,
            "verdict": approval.verdict,
            "parse_status": approval.parse_status.value,
        }
        for question in questions
        for approval in outcome.approvals[question.id]
    ]
    count = store.write_jsonl("approvals", rows)
    ledger = _load_ledger(store)
    for column_id, issued in outcome.query_counts.items():
        ledger.add_verifier(column_id, issued)
    ledger.retries += outcome.retries
    store.write_json("ledger", ledger.to_payload())
    return count


def stage_score(store: RunStore, config: RunConfig) -> int:
    """Score every stored candidate against its question's ground truth."""
    if store.has("scores"):
        return len(store.read_jsonl("scores"))
    questions = load_questions(store)
    candidates_by_question = load_candidates(store)
    judge = CodeJudge(command=config.judge) if config.judge else None
    statuses = score_candidates(questions, candidates_by_question, judge)
    rows = [
        {"question_id": qid, "index": index, "status": status.value}
        for (qid, index), status in statuses.items()
    ]
    return store.write_jsonl("scores", rows)


def _statuses_from_store(store: RunStore) -> dict[tuple[str, int], str]:
    return {
        (row["question_id"], row["index"]): row["status"]
        for row in store.read_jsonl("scores")
    }


def resolve_subset(
    config: RunConfig, store: RunStore, pool_ids: Sequence[str]
) -> tuple[str, ...]:
    """Turn the configured subset choice into concrete pool column ids.

    ``"all"`` keeps the whole pool; ``"engineered"`` reads the subset search
    result from the store; ``"preset:<LABEL>"`` uses the shipped engineered
    subset; a list names columns explicitly.
    """
    spec = config.subset
    known = set(pool_ids)
    if spec is None or spec == "all":
        return tuple(pool_ids)
    if spec == "engineered":
        payload = store.read_json("subset_report")
        subset = tuple(payload["subset"])
    elif isinstance(spec, str) and spec.startswith("preset:"):
        try:
            subset = preset_domain_subset(spec.split(":", 1)[1])
        except KeyError as exc:
            raise StageError(str(exc.args[0])) from None
    elif isinstance(spec, Sequence) and not isinstance(spec, str):
        subset = tuple(str(vid) for vid in spec)
    else:
        raise StageError(f"unrecognized subset specification {spec!r}")
    missing = [vid for vid in subset if vid not in known]
    if missing:
        raise StageError(f"subset names columns outside the pool: {', '.join(missing)}")
    return subset


def stage_select(store: RunStore, config: RunConfig) -> int:
    """Run every configured policy over every stored question."""
    if store.has("selections"):
        return len(store.read_jsonl("selections"))
    questions = load_questions(store)
    candidates_by_question = load_candidates(store)
    pool = build_pool(config)
    pool_ids = [column_id for column_id, _ in pool]
    matrices = load_matrices(store, pool_ids, candidates_by_question)
    statuses = _statuses_from_store(store)
    subset = resolve_subset(config, store, pool_ids)

    rewards: dict[str, tuple[float, ...]] = {}
    if "rm" in config.policies:
        if store.has("rm_scores"):
            grouped: dict[str, list[tuple[int, float]]] = {}
            for row in store.read_jsonl("rm_scores"):
                grouped.setdefault(row["question_id"], []).append(
                    (row["index"], row["score"])
                )
            rewards = {
                qid: tuple(score for _, score in sorted(pairs))
                for qid, pairs in grouped.items()
            }
        else:
            provider = make_reward_provider(config)
            rewards = reward_candidates(questions, candidates_by_question, provider)
            rows = [
                {"question_id": qid, "index": i, "score": score}
                for qid, scores in rewards.items()
                for i, score in enumerate(scores)
            ]
            store.write_jsonl("rm_scores", rows)
            ledger = _load_ledger(store)
            ledger.scalar += len(rows)
            store.write_json("ledger", ledger.to_payload())

    selection_rows = []
    for question in questions:
        candidates = candidates_by_question[question.id]
        matrix = matrices[question.id].restrict(subset)
        results = apply_policies(
            question,
            candidates,
            matrix,
            config.policies,
            rm_scores=rewards.get(question.id),
        )
        for policy in config.policies:
            result = results[policy]
            status = statuses[(question.id, result.chosen_index)]
            selection_rows.append(
                {
                    "question_id": question.id,
                    "split": question.split.value,
                    "policy": policy,
                    "chosen_index": result.chosen_index,
                    "tie": result.tie,
                    "tie_set": list(result.tie_set),
                    "correct": status == ScoreStatus.CORRECT.value,
                }
            )
    return store.write_jsonl("selections", selection_rows)


def build_eval_cache(store: RunStore, config: RunConfig) -> EvalCache:
    """Assemble the pool-wide evaluation cache the analysis functions consume."""
    questions = load_questions(store)
    candidates_by_question = load_candidates(store)
    pool_ids = [column_id for column_id, _ in build_pool(config)]
    matrices = load_matrices(store, pool_ids, candidates_by_question)
    statuses = _statuses_from_store(store)
    meta = store.read_json("generation_meta")
    rm_by_question: dict[str, tuple[float, ...]] = {}
    if store.has("rm_scores"):
        grouped: dict[str, list[tuple[int, float]]] = {}
        for row in store.read_jsonl("rm_scores"):
            grouped.setdefault(row["question_id"], []).append((row["index"], row["score"]))
        rm_by_question = {
            qid: tuple(score for _, score in sorted(pairs))
            for qid, pairs in grouped.items()
        }
    entries = []
    for question in questions:
        candidates = candidates_by_question[question.id]
        keys = tuple(
            equivalence_key(question.domain, c.extracted).canon
            if c.extracted.is_found
            else None
            for c in candidates
        )
        correct = tuple(
            statuses[(question.id, c.index)] == ScoreStatus.CORRECT.value
            for c in candidates
        )
        entries.append(
            QuestionEval(
                question_id=question.id,
                generator_id=meta["generator"],
                split=question.split,
                matrix=matrices[question.id],
                correct=correct,
                answer_keys=keys,
                rm_scores=rm_by_question.get(question.id, ()),
            )
        )
    return EvalCache(pool=tuple(pool_ids), entries=tuple(entries))


def stage_engineer(store: RunStore, config: RunConfig) -> dict[str, Any]:
    """Search the validation split for the best verifier subset."""
    if store.has("subset_report"):
        return store.read_json("subset_report")
    cache = build_eval_cache(store, config)
    report = engineer_subset(cache, method=config.engineer_method)
    payload = {
        "subset": list(report.subset),
        "mean_accuracy": report.mean_accuracy,
        "per_generator": dict(sorted(report.per_generator.items())),
        "method": report.method,
    }
    store.write_json("subset_report", payload)
    return payload


def stage_scale(store: RunStore, config: RunConfig) -> None:
    """Compute scaling in verifier count m and in candidate count n."""
    cache = build_eval_cache(store, config)
    pool_ids = list(cache.pool)
    subset = resolve_subset(config, store, pool_ids)
    generator = store.read_json("generation_meta")["generator"]

    try:
        curve = scaling_curve(cache, subset, generator)
        scaling_m_payload: dict[str, Any] = {
            "generator": curve.generator_id,
            "subset": list(curve.subset),
            "points": [
                {
                    "m": p.m,
                    "mean": p.mean,
                    "p5": p.p5,
                    "p25": p.p25,
                    "p75": p.p75,
                    "p95": p.p95,
                    "combos": p.combos,
                }
                for p in curve.points
            ],
        }
    except SubsetTooLarge as exc:
        logger.warning("skipping the scaling-in-m curve: %s", exc)
        scaling_m_payload = {"skipped": str(exc)}
    store.write_json("scaling_m", scaling_m_payload)

    n_values = config.default_n_values()
    by_n = scaling_in_n(cache, subset, generator, n_values, policies=config.policies)
    store.write_json(
        "scaling_n",
        {
            "generator": generator,
            "subset": list(subset),
            "policies": list(config.policies),
            "n_values": list(n_values),
            "accuracy": {
                str(n): {policy: acc for policy, acc in sorted(per.items())}
                for n, per in by_n.items()
            },
        },
    )


def run_pipeline(config: RunConfig, backend: ChatBackend | None = None) -> RunStore:
    """Run every stage end to end against the configured run directory.

    Stages whose outputs already exist are skipped, so an interrupted run can
    resume. When both query-issuing stages ran fresh against one backend, the
    ledger is checked against the backend's own request count.
    """
    from mavlab.harness.report import stage_report

    store = RunStore(config.out_dir)
    stage_ingest(store, config)
    fresh_generate = not store.has("candidates")
    fresh_verify = not store.has("approvals")
    chat = backend if backend is not None else make_backend(config)
    stage_generate(store, config, chat)
    stage_verify(store, config, chat)
    stage_score(store, config)
    if config.val_size > 0:
        stage_engineer(store, config)
    stage_select(store, config)
    stage_scale(store, config)
    stage_report(store, config)
    store.update_manifest()

    if fresh_generate and fresh_verify:
        ledger = _load_ledger(store)
        chargeable = ledger.total - ledger.scalar
        if chargeable != chat.requests_issued:
            raise StageError(
                f"ledger accounts for {chargeable} chat queries but the backend "
                f"issued {chat.requests_issued}"
            )
    return store
