"""Experiment harness: run configuration, storage, pipeline stages, reports."""

from mavlab.harness.config import ConfigError, RunConfig
from mavlab.harness.datasets import (
    ParseError,
    SplitTooLarge,
    convert_humaneval_records,
    convert_math_records,
    convert_mmlu_pro_records,
    ingest_dataset,
    read_wire_records,
    write_wire_records,
)
from mavlab.harness.report import stage_report
from mavlab.harness.stages import (
    RewardProvider,
    StageError,
    StubRewardProvider,
    VerificationOutcome,
    apply_policies,
    build_eval_cache,
    build_pool,
    generate_candidates,
    make_backend,
    make_reward_provider,
    resolve_subset,
    run_pipeline,
    reward_candidates,
    score_candidates,
    stage_engineer,
    stage_generate,
    stage_ingest,
    stage_scale,
    stage_score,
    stage_select,
    stage_verify,
    verify_candidates,
)
from mavlab.harness.store import (
    BudgetLedger,
    MissingStage,
    RunStore,
    StoreError,
    canonical_json,
)

__all__ = [
    "BudgetLedger",
    "ConfigError",
    "MissingStage",
    "ParseError",
    "RewardProvider",
    "RunConfig",
    "RunStore",
    "SplitTooLarge",
    "StageError",
    "StoreError",
    "StubRewardProvider",
    "VerificationOutcome",
    "apply_policies",
    "build_eval_cache",
    "build_pool",
    "canonical_json",
    "convert_humaneval_records",
    "convert_math_records",
    "convert_mmlu_pro_records",
    "generate_candidates",
    "ingest_dataset",
    "make_backend",
    "make_reward_provider",
    "read_wire_records",
    "resolve_subset",
    "reward_candidates",
    "run_pipeline",
    "score_candidates",
    "stage_engineer",
    "stage_generate",
    "stage_ingest",
    "stage_report",
    "stage_scale",
    "stage_score",
    "stage_select",
    "stage_verify",
    "verify_candidates",
    "write_wire_records",
]
