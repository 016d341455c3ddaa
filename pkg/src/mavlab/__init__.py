"""Select the best of n sampled LLM outputs by aggregating binary approvals
from a pool of prompted aspect verifiers, with baselines, verifier-subset
engineering, scaling analysis, and a record/replay/simulation backend.
"""

from mavlab.answer import (
    CodeJudge,
    EquivalenceKey,
    ScoreStatus,
    equivalence_key,
    extract_answer,
    gold_key,
    score_correct,
)
from mavlab.backend import (
    ChatBackend,
    ChatRequest,
    ChatResponse,
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
    GoldSpec,
    ParseStatus,
    QuestionRecord,
    SamplingParams,
    Split,
    Strategy,
    preset_domain_subset,
    preset_pool,
    restrict_pool_to_base_models,
    verifier_id,
)
from mavlab.engineer import (
    EvalCache,
    QuestionEval,
    ScalingCurve,
    ScalingPoint,
    SubsetReport,
    engineer_subset,
    evaluate_subset,
    scaling_curve,
    scaling_in_n,
)
from mavlab.harness import RunConfig, RunStore, run_pipeline
from mavlab.prompts import (
    TemplateRegistry,
    Verdict,
    parse_verdict,
    render_generator_prompt,
    render_verifier_prompt,
)
from mavlab.select import (
    SelectionResult,
    agg_score,
    modal_choice_from_keys,
    pass_at_1,
    select_bon_mav,
    select_bon_rm,
    select_self_consistency,
)
from mavlab.simlab import (
    SimBackend,
    SimProfile,
    expected_accuracy_oracle,
    sim_gold_answer,
    synthetic_questions,
)

__version__ = "0.1.0"

__all__ = [
    "Approval",
    "ApprovalMatrix",
    "Aspect",
    "AspectVerifierSpec",
    "CandidateOutput",
    "ChatBackend",
    "ChatRequest",
    "ChatResponse",
    "CodeJudge",
    "Domain",
    "DomainTag",
    "EquivalenceKey",
    "EvalCache",
    "ExtractedAnswer",
    "GoldSpec",
    "LiveBackend",
    "LiveSettings",
    "ParseStatus",
    "QuestionEval",
    "QuestionRecord",
    "RecordBackend",
    "ReplayBackend",
    "RunConfig",
    "RunStore",
    "SamplingParams",
    "ScalingCurve",
    "ScalingPoint",
    "ScoreStatus",
    "SelectionResult",
    "SimBackend",
    "SimProfile",
    "Split",
    "Strategy",
    "SubsetReport",
    "TemplateRegistry",
    "Verdict",
    "agg_score",
    "engineer_subset",
    "equivalence_key",
    "evaluate_subset",
    "expected_accuracy_oracle",
    "extract_answer",
    "gold_key",
    "modal_choice_from_keys",
    "parse_verdict",
    "pass_at_1",
    "preset_domain_subset",
    "preset_pool",
    "render_generator_prompt",
    "render_verifier_prompt",
    "restrict_pool_to_base_models",
    "run_pipeline",
    "scaling_curve",
    "scaling_in_n",
    "score_correct",
    "select_bon_mav",
    "select_bon_rm",
    "select_self_consistency",
    "sim_gold_answer",
    "synthetic_questions",
    "verifier_id",
    "__version__",
]
