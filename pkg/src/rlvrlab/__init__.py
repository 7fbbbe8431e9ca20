"""Desk-scale lab for reinforcement learning with verifiable rewards.

A fully explicit k-gram policy, group-normalized clipped policy-gradient
objectives with length curricula and repetition shaping, a cascade
math-answer verifier, and a data-curation pipeline, all exercised end to
end on synthetic arithmetic tasks.
"""

from .curation import (
    CurationConfig,
    FunnelReport,
    ProblemRecord,
    run_pipeline,
)
from .objectives import (
    AdvantageSet,
    ClipSchedule,
    Group,
    RefModel,
    clipped_term,
    filter_mixed_groups,
    k3_divergence,
    reward_advantages,
    sample_clip_ratios,
    sequence_mean_objective,
    shaped_advantages,
    token_mean_objective,
)
from .policy import (
    Context,
    PolicyParams,
    Rollout,
    Vocab,
    load_checkpoint,
    sample_response,
    save_checkpoint,
    token_logprob,
    token_logprob_grad,
)
from .repetition import LoopSpan, detect_loop, repetition_score
from .tasks import TaskSpec, generate_task
from .trainer import (
    MetricsRecord,
    StagePlan,
    TrainConfig,
    TrainResult,
    collect_batch,
    evaluate,
    stage_saturated,
    train,
)
from .verifier import (
    ParsedAnswer,
    Verdict,
    extract_final_answer,
    normalize,
    parse_math,
    reward,
    verify,
)

__version__ = "0.1.0"
