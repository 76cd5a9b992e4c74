"""Search agent with code-style prompts, self-checks, trajectory collection,
fine-tuning mixture export and LLM-judged evaluation."""

from .agent import (
    TrajectoryRunner,
    apply_self_check,
    current_state,
    next_state,
    run_trajectory,
    transition,
)
from .codec.canonical import canonicalize, fine_tune_target
from .codec.grammar import parse_autoeval_verdict, parse_completion
from .codec.templates import TemplateLibrary, default_library, render_autoeval_prompt, render_prompt
from .selection import parse_rank_verdict, render_rank_prompt, rerank_step, select_min_perplexity
from .types import (
    Action,
    AgentConfig,
    AnswerAction,
    CheckAnswerAction,
    Question,
    ResultItem,
    ReviseAnswerAction,
    SampleResult,
    SearchAction,
    SearchQueryRecord,
    SelectLinkAction,
    SelectionMethod,
    Source,
    Status,
    StepKind,
    StepRecord,
    TerminateAction,
    Trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "TrajectoryRunner",
    "apply_self_check",
    "current_state",
    "next_state",
    "run_trajectory",
    "transition",
    "canonicalize",
    "fine_tune_target",
    "parse_autoeval_verdict",
    "parse_completion",
    "TemplateLibrary",
    "default_library",
    "render_autoeval_prompt",
    "render_prompt",
    "parse_rank_verdict",
    "render_rank_prompt",
    "rerank_step",
    "select_min_perplexity",
    "Action",
    "AgentConfig",
    "AnswerAction",
    "CheckAnswerAction",
    "Question",
    "ResultItem",
    "ReviseAnswerAction",
    "SampleResult",
    "SearchAction",
    "SearchQueryRecord",
    "SelectLinkAction",
    "SelectionMethod",
    "Source",
    "Status",
    "StepKind",
    "StepRecord",
    "TerminateAction",
    "Trajectory",
    "__version__",
]
