"""Core domain types: questions, actions, samples, step records, trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Union


class Source(str, Enum):
    HOTPOTQA = "hotpotqa"
    ELI5 = "eli5"
    ELI5_ASKH = "eli5_askh"
    ELI5_ASKS = "eli5_asks"
    BAMBOOGLE = "bamboogle"
    BAMTWOOGLE = "bamtwoogle"
    CUSTOM = "custom"


#: Datasets that must never contribute fine-tuning examples.
EVAL_ONLY_SOURCES = frozenset({Source.BAMBOOGLE, Source.BAMTWOOGLE})


class StepKind(str, Enum):
    DECISION = "decision"
    SUMMARIZE = "summarize"
    ANSWER_GEN = "answer_gen"
    RELEVANCE_CHECK = "relevance_check"
    GROUNDING_CHECK = "grounding_check"
    DONE = "done"


#: Step kinds that correspond to an actual model call.
MODEL_STEP_KINDS = (
    StepKind.DECISION,
    StepKind.SUMMARIZE,
    StepKind.ANSWER_GEN,
    StepKind.RELEVANCE_CHECK,
    StepKind.GROUNDING_CHECK,
)


class Status(str, Enum):
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"
    FAILED = "failed"


class SelectionMethod(str, Enum):
    MIN_PERPLEXITY = "min_perplexity"
    RM_RANKED = "rm_ranked"


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    source: Source = Source.CUSTOM
    ref_answer: str | None = None

    def validate(self) -> None:
        if not self.id:
            raise ValueError("question id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"question {self.id!r} has empty text")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "text": self.text, "source": self.source.value}
        if self.ref_answer is not None:
            d["ref_answer"] = self.ref_answer
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Question:
        return cls(
            id=d["id"],
            text=d["text"],
            source=Source(d.get("source", "custom")),
            ref_answer=d.get("ref_answer"),
        )


@dataclass(frozen=True)
class ResultItem:
    link_id: int
    link_text: str
    snippet: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"link_id": self.link_id, "link_text": self.link_text, "snippet": self.snippet}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ResultItem:
        return cls(link_id=d["link_id"], link_text=d["link_text"], snippet=d.get("snippet", ""))


# --- Actions ------------------------------------------------------------

@dataclass(frozen=True)
class SearchAction:
    query: str
    thoughts: str = ""

    kind = "search"


@dataclass(frozen=True)
class SelectLinkAction:
    grounded_summarization: str
    thoughts: str = ""
    selected_link_ids: tuple[int, ...] = ()
    selected_links: tuple[ResultItem, ...] = ()

    kind = "select_link"


@dataclass(frozen=True)
class TerminateAction:
    thoughts: str = ""

    kind = "terminate"


@dataclass(frozen=True)
class AnswerAction:
    answer_text: str
    thoughts: str = ""

    kind = "answer"


@dataclass(frozen=True)
class CheckAnswerAction:
    passed: bool
    rationale: str = ""

    kind = "check_answer"


@dataclass(frozen=True)
class ReviseAnswerAction:
    revised_answer: str
    rationale: str = ""

    kind = "revise_answer"


Action = Union[
    SearchAction,
    SelectLinkAction,
    TerminateAction,
    AnswerAction,
    CheckAnswerAction,
    ReviseAnswerAction,
]

_ACTION_CLASSES = {
    "search": SearchAction,
    "select_link": SelectLinkAction,
    "terminate": TerminateAction,
    "answer": AnswerAction,
    "check_answer": CheckAnswerAction,
    "revise_answer": ReviseAnswerAction,
}


def action_to_dict(action: Action) -> dict[str, Any]:
    d: dict[str, Any] = {"kind": action.kind}
    if isinstance(action, SearchAction):
        d.update(query=action.query, thoughts=action.thoughts)
    elif isinstance(action, SelectLinkAction):
        d.update(
            grounded_summarization=action.grounded_summarization,
            thoughts=action.thoughts,
            selected_link_ids=list(action.selected_link_ids),
            selected_links=[r.to_dict() for r in action.selected_links],
        )
    elif isinstance(action, TerminateAction):
        d.update(thoughts=action.thoughts)
    elif isinstance(action, AnswerAction):
        d.update(answer_text=action.answer_text, thoughts=action.thoughts)
    elif isinstance(action, CheckAnswerAction):
        d.update(passed=action.passed, rationale=action.rationale)
    elif isinstance(action, ReviseAnswerAction):
        d.update(revised_answer=action.revised_answer, rationale=action.rationale)
    else:  # pragma: no cover - exhaustive
        raise TypeError(f"not an action: {action!r}")
    return d


def action_from_dict(d: dict[str, Any]) -> Action:
    kind = d["kind"]
    if kind == "search":
        return SearchAction(query=d["query"], thoughts=d.get("thoughts", ""))
    if kind == "select_link":
        return SelectLinkAction(
            grounded_summarization=d["grounded_summarization"],
            thoughts=d.get("thoughts", ""),
            selected_link_ids=tuple(d.get("selected_link_ids", ())),
            selected_links=tuple(ResultItem.from_dict(r) for r in d.get("selected_links", ())),
        )
    if kind == "terminate":
        return TerminateAction(thoughts=d.get("thoughts", ""))
    if kind == "answer":
        return AnswerAction(answer_text=d["answer_text"], thoughts=d.get("thoughts", ""))
    if kind == "check_answer":
        return CheckAnswerAction(passed=d["passed"], rationale=d.get("rationale", ""))
    if kind == "revise_answer":
        return ReviseAnswerAction(revised_answer=d["revised_answer"], rationale=d.get("rationale", ""))
    raise ValueError(f"unknown action kind {kind!r}")


# --- Sampling -----------------------------------------------------------

@dataclass(frozen=True)
class SampleResult:
    """One sampled completion with its length-normalized perplexity."""

    text: str
    token_count: int
    sum_log_prob: float
    perplexity: float

    @classmethod
    def make(cls, text: str, token_count: int, sum_log_prob: float) -> SampleResult:
        if token_count < 1:
            raise ValueError("token_count must be >= 1")
        return cls(
            text=text,
            token_count=token_count,
            sum_log_prob=sum_log_prob,
            perplexity=math.exp(-sum_log_prob / token_count),
        )

    def consistent(self, rel_tol: float = 1e-9) -> bool:
        return math.isclose(
            self.perplexity,
            math.exp(-self.sum_log_prob / self.token_count),
            rel_tol=rel_tol,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "token_count": self.token_count,
            "sum_log_prob": self.sum_log_prob,
            "perplexity": self.perplexity,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SampleResult:
        return cls(
            text=d["text"],
            token_count=d["token_count"],
            sum_log_prob=d["sum_log_prob"],
            perplexity=d["perplexity"],
        )


@dataclass(frozen=True)
class SearchQueryRecord:
    query: str
    results: tuple[ResultItem, ...]
    provider: str = "unknown"
    retrieved_at: str = "1970-01-01T00:00:00Z"
    truncated_link_ids: tuple[int, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "results": [r.to_dict() for r in self.results],
            "provider": self.provider,
            "retrieved_at": self.retrieved_at,
            "truncated_link_ids": list(self.truncated_link_ids),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SearchQueryRecord:
        return cls(
            query=d["query"],
            results=tuple(ResultItem.from_dict(r) for r in d["results"]),
            provider=d.get("provider", "unknown"),
            retrieved_at=d.get("retrieved_at", "1970-01-01T00:00:00Z"),
            truncated_link_ids=tuple(d.get("truncated_link_ids", ())),
        )


# --- Agent configuration -------------------------------------------------

@dataclass(frozen=True)
class AgentConfig:
    temperature: float = 0.5
    samples_per_step: int = 4
    top_k_snippets: int = 3
    max_searches: int = 10
    max_parse_retries: int = 2
    selection: SelectionMethod = SelectionMethod.MIN_PERPLEXITY

    def validate(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.samples_per_step < 1:
            raise ValueError("samples_per_step must be >= 1")
        if self.top_k_snippets < 1:
            raise ValueError("top_k_snippets must be >= 1")
        if self.max_searches < 1:
            raise ValueError("max_searches must be >= 1")
        if self.max_parse_retries < 0:
            raise ValueError("max_parse_retries must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "samples_per_step": self.samples_per_step,
            "top_k_snippets": self.top_k_snippets,
            "max_searches": self.max_searches,
            "max_parse_retries": self.max_parse_retries,
            "selection": self.selection.value,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AgentConfig:
        return cls(
            temperature=d.get("temperature", 0.5),
            samples_per_step=d.get("samples_per_step", 4),
            top_k_snippets=d.get("top_k_snippets", 3),
            max_searches=d.get("max_searches", 10),
            max_parse_retries=d.get("max_parse_retries", 2),
            selection=SelectionMethod(d.get("selection", "min_perplexity")),
        )


# --- Step records and trajectories ---------------------------------------

@dataclass
class StepRecord:
    """One reasoning step: the rendered prompt, every sample, the selection."""

    kind: StepKind
    prompt: str
    samples: list[SampleResult]
    sample_ok: list[bool]
    sample_flags: list[list[str]]
    selected_index: int
    min_perplexity_index: int
    selection_method: SelectionMethod
    action: Action
    retries: int = 0
    search: SearchQueryRecord | None = None
    rm_raw: str | None = None
    rm_best_index: int | None = None
    rm_fallback: bool = False

    def parseable_indices(self) -> list[int]:
        return [i for i, ok in enumerate(self.sample_ok) if ok]

    def copy(self) -> StepRecord:
        return replace(
            self,
            samples=list(self.samples),
            sample_ok=list(self.sample_ok),
            sample_flags=[list(f) for f in self.sample_flags],
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "prompt": self.prompt,
            "samples": [s.to_dict() for s in self.samples],
            "sample_ok": list(self.sample_ok),
            "sample_flags": [list(f) for f in self.sample_flags],
            "selected_index": self.selected_index,
            "min_perplexity_index": self.min_perplexity_index,
            "selection_method": self.selection_method.value,
            "action": action_to_dict(self.action),
            "retries": self.retries,
            "search": self.search.to_dict() if self.search else None,
            "rm_raw": self.rm_raw,
            "rm_best_index": self.rm_best_index,
            "rm_fallback": self.rm_fallback,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StepRecord:
        return cls(
            kind=StepKind(d["kind"]),
            prompt=d["prompt"],
            samples=[SampleResult.from_dict(s) for s in d["samples"]],
            sample_ok=list(d["sample_ok"]),
            sample_flags=[list(f) for f in d["sample_flags"]],
            selected_index=d["selected_index"],
            min_perplexity_index=d["min_perplexity_index"],
            selection_method=SelectionMethod(d["selection_method"]),
            action=action_from_dict(d["action"]),
            retries=d.get("retries", 0),
            search=SearchQueryRecord.from_dict(d["search"]) if d.get("search") else None,
            rm_raw=d.get("rm_raw"),
            rm_best_index=d.get("rm_best_index"),
            rm_fallback=d.get("rm_fallback", False),
        )


#: Step kinds whose selected action is replayed into PAST_ACTIONS.
PAST_ACTION_STEPS = (StepKind.DECISION, StepKind.SUMMARIZE, StepKind.ANSWER_GEN)


@dataclass
class Trajectory:
    question: Question
    rng_seed: int
    trajectory_id: str
    repeat_index: int = 0
    generation: int = 0
    steps: list[StepRecord] = field(default_factory=list)
    remaining_searches: int = 0
    draft_answer: str | None = None
    final_answer: str | None = None
    status: Status = Status.IN_PROGRESS
    failure_reason: str | None = None

    @property
    def past_actions(self) -> list[Action]:
        return [s.action for s in self.steps if s.kind in PAST_ACTION_STEPS]

    @property
    def search_count(self) -> int:
        return sum(1 for s in self.steps if s.kind == StepKind.DECISION and isinstance(s.action, SearchAction))

    def observed_link_ids(self) -> set[int]:
        ids: set[int] = set()
        for s in self.steps:
            if s.search is not None:
                ids.update(r.link_id for r in s.search.results)
        return ids

    def step_kinds(self) -> list[StepKind]:
        return [s.kind for s in self.steps]

    def to_dict(self, config: AgentConfig | None = None) -> dict[str, Any]:
        return {
            "schema_version": 1,
            "trajectory_id": self.trajectory_id,
            "question": self.question.to_dict(),
            "config": config.to_dict() if config else None,
            "rng_seed": self.rng_seed,
            "repeat_index": self.repeat_index,
            "generation": self.generation,
            "status": self.status.value,
            "failure_reason": self.failure_reason,
            "remaining_searches": self.remaining_searches,
            "draft_answer": self.draft_answer,
            "final_answer": self.final_answer,
            "steps": [s.to_dict() for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Trajectory:
        traj = cls(
            question=Question.from_dict(d["question"]),
            rng_seed=d["rng_seed"],
            trajectory_id=d["trajectory_id"],
            repeat_index=d.get("repeat_index", 0),
            generation=d.get("generation", 0),
            remaining_searches=d["remaining_searches"],
            draft_answer=d.get("draft_answer"),
            final_answer=d.get("final_answer"),
            status=Status(d["status"]),
            failure_reason=d.get("failure_reason"),
        )
        traj.steps = [StepRecord.from_dict(s) for s in d["steps"]]
        return traj
