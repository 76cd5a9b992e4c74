"""The agent state machine: decision/search/summarize loops, answer
generation and the two self-checks, producing a complete trajectory."""

from __future__ import annotations

import re

from .backends.base import DEFAULT_STOP, LinkIdAllocator, LLMBackend, SearchBackend
from .codec.grammar import ParsedCompletion, parse_completion
from .codec.templates import TemplateLibrary, default_library, render_prompt
from .errors import AllUnparseable, BackendError, BudgetMisuse, ParseError, TransitionError
from .selection import resolve_select_link, select_min_perplexity
from .types import (
    Action,
    AgentConfig,
    AnswerAction,
    CheckAnswerAction,
    Question,
    ReviseAnswerAction,
    SearchAction,
    SearchQueryRecord,
    SelectLinkAction,
    SelectionMethod,
    Status,
    StepKind,
    StepRecord,
    TerminateAction,
    Trajectory,
)

_CITATION_RE = re.compile(r"\[link_id=([0-9,\s]+)\]")


def cited_link_ids(text: str) -> set[int]:
    """All ids referenced by ``[link_id=N]`` / ``[link_id=N, M]`` markers."""
    ids: set[int] = set()
    for group in _CITATION_RE.findall(text):
        for part in group.split(","):
            part = part.strip()
            if part:
                ids.add(int(part))
    return ids


def transition(state: StepKind, action: Action, remaining_searches: int) -> StepKind:
    """Pure transition function of the agent state machine."""
    if state == StepKind.DECISION:
        if isinstance(action, SearchAction):
            return StepKind.SUMMARIZE
        if isinstance(action, TerminateAction):
            return StepKind.ANSWER_GEN
    elif state == StepKind.SUMMARIZE:
        if isinstance(action, SelectLinkAction):
            return StepKind.DECISION if remaining_searches > 0 else StepKind.ANSWER_GEN
    elif state == StepKind.ANSWER_GEN:
        if isinstance(action, AnswerAction):
            return StepKind.RELEVANCE_CHECK
    elif state == StepKind.RELEVANCE_CHECK:
        if isinstance(action, (CheckAnswerAction, ReviseAnswerAction)):
            return StepKind.GROUNDING_CHECK
    elif state == StepKind.GROUNDING_CHECK:
        if isinstance(action, (CheckAnswerAction, ReviseAnswerAction)):
            return StepKind.DONE
    raise TransitionError(state.value, action.kind)


def current_state(trajectory: Trajectory) -> StepKind:
    """The step kind the trajectory is waiting to execute."""
    if not trajectory.steps:
        return StepKind.DECISION if trajectory.remaining_searches > 0 else StepKind.ANSWER_GEN
    last = trajectory.steps[-1]
    return transition(last.kind, last.action, trajectory.remaining_searches)


def next_state(trajectory: Trajectory, parsed_action: Action) -> StepKind:
    """State after applying ``parsed_action`` in the trajectory's current state."""
    return transition(current_state(trajectory), parsed_action, trajectory.remaining_searches)


def current_answer(trajectory: Trajectory) -> str | None:
    """The answer as of the latest step: the draft, then any check revisions."""
    answer = None
    for step in trajectory.steps:
        if isinstance(step.action, AnswerAction):
            answer = step.action.answer_text
        elif isinstance(step.action, ReviseAnswerAction):
            answer = step.action.revised_answer
    return answer


def apply_self_check(trajectory: Trajectory, check_kind: StepKind, action: Action) -> str:
    """Answer text after one self-check; a passing check keeps it unchanged."""
    if check_kind not in (StepKind.RELEVANCE_CHECK, StepKind.GROUNDING_CHECK):
        raise ValueError(f"{check_kind} is not a self-check step")
    answer = current_answer(trajectory)
    if answer is None:
        raise ValueError("self-check requires a draft answer")
    if isinstance(action, CheckAnswerAction):
        if not action.passed:
            raise ValueError("a failed check without a revision is a malformed sample")
        return answer
    if isinstance(action, ReviseAnswerAction):
        return action.revised_answer
    raise TransitionError(check_kind.value, action.kind)


def matches_step_grammar(kinds: list[StepKind], search_count: int, voluntary: bool) -> bool:
    """(Decision Summarize)* Decision-Terminate? AnswerGen Relevance Grounding."""
    expected: list[StepKind] = []
    for _ in range(search_count):
        expected += [StepKind.DECISION, StepKind.SUMMARIZE]
    if voluntary:
        expected.append(StepKind.DECISION)
    expected += [StepKind.ANSWER_GEN, StepKind.RELEVANCE_CHECK, StepKind.GROUNDING_CHECK]
    return kinds == expected


class TrajectoryRunner:
    def __init__(
        self,
        config: AgentConfig,
        llm: LLMBackend,
        search: SearchBackend,
        templates: TemplateLibrary | None = None,
    ):
        config.validate()
        self.config = config
        self.llm = llm
        self.search = search
        self.templates = templates or default_library()

    def run(
        self,
        question: Question,
        *,
        rng_seed: int = 0,
        repeat_index: int = 0,
        generation: int = 0,
        trajectory_id: str | None = None,
    ) -> Trajectory:
        question.validate()
        traj = Trajectory(
            question=question,
            rng_seed=rng_seed,
            trajectory_id=trajectory_id or f"{question.id}#{repeat_index}",
            repeat_index=repeat_index,
            generation=generation,
            remaining_searches=self.config.max_searches,
        )
        allocator = LinkIdAllocator()
        pending_search: SearchQueryRecord | None = None
        state = StepKind.DECISION

        while state != StepKind.DONE:
            try:
                prompt = self._render(state, traj, pending_search)
                step = self._run_step(state, prompt, traj, pending_search)
            except AllUnparseable:
                return self._fail(traj, "parse_exhausted")
            except BackendError as exc:
                return self._fail(traj, f"backend_error: {exc}")
            except BudgetMisuse as exc:
                return self._fail(traj, f"budget_misuse: {exc}")

            if state == StepKind.DECISION and isinstance(step.action, SearchAction):
                if traj.remaining_searches <= 0:
                    return self._fail(traj, "budget_misuse: search requested with no budget left")
                try:
                    pending_search = self.search.search(
                        step.action.query, self.config.top_k_snippets, allocator
                    )
                except BackendError as exc:
                    traj.steps.append(step)
                    return self._fail(traj, f"backend_error: {exc}")
                traj.remaining_searches -= 1
            elif state == StepKind.SUMMARIZE:
                step.search = pending_search
                pending_search = None
            elif state == StepKind.ANSWER_GEN:
                traj.draft_answer = step.action.answer_text

            traj.steps.append(step)
            state = transition(state, step.action, traj.remaining_searches)

        traj.final_answer = current_answer(traj)
        traj.status = Status.COMPLETED
        return traj

    def _render(self, state: StepKind, traj: Trajectory, pending: SearchQueryRecord | None) -> str:
        if state == StepKind.SUMMARIZE:
            if pending is None:
                raise BudgetMisuse("summarize state without a pending search record")
            return render_prompt(self.templates, state, traj, search_record=pending)
        if state in (StepKind.RELEVANCE_CHECK, StepKind.GROUNDING_CHECK):
            return render_prompt(self.templates, state, traj, answer=current_answer(traj))
        return render_prompt(self.templates, state, traj)

    def _run_step(
        self,
        state: StepKind,
        prompt: str,
        traj: Trajectory,
        pending: SearchQueryRecord | None,
    ) -> StepRecord:
        samples: list = []
        sample_ok: list[bool] = []
        sample_flags: list[list[str]] = []
        actions: list[Action | None] = []
        retries = 0
        for attempt in range(self.config.max_parse_retries + 1):
            retries = attempt
            batch = self.llm.sample(
                prompt, self.config.samples_per_step, self.config.temperature, list(DEFAULT_STOP)
            )
            any_ok = False
            for s in batch:
                ok, flags, action = self._parse_sample(state, s.text, traj, pending)
                samples.append(s)
                sample_ok.append(ok)
                sample_flags.append(flags)
                actions.append(action)
                any_ok = any_ok or ok
            if any_ok:
                break
        else:
            raise AllUnparseable(f"no parseable sample for {state.value} after {retries + 1} rounds")

        selected = select_min_perplexity(samples, sample_ok)
        action = actions[selected]
        assert action is not None
        if isinstance(action, SelectLinkAction):
            action = resolve_select_link(action, pending)
        return StepRecord(
            kind=state,
            prompt=prompt,
            samples=samples,
            sample_ok=sample_ok,
            sample_flags=sample_flags,
            selected_index=selected,
            min_perplexity_index=selected,
            selection_method=SelectionMethod.MIN_PERPLEXITY,
            action=action,
            retries=retries,
        )

    def _parse_sample(
        self,
        state: StepKind,
        text: str,
        traj: Trajectory,
        pending: SearchQueryRecord | None,
    ) -> tuple[bool, list[str], Action | None]:
        try:
            pc: ParsedCompletion = parse_completion(state, text)
        except ParseError as exc:
            return False, [f"parse:{exc.kind}"], None
        flags = list(pc.flags)
        if not pc.terminated:
            flags.append("no_end_marker")
        action = pc.action
        context_flags = self._validate_in_context(state, action, traj, pending)
        if context_flags:
            return False, flags + context_flags, None
        return True, flags, action

    def _validate_in_context(
        self,
        state: StepKind,
        action: Action,
        traj: Trajectory,
        pending: SearchQueryRecord | None,
    ) -> list[str]:
        observed = traj.observed_link_ids()
        if state == StepKind.SUMMARIZE and isinstance(action, SelectLinkAction):
            available = {r.link_id for r in pending.results} if pending else set()
            if not set(action.selected_link_ids) <= available:
                return ["invalid_link_id"]
            if not cited_link_ids(action.grounded_summarization) <= (observed | available):
                return ["citation_unresolved"]
        if isinstance(action, AnswerAction):
            if not cited_link_ids(action.answer_text) <= observed:
                return ["citation_unresolved"]
        if isinstance(action, ReviseAnswerAction):
            if not cited_link_ids(action.revised_answer) <= observed:
                return ["citation_unresolved"]
        return []

    def _fail(self, traj: Trajectory, reason: str) -> Trajectory:
        traj.status = Status.FAILED
        traj.failure_reason = reason
        return traj


def run_trajectory(
    question: Question,
    config: AgentConfig,
    llm: LLMBackend,
    search: SearchBackend,
    *,
    templates: TemplateLibrary | None = None,
    rng_seed: int = 0,
    repeat_index: int = 0,
    generation: int = 0,
    trajectory_id: str | None = None,
) -> Trajectory:
    runner = TrajectoryRunner(config, llm, search, templates)
    return runner.run(
        question,
        rng_seed=rng_seed,
        repeat_index=repeat_index,
        generation=generation,
        trajectory_id=trajectory_id,
    )


def validate_completed(trajectory: Trajectory, config: AgentConfig) -> list[str]:
    """Invariant check for a completed trajectory; returns human-readable
    violations (empty means sound)."""
    problems: list[str] = []
    if trajectory.status != Status.COMPLETED:
        return [f"status is {trajectory.status.value}"]
    s = trajectory.search_count
    if s > config.max_searches:
        problems.append(f"{s} searches exceed the budget of {config.max_searches}")
    if trajectory.remaining_searches != config.max_searches - s:
        problems.append("remaining_searches inconsistent with the search count")
    voluntary = any(
        isinstance(st.action, TerminateAction) for st in trajectory.steps if st.kind == StepKind.DECISION
    )
    if not matches_step_grammar(trajectory.step_kinds(), s, voluntary):
        problems.append(f"step sequence {[k.value for k in trajectory.step_kinds()]} is off-grammar")
    if not voluntary and trajectory.remaining_searches != 0:
        problems.append("no Terminate decision although budget was not exhausted")
    if trajectory.draft_answer is None or trajectory.final_answer is None:
        problems.append("completed trajectory must carry draft and final answers")
    checks = [st.action for st in trajectory.steps
              if st.kind in (StepKind.RELEVANCE_CHECK, StepKind.GROUNDING_CHECK)]
    if all(isinstance(c, CheckAnswerAction) and c.passed for c in checks):
        if trajectory.final_answer != trajectory.draft_answer:
            problems.append("final answer differs from draft although both checks passed")
    else:
        revisions = [c for c in checks if isinstance(c, ReviseAnswerAction)]
        if revisions and trajectory.final_answer != revisions[-1].revised_answer:
            problems.append("final answer is not the last revision")
    if trajectory.final_answer is not None:
        if not cited_link_ids(trajectory.final_answer) <= trajectory.observed_link_ids():
            problems.append("final answer cites link ids never observed")
    ordered_ids = [
        r.link_id for st in trajectory.steps if st.search is not None for r in st.search.results
    ]
    if any(b <= a for a, b in zip(ordered_ids, ordered_ids[1:])):
        problems.append("link ids are not strictly increasing")
    return problems
