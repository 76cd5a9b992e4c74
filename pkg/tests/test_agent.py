from __future__ import annotations

import pytest

from searchagent.agent import (
    TrajectoryRunner,
    apply_self_check,
    cited_link_ids,
    current_state,
    matches_step_grammar,
    next_state,
    run_trajectory,
    transition,
    validate_completed,
)
from searchagent.backends import ScriptedLLM, SimulatedAgentLLM, SimulatedSearch, StaticSearch, canned
from searchagent.errors import BackendUnreachable, BudgetMisuse, TransitionError
from searchagent.logio import canonical_dumps
from searchagent.types import (
    AgentConfig,
    AnswerAction,
    CheckAnswerAction,
    Question,
    ReviseAnswerAction,
    SearchAction,
    SelectLinkAction,
    Status,
    StepKind,
    TerminateAction,
    Trajectory,
)

from conftest import make_compact_library

LIB = make_compact_library()
Q = Question(id="q1", text="What is the tallest tree?")

DECISION_SEARCH = (
    'ACTION_SELECTED = ActionWrapper(thoughts="look it up", '
    "action=Search(query='tallest tree'))  # [END]"
)
DECISION_TERMINATE = (
    'ACTION_SELECTED = ActionWrapper(thoughts="enough", action=Terminate())  # [END]'
)
SUMMARIZE_PICK_1 = (
    "# [link_id=1] is useful.\n"
    "ACTION_SELECTED: LinkSelection = LinkSelection(grounded_summarization="
    "'According to [link_id=1], it is the coast redwood.', thoughts=\"good\", "
    "selected_link_ids=[1])  # [END]"
)
ANSWER_OUT = (
    'ACTION_SELECTED: Answer = Answer(thoughts="compose", '
    'answer="The coast redwood [link_id=1].")  # [END]'
)
CHECK_PASS = "# fine\nACTION_SELECTED: Command = Check_Answer(passed=True)  # [END]"

SEARCH_FIXTURE = StaticSearch({"tallest tree": [("Redwood - wiki", "The coast redwood is tallest.")]})


def one_sample_config(**kw) -> AgentConfig:
    return AgentConfig(samples_per_step=1, max_parse_retries=kw.pop("max_parse_retries", 0), **kw)


def scripted(*texts: str) -> ScriptedLLM:
    return ScriptedLLM([canned(t) for t in texts])


def test_scripted_six_step_trajectory():
    llm = scripted(DECISION_SEARCH, SUMMARIZE_PICK_1, DECISION_TERMINATE,
                   ANSWER_OUT, CHECK_PASS, CHECK_PASS)
    traj = run_trajectory(Q, one_sample_config(), llm, SEARCH_FIXTURE, templates=LIB)
    assert traj.status == Status.COMPLETED
    assert len(traj.steps) == 6
    assert traj.search_count == 1
    assert traj.final_answer == traj.draft_answer == "The coast redwood [link_id=1]."
    assert traj.step_kinds() == [
        StepKind.DECISION, StepKind.SUMMARIZE, StepKind.DECISION,
        StepKind.ANSWER_GEN, StepKind.RELEVANCE_CHECK, StepKind.GROUNDING_CHECK,
    ]
    assert validate_completed(traj, one_sample_config()) == []


def test_budget_forces_answer_after_max_searches():
    cfg = one_sample_config()
    texts = []
    for i in range(10):
        texts.append(DECISION_SEARCH)
        texts.append(SUMMARIZE_PICK_1.replace("link_id=1", f"link_id={i + 1}")
                     .replace("[1]", f"[{i + 1}]"))
    texts += [ANSWER_OUT.replace("[link_id=1]", "[link_id=1]"), CHECK_PASS, CHECK_PASS]
    search = StaticSearch({"tallest tree": [("Redwood - wiki", "snippet")]})
    traj = run_trajectory(Q, cfg, scripted(*texts), search, templates=LIB)
    assert traj.status == Status.COMPLETED
    assert traj.search_count == 10
    assert traj.remaining_searches == 0
    # no Terminate decision: the budget ran out, answer generation was forced
    assert sum(1 for s in traj.steps if isinstance(s.action, TerminateAction)) == 0
    assert len(traj.steps) == 2 * 10 + 3
    assert validate_completed(traj, cfg) == []


def test_empty_question_is_rejected_before_any_backend_call():
    llm = scripted()  # would raise ScriptExhausted if ever called
    with pytest.raises(ValueError):
        run_trajectory(Question(id="x", text="   "), one_sample_config(), llm,
                       SEARCH_FIXTURE, templates=LIB)
    assert llm.remaining == 0


def test_transition_table():
    assert transition(StepKind.DECISION, SearchAction(query="q"), 5) == StepKind.SUMMARIZE
    assert transition(StepKind.DECISION, TerminateAction(), 5) == StepKind.ANSWER_GEN
    assert transition(StepKind.SUMMARIZE, SelectLinkAction(grounded_summarization="s"), 5) == StepKind.DECISION
    assert transition(StepKind.SUMMARIZE, SelectLinkAction(grounded_summarization="s"), 0) == StepKind.ANSWER_GEN
    assert transition(StepKind.ANSWER_GEN, AnswerAction(answer_text="a"), 0) == StepKind.RELEVANCE_CHECK
    assert transition(StepKind.RELEVANCE_CHECK, CheckAnswerAction(passed=True), 0) == StepKind.GROUNDING_CHECK
    assert transition(StepKind.GROUNDING_CHECK, ReviseAnswerAction(revised_answer="r"), 0) == StepKind.DONE


def test_illegal_transition_names_state_and_action():
    with pytest.raises(TransitionError) as exc:
        transition(StepKind.ANSWER_GEN, SearchAction(query="q"), 5)
    assert exc.value.state == "answer_gen"
    assert exc.value.action_kind == "search"


def test_next_state_reads_the_trajectory():
    traj = Trajectory(question=Q, rng_seed=0, trajectory_id="t", remaining_searches=10)
    assert current_state(traj) == StepKind.DECISION
    assert next_state(traj, SearchAction(query="q")) == StepKind.SUMMARIZE
    assert next_state(traj, TerminateAction()) == StepKind.ANSWER_GEN
    with pytest.raises(TransitionError):
        next_state(traj, AnswerAction(answer_text="a"))


def test_apply_self_check_semantics():
    llm = scripted(DECISION_TERMINATE, ANSWER_OUT.replace(" [link_id=1]", ""), CHECK_PASS, CHECK_PASS)
    traj = run_trajectory(Q, one_sample_config(), llm, SEARCH_FIXTURE, templates=LIB)
    assert apply_self_check(traj, StepKind.RELEVANCE_CHECK, CheckAnswerAction(passed=True)) \
        == traj.final_answer
    assert apply_self_check(traj, StepKind.GROUNDING_CHECK,
                            ReviseAnswerAction(revised_answer="corrected text")) == "corrected text"
    with pytest.raises(TransitionError):
        apply_self_check(traj, StepKind.RELEVANCE_CHECK, SearchAction(query="x"))
    with pytest.raises(ValueError):
        apply_self_check(traj, StepKind.DECISION, CheckAnswerAction(passed=True))


def test_revision_updates_final_answer():
    revise = ("# wrong year\nACTION_SELECTED: Command = Revise_Answer("
              "revised_answer='The coast redwood, revised [link_id=1].')  # [END]")
    llm = scripted(DECISION_SEARCH, SUMMARIZE_PICK_1, DECISION_TERMINATE,
                   ANSWER_OUT, CHECK_PASS, revise)
    traj = run_trajectory(Q, one_sample_config(), llm, SEARCH_FIXTURE, templates=LIB)
    assert traj.status == Status.COMPLETED
    assert traj.draft_answer == "The coast redwood [link_id=1]."
    assert traj.final_answer == "The coast redwood, revised [link_id=1]."
    assert validate_completed(traj, one_sample_config()) == []


def test_parse_retries_then_success():
    llm = scripted("garbage one", "garbage two", DECISION_TERMINATE,
                   ANSWER_OUT.replace(" [link_id=1]", ""), CHECK_PASS, CHECK_PASS)
    traj = run_trajectory(Q, one_sample_config(max_parse_retries=2), llm,
                          SEARCH_FIXTURE, templates=LIB)
    assert traj.status == Status.COMPLETED
    first = traj.steps[0]
    assert first.retries == 2
    assert len(first.samples) == 3
    assert first.sample_ok == [False, False, True]


def test_parse_exhaustion_fails_the_trajectory():
    llm = scripted("nope", "still nope", "never")
    traj = run_trajectory(Q, one_sample_config(max_parse_retries=2), llm,
                          SEARCH_FIXTURE, templates=LIB)
    assert traj.status == Status.FAILED
    assert traj.failure_reason == "parse_exhausted"
    assert len(traj.steps) == 0  # the failing step is not a legal step record


def test_backend_error_fails_the_trajectory():
    class Broken:
        def sample(self, prompt, n, temperature, stop):
            raise BackendUnreachable("llm down")

    traj = run_trajectory(Q, one_sample_config(), Broken(), SEARCH_FIXTURE, templates=LIB)
    assert traj.status == Status.FAILED
    assert traj.failure_reason.startswith("backend_error")


def test_search_fixture_miss_fails_the_trajectory():
    llm = scripted(DECISION_SEARCH)
    traj = run_trajectory(Q, one_sample_config(), llm, StaticSearch({}), templates=LIB)
    assert traj.status == Status.FAILED
    assert traj.failure_reason.startswith("backend_error")
    assert len(traj.steps) == 1  # the decision that asked for the search is kept


def test_budget_misuse_is_reported_not_swallowed(monkeypatch):
    runner = TrajectoryRunner(one_sample_config(), scripted(), SEARCH_FIXTURE, templates=LIB)

    def boom(state, traj, pending):
        raise BudgetMisuse("forced for test")

    monkeypatch.setattr(runner, "_render", boom)
    traj = runner.run(Q)
    assert traj.status == Status.FAILED
    assert traj.failure_reason.startswith("budget_misuse")


def test_invalid_link_selection_is_rejected_per_sample():
    bad = SUMMARIZE_PICK_1.replace("[1]", "[99]").replace("link_id=1", "link_id=99")
    cfg = AgentConfig(samples_per_step=2, max_parse_retries=0)
    llm = ScriptedLLM([
        canned(DECISION_SEARCH), canned(DECISION_SEARCH),
        canned(bad, perplexity=1.0), canned(SUMMARIZE_PICK_1, perplexity=2.0),
        canned(DECISION_TERMINATE), canned(DECISION_TERMINATE),
        canned(ANSWER_OUT), canned(ANSWER_OUT),
        canned(CHECK_PASS), canned(CHECK_PASS),
        canned(CHECK_PASS), canned(CHECK_PASS),
    ])
    traj = run_trajectory(Q, cfg, llm, SEARCH_FIXTURE, templates=LIB)
    assert traj.status == Status.COMPLETED
    summ = traj.steps[1]
    assert summ.sample_ok == [False, True]
    assert summ.sample_flags[0] == ["invalid_link_id"]
    # the valid (higher-perplexity) sample won because the best one was invalid
    assert summ.selected_index == 1
    assert summ.action.selected_link_ids == (1,)


def test_uncited_link_in_answer_is_rejected():
    bad_answer = ANSWER_OUT.replace("[link_id=1]", "[link_id=77]")
    llm = scripted(DECISION_SEARCH, SUMMARIZE_PICK_1, DECISION_TERMINATE, bad_answer)
    traj = run_trajectory(Q, one_sample_config(), llm, SEARCH_FIXTURE, templates=LIB)
    assert traj.status == Status.FAILED
    assert traj.failure_reason == "parse_exhausted"


def test_cited_link_ids_handles_grouped_citations():
    assert cited_link_ids("x [link_id=4, 5, 6] y [link_id=2]") == {2, 4, 5, 6}
    assert cited_link_ids("no citations") == set()


def test_step_grammar_helper():
    kinds = [StepKind.DECISION, StepKind.SUMMARIZE, StepKind.DECISION,
             StepKind.ANSWER_GEN, StepKind.RELEVANCE_CHECK, StepKind.GROUNDING_CHECK]
    assert matches_step_grammar(kinds, search_count=1, voluntary=True)
    assert not matches_step_grammar(kinds, search_count=1, voluntary=False)


def test_identical_runs_are_byte_identical():
    cfg = AgentConfig()
    q = Question(id="d1", text="Which ocean is deepest?")
    a = run_trajectory(q, cfg, SimulatedAgentLLM(seed=5), SimulatedSearch(seed=5),
                       templates=LIB, rng_seed=9)
    b = run_trajectory(q, cfg, SimulatedAgentLLM(seed=5), SimulatedSearch(seed=5),
                       templates=LIB, rng_seed=9)
    assert canonical_dumps(a.to_dict(cfg)) == canonical_dumps(b.to_dict(cfg))
