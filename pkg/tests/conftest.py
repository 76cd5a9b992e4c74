from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from searchagent.backends import SimulatedAgentLLM, SimulatedSearch
from searchagent.codec.templates import RankTemplate, StepTemplate, TemplateLibrary
from searchagent.types import (
    AnswerAction,
    CheckAnswerAction,
    Question,
    ResultItem,
    ReviseAnswerAction,
    SearchAction,
    SelectLinkAction,
    Source,
    TerminateAction,
)

DATA_DIR = Path(__file__).parent / "data"

_LIVE = {
    "decision": (
        "ORIGINAL_QUESTION: str = {{question}}\n"
        "PAST_ACTIONS: List[Action] = {{past_actions}}\n"
        "REMAINING_SEARCHES: int = {{remaining_searches}}\n"
        "ORIGINAL_QUESTION: str = {{question}}\n"
    ),
    "summarize": (
        "ORIGINAL_QUESTION: str = {{question}}\n"
        "PAST_ACTIONS: List[Action] = {{past_actions}}\n"
        "CURRENT_SEARCH_RESULTS = {{current_search_results}}\n"
        "ORIGINAL_QUESTION: str = {{question}}\n"
    ),
    "answer": (
        "ORIGINAL_QUESTION: str = {{question}}\n"
        "PAST_ACTIONS: List[Action] = {{past_actions}}\n"
        "ORIGINAL_QUESTION: str = {{question}}\n"
    ),
    "check": (
        "ORIGINAL_QUESTION: str = {{question}}\n"
        "PAST_ACTIONS: List[Action] = {{past_actions}}\n"
        "ORIGINAL_QUESTION: str = {{question}}\n"
        "ANSWER: str = {{answer}}\n"
    ),
    "autoeval": (
        "ORIGINAL_QUESTION: str = {{question}}\n"
        "ANSWER: str = {{answer}}\n"
        "REF_ANSWER: str = {{ref_answer}}\n"
        "\n"
        "Check_Answer(ORIGINAL_QUESTION, ANSWER, REF_ANSWER) ="
    ),
}

_EXEMPLARS = {
    "decision": (
        "ORIGINAL_QUESTION: str = 'Tiny probe?'\n"
        "PAST_ACTIONS: List[Action] = [\n]\n"
        "REMAINING_SEARCHES: int = 10\n"
        "ORIGINAL_QUESTION: str = 'Tiny probe?'\n"
        "\n"
        "ACTION_SELECTED = ActionWrapper(thoughts=\"Start with one search.\", "
        "action=Search(query='tiny probe'))  # [END]"
    ),
    "summarize": (
        "ORIGINAL_QUESTION: str = 'Tiny probe?'\n"
        "PAST_ACTIONS: List[Action] = [\n"
        "Search(query='tiny probe', thoughts=\"Start with one search.\"),\n"
        "]\n"
        "CURRENT_SEARCH_RESULTS = SearchResult(links=[\n"
        "  ResultItem(link_id=1, link_text='Tiny result', snippet='A tiny fact.'),\n"
        "])\n"
        "ORIGINAL_QUESTION: str = 'Tiny probe?'\n"
        "\n"
        "# [link_id=1] carries the fact. Selected.\n"
        "ACTION_SELECTED: LinkSelection = LinkSelection(grounded_summarization='According to "
        "[link_id=1], the tiny fact holds.', thoughts=\"That settles it.\", selected_link_ids=[1])  # [END]"
    ),
    "answer": (
        "ORIGINAL_QUESTION: str = 'Tiny probe?'\n"
        "PAST_ACTIONS: List[Action] = [\n"
        "Search(query='tiny probe', thoughts=\"Start with one search.\"),\n"
        "SelectLink(selected_links=[ResultItem(link_id=1, link_text='Tiny result', "
        "snippet='A tiny fact.')], grounded_summarization='According to [link_id=1], the tiny "
        "fact holds.', thoughts=\"That settles it.\"),\n"
        "Terminate(thoughts=\"Enough information collected.\"),\n"
        "]\n"
        "ORIGINAL_QUESTION: str = 'Tiny probe?'\n"
        "\n"
        "ACTION_SELECTED: Answer = Answer(thoughts=\"Answer from the fact.\", "
        "answer=\"The tiny fact holds [link_id=1].\")  # [END]"
    ),
    "check": (
        "ORIGINAL_QUESTION: str = 'Tiny probe?'\n"
        "PAST_ACTIONS: List[Action] = [\n"
        "Search(query='tiny probe', thoughts=\"Start with one search.\"),\n"
        "SelectLink(selected_links=[ResultItem(link_id=1, link_text='Tiny result', "
        "snippet='A tiny fact.')], grounded_summarization='According to [link_id=1], the tiny "
        "fact holds.', thoughts=\"That settles it.\"),\n"
        "Terminate(thoughts=\"Enough information collected.\"),\n"
        "Answer(thoughts=\"Answer from the fact.\", answer=\"The tiny fact holds [link_id=1].\")\n"
        "]\n"
        "ORIGINAL_QUESTION: str = 'Tiny probe?'\n"
        "ANSWER: str = 'The tiny fact holds [link_id=1].'\n"
        "\n"
        "# The answer addresses the question and matches the snippet.\n"
        "ACTION_SELECTED: Command = Check_Answer(passed=True)  # [END]"
    ),
    "autoeval": (
        "ORIGINAL_QUESTION: str = 'Tiny probe?'\n"
        "ANSWER: str = 'The tiny fact holds [link_id=1].'\n"
        "REF_ANSWER: str = 'tiny fact'\n"
        "\n"
        "# The answer implies the reference.\n"
        "Check_Answer(ORIGINAL_QUESTION, ANSWER, REF_ANSWER) = True  # [END]"
    ),
}

_RANK_HEADER = (
    '"""Rater Instructions:\n'
    "- Pick the best model output.\n"
    "\n"
    "*** Model Can See:\n"
    "```\n"
    "{{inputs}}\n"
    "```"
)
_RANK_SECTION = "*** Model Output #{{k}}:\n```\n{{action}}\n```"
_RANK_FOOTER = (
    "Output 3 lines when answering and make sure to follow the precise format.\n"
    "\n"
    "Explanation: why you think model output #X is the best\n"
    "Answer: #X\n"
    'Ranking: #X > #Y > ...\n'
    '"""'
)


def make_compact_library() -> TemplateLibrary:
    """A one-shot template set with the same live-block shapes as the
    packaged defaults; keeps bulk property tests fast."""
    def step(key: str, live_key: str, header: str) -> StepTemplate:
        return StepTemplate(
            key=key,
            header=header,
            exemplars=(_EXEMPLARS[live_key],),
            live=_LIVE[live_key],
            shots=1,
            tail="cue" if key == "autoeval" else "blank",
        )

    steps = {
        "decision": step("decision", "decision", '"""Decide whether to search again."""'),
        "summarize": step("summarize", "summarize", '"""Filter and summarize search results."""'),
        "answer": step("answer", "answer", '"""Generate the final answer."""'),
        "relevance": step("relevance", "check", '"""Check that the answer addresses the question."""'),
        "grounding": step("grounding", "check", '"""Check that the answer is grounded in the snippets."""'),
        "autoeval": step("autoeval", "autoeval", '"""Check whether the ANSWER implies the REF_ANSWER."""'),
    }
    rank = RankTemplate(header=_RANK_HEADER, section=_RANK_SECTION, footer=_RANK_FOOTER, capacity=4)
    return TemplateLibrary(steps=steps, rank=rank)


@pytest.fixture(scope="session")
def compact_library() -> TemplateLibrary:
    return make_compact_library()


@pytest.fixture()
def sim_backends():
    def make(seed: int = 0):
        return SimulatedAgentLLM(seed=seed), SimulatedSearch(seed=seed)

    return make


def make_questions(n: int, source: Source = Source.CUSTOM, with_ref: bool = False,
                   prefix: str = "q") -> list[Question]:
    out = []
    for i in range(n):
        out.append(Question(
            id=f"{prefix}{i:04d}",
            text=f"Synthetic question {prefix}{i:04d} about topic {i % 17}?",
            source=source,
            ref_answer=f"ref answer {i}" if with_ref else None,
        ))
    return out


def write_questions(path: Path, questions: list[Question]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for q in questions:
            f.write(json.dumps(q.to_dict()) + "\n")
    return path


def random_action(rng: random.Random):
    """One random selectable action with printable-ish text fields."""
    def text(max_len: int = 40) -> str:
        alphabet = "abcdefghij KLMNOP'\"\\\n\t[]#=(),:0123456789é漢"
        return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, max_len)))

    def stripped_lines(max_lines: int = 3) -> str:
        lines = [text(24).replace("\n", " ").replace("\t", " ").strip()
                 for _ in range(rng.randint(0, max_lines))]
        return "\n".join(lines)

    kind = rng.choice(["search", "select", "terminate", "answer", "check", "revise"])
    if kind == "search":
        return SearchAction(query=text(), thoughts=text())
    if kind == "terminate":
        return TerminateAction(thoughts=text())
    if kind == "answer":
        return AnswerAction(answer_text=text(80), thoughts=text())
    if kind == "check":
        return CheckAnswerAction(passed=True, rationale=stripped_lines())
    if kind == "revise":
        return ReviseAnswerAction(revised_answer=text(80), rationale=stripped_lines())
    links = tuple(
        ResultItem(link_id=i + 1, link_text=text(20), snippet=text(60))
        for i in range(rng.randint(0, 3))
    )
    if links and rng.random() < 0.8:
        ids = tuple(r.link_id for r in links)
    else:
        ids = tuple(sorted(rng.sample(range(1, 10), rng.randint(0, 3)))) if not links else tuple(
            r.link_id for r in links
        )
    return SelectLinkAction(
        grounded_summarization=text(60),
        thoughts=text(),
        selected_link_ids=ids,
        selected_links=links,
    )


STEP_FOR_ACTION = {
    "search": "decision",
    "terminate": "decision",
    "select_link": "summarize",
    "answer": "answer_gen",
    "check_answer": "relevance_check",
    "revise_answer": "grounding_check",
}
