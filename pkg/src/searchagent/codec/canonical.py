"""Deterministic constructor-literal serialization of actions.

``parse_completion(kind, canonicalize(a))`` must return ``a`` for every
selectable action; the emitted text is also what PAST_ACTIONS blocks and
fine-tuning targets contain.
"""

from __future__ import annotations

from ..types import (
    Action,
    AnswerAction,
    CheckAnswerAction,
    ResultItem,
    ReviseAnswerAction,
    SearchAction,
    SearchQueryRecord,
    SelectLinkAction,
    TerminateAction,
)

END_SUFFIX = "  # [END]"

_ESCAPE_BASE = {"\\": "\\\\", "\n": "\\n", "\t": "\\t", "\r": "\\r"}


def py_str(s: str, quote: str = "'") -> str:
    """Render ``s`` as a quoted literal; prose fields use double quotes."""
    out = []
    for ch in s:
        if ch in _ESCAPE_BASE:
            out.append(_ESCAPE_BASE[ch])
        elif ch == quote:
            out.append("\\" + ch)
        else:
            out.append(ch)
    return quote + "".join(out) + quote


def _prose(s: str) -> str:
    return py_str(s, quote='"')


def result_item_literal(item: ResultItem) -> str:
    return (
        f"ResultItem(link_id={item.link_id}, link_text={py_str(item.link_text)}, "
        f"snippet={py_str(item.snippet)})"
    )


def canonicalize(action: Action) -> str:
    """Serialize one action; for self-check actions the rationale becomes
    leading comment lines, mirroring how the model emits them."""
    if isinstance(action, SearchAction):
        return f"Search(query={py_str(action.query)}, thoughts={_prose(action.thoughts)})"
    if isinstance(action, TerminateAction):
        return f"Terminate(thoughts={_prose(action.thoughts)})"
    if isinstance(action, AnswerAction):
        return f"Answer(thoughts={_prose(action.thoughts)}, answer={_prose(action.answer_text)})"
    if isinstance(action, SelectLinkAction):
        if action.selected_links:
            links = ", ".join(result_item_literal(r) for r in action.selected_links)
            base = (
                f"SelectLink(selected_links=[{links}], "
                f"grounded_summarization={py_str(action.grounded_summarization)}, "
                f"thoughts={_prose(action.thoughts)}"
            )
            derived = tuple(r.link_id for r in action.selected_links)
            if action.selected_link_ids != derived:
                ids = ", ".join(str(i) for i in action.selected_link_ids)
                base += f", selected_link_ids=[{ids}]"
            return base + ")"
        ids = ", ".join(str(i) for i in action.selected_link_ids)
        return (
            f"LinkSelection(grounded_summarization={py_str(action.grounded_summarization)}, "
            f"thoughts={_prose(action.thoughts)}, selected_link_ids=[{ids}])"
        )
    if isinstance(action, CheckAnswerAction):
        return _with_rationale(action.rationale, f"Check_Answer(passed={action.passed})")
    if isinstance(action, ReviseAnswerAction):
        return _with_rationale(action.rationale, f"Revise_Answer(revised_answer={py_str(action.revised_answer)})")
    raise TypeError(f"not an action: {action!r}")


def _with_rationale(rationale: str, stmt: str) -> str:
    if not rationale:
        return stmt
    lines = [f"# {line}".rstrip() for line in rationale.split("\n")]
    return "\n".join(lines) + "\n" + stmt


def fine_tune_target(action: Action) -> str:
    """The target text of a fine-tuning example for this selected action."""
    return canonicalize(action) + END_SUFFIX


def past_actions_block(actions: list[Action]) -> str:
    """Render the PAST_ACTIONS list literal, one action per line."""
    if not actions:
        return "[\n]"
    body = "".join(canonicalize(a) + ",\n" for a in actions)
    return "[\n" + body + "]"


def search_result_block(record: SearchQueryRecord) -> str:
    """Render the CURRENT_SEARCH_RESULTS value for the summarization step."""
    if not record.results:
        return "SearchResult(links=[\n])"
    body = "".join(f"  {result_item_literal(r)},\n" for r in record.results)
    return "SearchResult(links=[\n" + body + "])"
