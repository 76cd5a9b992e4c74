"""Parser for the constructor-literal output grammar of model completions.

The grammar covers exactly what the step prompts ask the model to emit:
identifier calls with keyword arguments, string literals (single or double
quoted with escapes), integers, booleans and lists, plus ``#`` comment
lines and the ``# [END]`` terminator. It is deliberately not a Python
parser; anything outside this space raises :class:`ParseError` with a
distinct ``kind``, never an unhandled exception.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from ..errors import ParseError, VerdictParseError
from ..types import (
    Action,
    AnswerAction,
    CheckAnswerAction,
    ResultItem,
    ReviseAnswerAction,
    SearchAction,
    SelectLinkAction,
    StepKind,
    TerminateAction,
)

END_MARKER = "[END]"
CUE_NAME = "ACTION_SELECTED"

_MAX_DEPTH = 64

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", "'": "'", '"': '"'}

_DIGITS = frozenset("0123456789")

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass(frozen=True)
class Token:
    type: str  # str|int|bool|ident|punct|comment|end|eof
    value: Any
    pos: int


def tokenize(text: str) -> list[Token]:
    """Tokenize ``text``; raises ParseError(unterminated_string | bad_token)."""
    toks: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c == "#":
            j = text.find("\n", i)
            if j == -1:
                j = n
            body = text[i + 1 : j].strip()
            if body == END_MARKER:
                toks.append(Token("end", body, i))
            else:
                toks.append(Token("comment", body, i))
            i = j
            continue
        if c in "'\"":
            quote = c
            j = i + 1
            out: list[str] = []
            while True:
                if j >= n or text[j] == "\n":
                    raise ParseError("unterminated_string", f"string starting at {i} never closes", i)
                d = text[j]
                if d == "\\":
                    if j + 1 >= n:
                        raise ParseError("unterminated_string", f"dangling escape at {j}", j)
                    nxt = text[j + 1]
                    out.append(_ESCAPES.get(nxt, "\\" + nxt))
                    j += 2
                    continue
                if d == quote:
                    break
                out.append(d)
                j += 1
            toks.append(Token("str", "".join(out), i))
            i = j + 1
            continue
        if c in _DIGITS or (c == "-" and i + 1 < n and text[i + 1] in _DIGITS):
            j = i + 1
            while j < n and text[j] in _DIGITS:
                j += 1
            toks.append(Token("int", int(text[i:j]), i))
            i = j
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            word = m.group(0)
            if word in ("True", "False"):
                toks.append(Token("bool", word == "True", i))
            else:
                toks.append(Token("ident", word, i))
            i = m.end()
            continue
        if c in "()[],=:":
            toks.append(Token("punct", c, i))
            i += 1
            continue
        raise ParseError("bad_token", f"unexpected character {c!r} at {i}", i)
    toks.append(Token("eof", None, n))
    return toks


@dataclass(frozen=True)
class _Wrapper:
    """Parsed ``ActionWrapper(...)`` before unwrapping."""

    thoughts: str
    action: Any


@dataclass(frozen=True)
class SearchResultLiteral:
    """Parsed ``SearchResult(links=[...])`` (appears in prompt context only)."""

    links: tuple[ResultItem, ...]


class _Parser:
    def __init__(self, toks: list[Token]):
        self.toks = toks
        self.i = 0

    def peek(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def skip_comments(self, sink: list[str] | None = None) -> None:
        while self.peek().type == "comment":
            t = self.advance()
            if sink is not None:
                sink.append(t.value)

    def expect_punct(self, char: str, kind: str) -> Token:
        t = self.peek()
        if t.type == "punct" and t.value == char:
            return self.advance()
        if t.type == "eof":
            raise ParseError("unbalanced_brackets" if char in ")]" else kind,
                             f"expected {char!r}, got end of input", t.pos)
        raise ParseError(kind, f"expected {char!r}, got {t.value!r}", t.pos)

    # expr := str | int | bool | list | ctor
    def parse_expr(self, depth: int = 0) -> Any:
        if depth > _MAX_DEPTH:
            raise ParseError("too_deep", "expression nesting too deep", self.peek().pos)
        self.skip_comments()
        t = self.peek()
        if t.type in ("str", "int", "bool"):
            return self.advance().value
        if t.type == "punct" and t.value == "[":
            return self.parse_list(depth + 1)
        if t.type == "ident":
            return self.parse_ctor(depth + 1)
        if t.type == "eof":
            raise ParseError("unbalanced_brackets", "unexpected end of input in expression", t.pos)
        raise ParseError("bad_value", f"unexpected token {t.value!r} in expression", t.pos)

    def parse_list(self, depth: int) -> list[Any]:
        self.expect_punct("[", "bad_value")
        items: list[Any] = []
        while True:
            self.skip_comments()
            t = self.peek()
            if t.type == "punct" and t.value == "]":
                self.advance()
                return items
            if t.type == "eof":
                raise ParseError("unbalanced_brackets", "list never closes", t.pos)
            items.append(self.parse_expr(depth + 1))
            self.skip_comments()
            t = self.peek()
            if t.type == "punct" and t.value == ",":
                self.advance()
                continue
            if t.type == "punct" and t.value == "]":
                self.advance()
                return items
            if t.type == "eof":
                raise ParseError("unbalanced_brackets", "list never closes", t.pos)
            raise ParseError("bad_value", f"expected ',' or ']' in list, got {t.value!r}", t.pos)

    def parse_ctor(self, depth: int) -> Any:
        name_tok = self.advance()
        name = name_tok.value
        self.expect_punct("(", "malformed_kwarg")
        kwargs: dict[str, Any] = {}
        while True:
            self.skip_comments()
            t = self.peek()
            if t.type == "punct" and t.value == ")":
                self.advance()
                break
            if t.type == "eof":
                raise ParseError("unbalanced_brackets", f"{name}(... never closes", t.pos)
            if t.type != "ident":
                raise ParseError("malformed_kwarg",
                                 f"expected keyword argument in {name}(...), got {t.value!r}", t.pos)
            key = self.advance().value
            self.expect_punct("=", "malformed_kwarg")
            self.skip_comments()
            nxt = self.peek()
            if nxt.type == "punct" and nxt.value in "),":
                raise ParseError("malformed_kwarg", f"keyword {key!r} in {name}(...) has no value", nxt.pos)
            value = self.parse_expr(depth + 1)
            if key in kwargs:
                raise ParseError("malformed_kwarg", f"duplicate keyword {key!r} in {name}(...)", t.pos)
            kwargs[key] = value
            self.skip_comments()
            t = self.peek()
            if t.type == "punct" and t.value == ",":
                self.advance()
                continue
            if t.type == "punct" and t.value == ")":
                self.advance()
                break
            if t.type == "eof":
                raise ParseError("unbalanced_brackets", f"{name}(... never closes", t.pos)
            raise ParseError("malformed_kwarg", f"expected ',' or ')' in {name}(...), got {t.value!r}", t.pos)
        return _build(name, kwargs, name_tok.pos)


def _req_str(name: str, kwargs: dict[str, Any], key: str, pos: int) -> str:
    if key not in kwargs:
        raise ParseError("missing_keyword", f"{name}(...) is missing required keyword {key!r}", pos)
    v = kwargs.pop(key)
    if not isinstance(v, str):
        raise ParseError("bad_value", f"{name}({key}=...) must be a string", pos)
    return v


def _opt_str(name: str, kwargs: dict[str, Any], key: str, pos: int, default: str = "") -> str:
    if key not in kwargs:
        return default
    v = kwargs.pop(key)
    if not isinstance(v, str):
        raise ParseError("bad_value", f"{name}({key}=...) must be a string", pos)
    return v


def _no_extra(name: str, kwargs: dict[str, Any], pos: int) -> None:
    if kwargs:
        extra = ", ".join(sorted(kwargs))
        raise ParseError("unexpected_keyword", f"{name}(...) got unexpected keyword(s): {extra}", pos)


def _build(name: str, kwargs: dict[str, Any], pos: int) -> Any:
    if name == "Search":
        query = _req_str(name, kwargs, "query", pos)
        thoughts = _opt_str(name, kwargs, "thoughts", pos)
        _no_extra(name, kwargs, pos)
        return SearchAction(query=query, thoughts=thoughts)
    if name == "Terminate":
        thoughts = _opt_str(name, kwargs, "thoughts", pos)
        _no_extra(name, kwargs, pos)
        return TerminateAction(thoughts=thoughts)
    if name == "Answer":
        answer = _req_str(name, kwargs, "answer", pos)
        thoughts = _opt_str(name, kwargs, "thoughts", pos)
        _no_extra(name, kwargs, pos)
        return AnswerAction(answer_text=answer, thoughts=thoughts)
    if name == "ActionWrapper":
        thoughts = _opt_str(name, kwargs, "thoughts", pos)
        if "action" not in kwargs:
            raise ParseError("missing_keyword", "ActionWrapper(...) is missing required keyword 'action'", pos)
        inner = kwargs.pop("action")
        _no_extra(name, kwargs, pos)
        return _Wrapper(thoughts=thoughts, action=inner)
    if name == "ResultItem":
        if "link_id" not in kwargs:
            raise ParseError("missing_keyword", "ResultItem(...) is missing required keyword 'link_id'", pos)
        link_id = kwargs.pop("link_id")
        if not isinstance(link_id, int) or isinstance(link_id, bool):
            raise ParseError("bad_value", "ResultItem(link_id=...) must be an integer", pos)
        link_text = _req_str(name, kwargs, "link_text", pos)
        snippet = _opt_str(name, kwargs, "snippet", pos)
        _no_extra(name, kwargs, pos)
        return ResultItem(link_id=link_id, link_text=link_text, snippet=snippet)
    if name in ("SelectLink", "LinkSelection"):
        summ = _req_str(name, kwargs, "grounded_summarization", pos)
        thoughts = _opt_str(name, kwargs, "thoughts", pos)
        links: tuple[ResultItem, ...] = ()
        ids: tuple[int, ...] | None = None
        if "selected_links" in kwargs:
            v = kwargs.pop("selected_links")
            if not isinstance(v, list) or not all(isinstance(x, ResultItem) for x in v):
                raise ParseError("bad_value", f"{name}(selected_links=...) must be a list of ResultItem", pos)
            links = tuple(v)
        if "selected_link_ids" in kwargs:
            v = kwargs.pop("selected_link_ids")
            if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
                raise ParseError("bad_value", f"{name}(selected_link_ids=...) must be a list of integers", pos)
            ids = tuple(v)
        _no_extra(name, kwargs, pos)
        if ids is None:
            ids = tuple(r.link_id for r in links)
        return SelectLinkAction(
            grounded_summarization=summ,
            thoughts=thoughts,
            selected_link_ids=ids,
            selected_links=links,
        )
    if name == "Check_Answer":
        if "passed" not in kwargs:
            raise ParseError("missing_keyword", "Check_Answer(...) is missing required keyword 'passed'", pos)
        passed = kwargs.pop("passed")
        if not isinstance(passed, bool):
            raise ParseError("bad_value", "Check_Answer(passed=...) must be a boolean", pos)
        _no_extra(name, kwargs, pos)
        return CheckAnswerAction(passed=passed)
    if name == "Revise_Answer":
        revised = _req_str(name, kwargs, "revised_answer", pos)
        _no_extra(name, kwargs, pos)
        return ReviseAnswerAction(revised_answer=revised)
    if name == "SearchResult":
        if "links" not in kwargs:
            raise ParseError("missing_keyword", "SearchResult(...) is missing required keyword 'links'", pos)
        v = kwargs.pop("links")
        if not isinstance(v, list) or not all(isinstance(x, ResultItem) for x in v):
            raise ParseError("bad_value", "SearchResult(links=...) must be a list of ResultItem", pos)
        _no_extra(name, kwargs, pos)
        return SearchResultLiteral(links=tuple(v))
    raise ParseError("unknown_constructor", f"unknown constructor {name!r}", pos)


@dataclass
class ParsedCompletion:
    action: Action
    raw_text: str
    leading_comments: list[str] = field(default_factory=list)
    terminated: bool = False
    flags: list[str] = field(default_factory=list)


#: Constructors a step kind may legally select.
STEP_ACTIONS: dict[StepKind, tuple[type, ...]] = {
    StepKind.DECISION: (SearchAction, TerminateAction),
    StepKind.SUMMARIZE: (SelectLinkAction,),
    StepKind.ANSWER_GEN: (AnswerAction,),
    StepKind.RELEVANCE_CHECK: (CheckAnswerAction, ReviseAnswerAction),
    StepKind.GROUNDING_CHECK: (CheckAnswerAction, ReviseAnswerAction),
}


def _content_flags(action: Action) -> list[str]:
    """Flag empty free-text fields; empty fields parse but are marked bad."""
    flags: list[str] = []
    checks: list[tuple[str, str]] = []
    if isinstance(action, (SearchAction, SelectLinkAction, TerminateAction, AnswerAction)):
        checks.append(("thoughts", action.thoughts))
    if isinstance(action, SearchAction):
        checks.append(("query", action.query))
    if isinstance(action, SelectLinkAction):
        checks.append(("grounded_summarization", action.grounded_summarization))
    if isinstance(action, AnswerAction):
        checks.append(("answer", action.answer_text))
    if isinstance(action, (CheckAnswerAction, ReviseAnswerAction)):
        checks.append(("rationale", action.rationale))
    if isinstance(action, ReviseAnswerAction):
        checks.append(("revised_answer", action.revised_answer))
    for name, value in checks:
        if not value.strip():
            flags.append("empty_thoughts" if name in ("thoughts", "rationale") else f"empty_{name}")
    return flags


def _parse_statement(p: _Parser) -> Any:
    """One statement: ``ACTION_SELECTED[: Ident] = <ctor>`` or a bare ctor."""
    t = p.peek()
    if t.type != "ident":
        raise ParseError("missing_cue", f"expected an action statement, got {t.value!r}", t.pos)
    nxt = p.toks[p.i + 1] if p.i + 1 < len(p.toks) else Token("eof", None, t.pos)
    if nxt.type == "punct" and nxt.value == "(":
        return p.parse_ctor(0)
    if t.value != CUE_NAME:
        raise ParseError("missing_cue", f"expected {CUE_NAME} assignment or a constructor, got {t.value!r}", t.pos)
    p.advance()
    t = p.peek()
    if t.type == "punct" and t.value == ":":
        p.advance()
        ann = p.peek()
        if ann.type != "ident":
            raise ParseError("missing_cue", "malformed type annotation after ACTION_SELECTED", ann.pos)
        p.advance()
    p.expect_punct("=", "missing_cue")
    p.skip_comments()
    t = p.peek()
    if t.type != "ident":
        raise ParseError("bad_value", f"expected a constructor after '=', got {t.value!r}", t.pos)
    return p.parse_ctor(0)


def _unwrap(node: Any, step_kind: StepKind, pos: int = 0) -> Action:
    if isinstance(node, _Wrapper):
        inner = node.action
        if not isinstance(inner, (SearchAction, TerminateAction, AnswerAction)):
            raise ParseError("wrong_constructor",
                             f"ActionWrapper(action=...) holds {type(inner).__name__}, not an action", pos)
        if node.thoughts:
            inner = inner.__class__(**{**_fields(inner), "thoughts": node.thoughts})
        node = inner
    if not isinstance(node, (SearchAction, SelectLinkAction, TerminateAction, AnswerAction,
                             CheckAnswerAction, ReviseAnswerAction)):
        raise ParseError("wrong_constructor", f"{type(node).__name__} is not a selectable action", pos)
    allowed = STEP_ACTIONS[step_kind]
    if not isinstance(node, allowed):
        names = "/".join(c.__name__ for c in allowed)
        raise ParseError("wrong_constructor",
                         f"{type(node).__name__} is not legal for a {step_kind.value} step (expected {names})", pos)
    return node


def _fields(action: Action) -> dict[str, Any]:
    from dataclasses import asdict

    d = asdict(action)
    if isinstance(action, SelectLinkAction):
        d["selected_links"] = action.selected_links
        d["selected_link_ids"] = action.selected_link_ids
    return d


def parse_completion(step_kind: StepKind, completion: str) -> ParsedCompletion:
    """Parse a model completion for ``step_kind`` into a typed action.

    Accepts the cue-assignment form (``ACTION_SELECTED[: T] = Ctor(...)``)
    as well as the bare constructor form used for canonical serializations.
    A failed self-check (``Check_Answer(passed=False)``) must be followed by
    a ``Revise_Answer(...)`` in the same completion, otherwise the sample is
    malformed.
    """
    toks = tokenize(completion)
    p = _Parser(toks)
    comments: list[str] = []
    p.skip_comments(comments)
    if p.peek().type in ("eof", "end"):
        raise ParseError("missing_cue", "completion contains no action statement", p.peek().pos)
    node = _parse_statement(p)
    action = _unwrap(node, step_kind)

    if isinstance(action, CheckAnswerAction) and not action.passed:
        revise_comments: list[str] = list(comments)
        p.skip_comments(revise_comments)
        t = p.peek()
        if t.type in ("eof", "end"):
            raise ParseError("unrevised_failed_check",
                             "Check_Answer(passed=False) without a Revise_Answer in the same completion", t.pos)
        node2 = _parse_statement(p)
        action2 = _unwrap(node2, step_kind)
        if not isinstance(action2, ReviseAnswerAction):
            raise ParseError("unrevised_failed_check",
                             "Check_Answer(passed=False) must be followed by Revise_Answer", t.pos)
        comments = revise_comments
        action = action2

    if isinstance(action, (CheckAnswerAction, ReviseAnswerAction)) and comments:
        action = action.__class__(**{**_fields(action), "rationale": "\n".join(comments)})

    terminated = False
    while p.peek().type != "eof":
        if p.peek().type == "end":
            terminated = True
            break
        p.advance()

    return ParsedCompletion(
        action=action,
        raw_text=completion,
        leading_comments=comments,
        terminated=terminated,
        flags=_content_flags(action),
    )


def parse_action_literal(text: str) -> Action:
    """Parse one standalone action constructor (a PAST_ACTIONS entry)."""
    p = _Parser(tokenize(text))
    p.skip_comments()
    t = p.peek()
    if t.type != "ident":
        raise ParseError("missing_cue", f"expected a constructor, got {t.value!r}", t.pos)
    node = p.parse_ctor(0)
    if isinstance(node, _Wrapper):
        node = _unwrap(node, StepKind.DECISION, t.pos)
    if not isinstance(node, (SearchAction, SelectLinkAction, TerminateAction, AnswerAction,
                             CheckAnswerAction, ReviseAnswerAction)):
        raise ParseError("wrong_constructor", f"{type(node).__name__} is not an action", t.pos)
    return node


def parse_action_list(text: str) -> list[Action]:
    """Parse a full ``[ action, action, ... ]`` block (a PAST_ACTIONS value)."""
    p = _Parser(tokenize(text))
    p.skip_comments()
    items = p.parse_list(0)
    out: list[Action] = []
    for item in items:
        if isinstance(item, _Wrapper):
            item = _unwrap(item, StepKind.DECISION)
        if not isinstance(item, (SearchAction, SelectLinkAction, TerminateAction, AnswerAction,
                                 CheckAnswerAction, ReviseAnswerAction)):
            raise ParseError("bad_value", f"{type(item).__name__} is not an action", 0)
        out.append(item)
    return out


_VERDICT_LINE_RE = re.compile(r"=\s*(True|False)\b")
_BARE_VERDICT_RE = re.compile(r"^\s*(True|False)\b")


def parse_autoeval_verdict(completion: str) -> bool:
    """Extract the boolean judge verdict from an auto-eval completion.

    Handles both continuation-style completions (the prompt ended at the
    ``Check_Answer(...) =`` cue, so the completion starts with the boolean)
    and completions that echo the full assignment line.
    """
    for line in completion.splitlines() or [completion]:
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        code = stripped.split("#", 1)[0]
        m = _VERDICT_LINE_RE.search(code)
        if m:
            return m.group(1) == "True"
        m = _BARE_VERDICT_RE.match(code)
        if m:
            return m.group(1) == "True"
    raise VerdictParseError(f"no boolean verdict found in completion {completion[:80]!r}")
