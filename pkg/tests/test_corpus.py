"""The checked-in prompt corpus must parse to the expected action kinds and
canonicalize byte-stably."""

from __future__ import annotations

import json
import re
from pathlib import Path

import pytest

from searchagent.codec.canonical import canonicalize
from searchagent.codec.grammar import parse_action_list, parse_autoeval_verdict, parse_completion
from searchagent.types import StepKind

CORPUS = Path(__file__).parent / "data" / "corpus"
INDEX = json.loads((CORPUS / "index.json").read_text(encoding="utf-8"))

_PAST_RE = re.compile(r"^PAST_ACTIONS: List\[Action\] = (\[.*?^\]$)", re.M | re.S)


def split_output(text: str) -> str:
    """The output section: the final cue line plus its leading comments."""
    lines = text.rstrip("\n").split("\n")
    cue = None
    for i, line in enumerate(lines):
        if line.startswith("ACTION_SELECTED") or line.startswith("Check_Answer(ORIGINAL_QUESTION"):
            cue = i
    assert cue is not None, "corpus entry has no output line"
    start = cue
    while start > 0 and lines[start - 1].startswith("#"):
        start -= 1
    return "\n".join(lines[start:])


def entries(step_filter=None):
    for entry in INDEX["entries"]:
        if step_filter is None or (entry["step"] == "autoeval") == (step_filter == "autoeval"):
            yield entry


@pytest.mark.parametrize("entry", [e for e in INDEX["entries"] if e["step"] != "autoeval"],
                         ids=lambda e: e["file"])
def test_output_block_parses_to_expected_kind(entry):
    text = (CORPUS / entry["file"]).read_text(encoding="utf-8")
    output = split_output(text)
    pc = parse_completion(StepKind(entry["step"]), output)
    assert pc.action.kind == entry["expected_output"]
    assert pc.terminated


@pytest.mark.parametrize("entry", [e for e in INDEX["entries"] if e["step"] != "autoeval"],
                         ids=lambda e: e["file"])
def test_past_actions_parse_to_expected_kinds(entry):
    text = (CORPUS / entry["file"]).read_text(encoding="utf-8")
    m = _PAST_RE.search(text)
    assert m, f"{entry['file']} has no PAST_ACTIONS block"
    actions = parse_action_list(m.group(1))
    assert [a.kind for a in actions] == entry["expected_past"]


@pytest.mark.parametrize("entry", [e for e in INDEX["entries"] if e["step"] != "autoeval"],
                         ids=lambda e: e["file"])
def test_canonicalization_is_byte_stable(entry):
    text = (CORPUS / entry["file"]).read_text(encoding="utf-8")
    step = StepKind(entry["step"])
    blocks = [("output", split_output(text))]
    m = _PAST_RE.search(text)
    parsed = [(name, parse_completion(step, block).action) for name, block in blocks]
    parsed += [(f"past[{i}]", a) for i, a in enumerate(parse_action_list(m.group(1)))]
    for name, action in parsed:
        first = canonicalize(action)
        again = parse_completion(StepKind(STEP_OF[action.kind]), first).action
        assert again == action, f"{entry['file']} {name} round-trip changed the action"
        assert canonicalize(again) == first, f"{entry['file']} {name} canonical form unstable"


STEP_OF = {
    "search": "decision",
    "terminate": "decision",
    "select_link": "summarize",
    "answer": "answer_gen",
    "check_answer": "relevance_check",
    "revise_answer": "grounding_check",
}


@pytest.mark.parametrize("entry", [e for e in INDEX["entries"] if e["step"] == "autoeval"],
                         ids=lambda e: e["file"])
def test_autoeval_blocks_yield_expected_verdicts(entry):
    text = (CORPUS / entry["file"]).read_text(encoding="utf-8")
    assert parse_autoeval_verdict(split_output(text)) is entry["expected_verdict"]
