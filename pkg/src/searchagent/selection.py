"""Choosing one sample per step: on-policy minimum perplexity, and the
off-policy zero-shot ranking pass used while building fine-tuning mixtures."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .backends.base import DEFAULT_STOP
from .codec.grammar import parse_completion
from .codec.templates import TemplateLibrary, default_library
from .errors import AllUnparseable, ParseError, RankParseError
from .types import (
    SampleResult,
    SelectLinkAction,
    SelectionMethod,
    SearchQueryRecord,
    StepRecord,
)

ParseOk = Callable[[int], bool] | Sequence[bool]


def _ok_fn(parse_ok: ParseOk) -> Callable[[int], bool]:
    if callable(parse_ok):
        return parse_ok
    flags = list(parse_ok)
    return lambda i: flags[i]


def select_min_perplexity(samples: Sequence[SampleResult], parse_ok: ParseOk) -> int:
    """Index (0-based) of the lowest-perplexity sample that parses; ties go
    to the lowest index."""
    if not samples:
        raise ValueError("at least one sample is required")
    ok = _ok_fn(parse_ok)
    best: int | None = None
    for i, s in enumerate(samples):
        if not ok(i):
            continue
        if best is None or s.perplexity < samples[best].perplexity:
            best = i
    if best is None:
        raise AllUnparseable("no sample parsed")
    return best


@dataclass(frozen=True)
class RankVerdict:
    best_index: int  # 1-based, as written in the completion
    ranking: tuple[int, ...]  # 1-based, best first, deduplicated
    explanation: str = ""


def render_rank_prompt(
    inputs: str, sample_texts: Sequence[str], library: TemplateLibrary | None = None
) -> str:
    """Fill the ranking prompt; the template contracts to ``len(sample_texts)``
    output sections rather than padding."""
    library = library or default_library()
    if len(sample_texts) < 2:
        raise ValueError("ranking needs at least 2 samples")
    return library.rank.render(inputs, list(sample_texts))


_ANSWER_LINE_RE = re.compile(r"^\s*Answer:\s*#?(\d+)\s*$", re.M)
_RANKING_LINE_RE = re.compile(r"^\s*Ranking:\s*(.+)$", re.M)
_EXPLANATION_LINE_RE = re.compile(r"^\s*Explanation:\s*(.*)$", re.M)
_RANK_ITEM_RE = re.compile(r"#?(\d+)")


def parse_rank_verdict(completion: str, n: int) -> RankVerdict:
    m = _ANSWER_LINE_RE.search(completion)
    if not m:
        raise RankParseError(f"no 'Answer: #X' line in {completion[:80]!r}")
    best = int(m.group(1))
    if not 1 <= best <= n:
        raise RankParseError(f"Answer index #{best} out of range 1..{n}")
    ranking: list[int] = [best]
    rm = _RANKING_LINE_RE.search(completion)
    if rm:
        for item in _RANK_ITEM_RE.findall(rm.group(1)):
            idx = int(item)
            if 1 <= idx <= n and idx not in ranking:
                ranking.append(idx)
    em = _EXPLANATION_LINE_RE.search(completion)
    return RankVerdict(
        best_index=best,
        ranking=tuple(ranking),
        explanation=em.group(1).strip() if em else "",
    )


def resolve_select_link(action: SelectLinkAction, record: SearchQueryRecord | None) -> SelectLinkAction:
    """Materialize ``selected_links`` from ids against the step's results."""
    if record is None:
        return action
    by_id = {r.link_id: r for r in record.results}
    links = tuple(by_id[i] for i in action.selected_link_ids if i in by_id)
    if len(links) != len(action.selected_link_ids):
        missing = [i for i in action.selected_link_ids if i not in by_id]
        raise ValueError(f"selected link ids {missing} not present in the search results")
    return SelectLinkAction(
        grounded_summarization=action.grounded_summarization,
        thoughts=action.thoughts,
        selected_link_ids=action.selected_link_ids,
        selected_links=links,
    )


def rerank_step(step: StepRecord, rm, library: TemplateLibrary | None = None) -> StepRecord:
    """Off-policy re-selection of a step's sample via the ranking prompt.

    Returns an updated copy; the step's recorded prompt and samples are
    untouched, so running this twice lands on the same choice. Any ranking
    failure (unusable verdict, more samples than template slots, nothing
    parseable in the ranking) falls back to the original min-perplexity
    choice with ``rm_fallback`` set.
    """
    library = library or default_library()
    updated = step.copy()
    parseable = step.parseable_indices()
    if len(parseable) < 2:
        return updated
    try:
        prompt = render_rank_prompt(step.prompt, [s.text for s in step.samples], library)
    except ValueError:
        updated.rm_fallback = True
        return updated
    raw = rm.sample(prompt, 1, 0.0, list(DEFAULT_STOP))[0].text
    updated.rm_raw = raw
    try:
        verdict = parse_rank_verdict(raw, len(step.samples))
    except RankParseError:
        updated.rm_fallback = True
        return updated
    updated.rm_best_index = verdict.best_index
    for one_based in verdict.ranking:
        idx = one_based - 1
        if updated.sample_ok[idx]:
            updated.selected_index = idx
            updated.selection_method = SelectionMethod.RM_RANKED
            updated.action = _reparse_action(updated, idx)
            return updated
    updated.rm_fallback = True
    return updated


def _reparse_action(step: StepRecord, idx: int):
    try:
        action = parse_completion(step.kind, step.samples[idx].text).action
    except ParseError as exc:  # sample_ok guaranteed it parses at run time
        raise AllUnparseable(f"recorded-parseable sample no longer parses: {exc}") from exc
    if isinstance(action, SelectLinkAction):
        action = resolve_select_link(action, step.search)
    return action
