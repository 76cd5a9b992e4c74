"""Deterministic offline backends.

``ScriptedLLM`` replays an explicit list of canned samples in order.
``SimulatedAgentLLM``/``SimulatedSearch`` are pure functions of the prompt
(plus a seed), so they are safe to share across concurrent trajectories and
behave like a competent agent: they emit well-formed step outputs, ranking
verdicts and judge verdicts. The whole pipeline can run against them with
no network at all.
"""

from __future__ import annotations

import math
import random
import re
import threading
from typing import Sequence

from ..codec.canonical import py_str
from ..codec.grammar import tokenize
from ..errors import FixtureMiss, ParseError, ScriptExhausted
from ..logio import stable_hash_int
from ..types import ResultItem, SampleResult, SearchQueryRecord
from .base import (
    EPOCH_TIMESTAMP,
    LinkIdAllocator,
    check_sample_args,
    check_search_args,
)


def canned(text: str, perplexity: float = 1.5, token_count: int = 16) -> SampleResult:
    """Build a scripted sample whose fields are consistent with ``perplexity``."""
    return SampleResult(
        text=text,
        token_count=token_count,
        sum_log_prob=-math.log(perplexity) * token_count,
        perplexity=perplexity,
    )


class ScriptedLLM:
    """Serves pre-loaded samples in order; running out is an error, never a cycle."""

    def __init__(self, samples: Sequence[SampleResult]):
        self._queue = list(samples)
        self._pos = 0
        self._lock = threading.Lock()

    @property
    def remaining(self) -> int:
        return len(self._queue) - self._pos

    def sample(self, prompt: str, n: int, temperature: float, stop: Sequence[str]) -> list[SampleResult]:
        check_sample_args(prompt, n, temperature)
        with self._lock:
            if self.remaining < n:
                raise ScriptExhausted(
                    f"script has {self.remaining} samples left but {n} were requested"
                )
            out = self._queue[self._pos : self._pos + n]
            self._pos += n
        return out


class StaticSearch:
    """Search backend over a fixed query -> [(title, snippet), ...] mapping."""

    def __init__(
        self,
        mapping: dict[str, list[tuple[str, str]]],
        provider: str = "static",
        normalized_fallback: bool = True,
    ):
        self._mapping = dict(mapping)
        self._normalized = {_normalize_query(q): v for q, v in mapping.items()}
        self.provider = provider
        self.normalized_fallback = normalized_fallback

    def search(self, query: str, top_k: int, allocator: LinkIdAllocator) -> SearchQueryRecord:
        check_search_args(query, top_k)
        entries = self._mapping.get(query)
        if entries is None and self.normalized_fallback:
            entries = self._normalized.get(_normalize_query(query))
        if entries is None:
            raise FixtureMiss(f"no fixture entry for query {query!r}", key=query)
        entries = entries[:top_k]
        ids = allocator.take(len(entries))
        results = tuple(
            ResultItem(link_id=i, link_text=title, snippet=snippet)
            for i, (title, snippet) in zip(ids, entries)
        )
        return SearchQueryRecord(
            query=query, results=results, provider=self.provider, retrieved_at=EPOCH_TIMESTAMP
        )


def _normalize_query(q: str) -> str:
    return " ".join(q.casefold().split())


# --- Prompt introspection for the simulated model -------------------------

_SEP_TAIL = "#########################\n\n"
_QUESTION_RE = re.compile(r"^ORIGINAL_QUESTION: str = (.+)$", re.M)
_REMAINING_RE = re.compile(r"^REMAINING_SEARCHES: int = (\d+)$", re.M)
_ANSWER_RE = re.compile(r"^ANSWER: str = (.+)$", re.M)
_REF_RE = re.compile(r"^REF_ANSWER: str = (.+)$", re.M)
_LINK_ID_RE = re.compile(r"link_id=(\d+)")
_SEARCH_LINE_RE = re.compile(r"^Search\(query=", re.M)
_RM_SECTION_RE = re.compile(r"\*\*\* Model Output #(\d+):")
_PAST_RE = re.compile(r"^PAST_ACTIONS: List\[Action\] = (\[.*?^\]$)", re.M | re.S)
_CURRENT_RE = re.compile(r"^CURRENT_SEARCH_RESULTS = (.*?)\nORIGINAL_QUESTION", re.M | re.S)


def _str_literal(text: str) -> str:
    toks = tokenize(text.strip())
    if not toks or toks[0].type != "str":
        raise ParseError("bad_value", f"expected a string literal, got {text[:40]!r}")
    return toks[0].value


def live_block(prompt: str) -> str:
    return prompt.rsplit(_SEP_TAIL, 1)[-1]


class SimulatedAgentLLM:
    """A deterministic gap-filler for a real model.

    Routes on the prompt shape (decision / summarize / answer / self-check /
    judge / ranking) and emits plausible, always-parseable completions. The
    per-question search plan is derived from ``seed`` so batch-level tests
    can recompute exactly what every trajectory should have done.
    """

    def __init__(self, seed: int = 0, max_plan_searches: int = 13):
        self.seed = seed
        self.max_plan_searches = max_plan_searches

    # number of searches this simulated agent wants for a question
    def plan_target(self, question_text: str) -> int:
        return stable_hash_int(self.seed, "plan", question_text) % (self.max_plan_searches + 1)

    def fact_token(self, question_text: str) -> str:
        return f"fact-{stable_hash_int(self.seed, 'fact', question_text) % 9973}"

    def sample(self, prompt: str, n: int, temperature: float, stop: Sequence[str]) -> list[SampleResult]:
        check_sample_args(prompt, n, temperature)
        if prompt.startswith('"""Rater Instructions:'):
            texts = [self._rank(prompt)] * n
        else:
            block = live_block(prompt)
            if _REF_RE.search(block):
                texts = [self._judge(block)] * n
            elif _REMAINING_RE.search(block):
                texts = self._decide(block, n)
            elif "CURRENT_SEARCH_RESULTS" in block:
                texts = self._summarize(block, n)
            elif _ANSWER_RE.search(block):
                texts = self._check(block, n)
            else:
                texts = self._answer(block, n)
        return [self._wrap(prompt, i, t) for i, t in enumerate(texts)]

    def _wrap(self, prompt: str, i: int, text: str) -> SampleResult:
        h = stable_hash_int(self.seed, "tok", prompt, i)
        token_count = 8 + h % 56
        sum_log_prob = -(0.05 + (stable_hash_int(self.seed, "ppl", prompt, i) % 1000) / 400.0) * token_count
        return SampleResult.make(text=text, token_count=token_count, sum_log_prob=sum_log_prob)

    def _question(self, block: str) -> str:
        m = _QUESTION_RE.search(block)
        if not m:
            raise ParseError("bad_value", "prompt has no ORIGINAL_QUESTION line")
        return _str_literal(m.group(1))

    def _past_block(self, block: str) -> str:
        m = _PAST_RE.search(block)
        return m.group(1) if m else "[\n]"

    def _variant(self, thoughts: str, i: int) -> str:
        return thoughts if i == 0 else f"{thoughts} (alternative {i})"

    def _decide(self, block: str, n: int) -> list[str]:
        question = self._question(block)
        done = len(_SEARCH_LINE_RE.findall(self._past_block(block)))
        target = self.plan_target(question)
        out = []
        for i in range(n):
            if done < target:
                head = " ".join(question.split()[:6]).rstrip("?")
                query = f"{head} step {done + 1}"
                thoughts = self._variant(f"We still need more evidence; running search {done + 1}.", i)
                out.append(
                    f"ACTION_SELECTED = ActionWrapper(thoughts={py_str(thoughts, quote=chr(34))}, "
                    f"action=Search(query={py_str(query)}))  # [END]"
                )
            else:
                thoughts = self._variant("We have enough information to answer.", i)
                out.append(
                    f"ACTION_SELECTED = ActionWrapper(thoughts={py_str(thoughts, quote=chr(34))}, "
                    f"action=Terminate())  # [END]"
                )
        return out

    def _summarize(self, block: str, n: int) -> list[str]:
        question = self._question(block)
        m = _CURRENT_RE.search(block)
        ids = [int(x) for x in _LINK_ID_RE.findall(m.group(1))] if m else []
        h = stable_hash_int(self.seed, "select", question, ids)
        take = h % (len(ids) + 1) if ids else 0
        chosen = ids[:take]
        out = []
        for i in range(n):
            if chosen:
                cites = " and ".join(f"[link_id={c}]" for c in chosen)
                summ = f"According to {cites}, {self.fact_token(question)} is established."
                thoughts = self._variant("The selected snippets carry the needed fact.", i)
            else:
                summ = "Nothing is selected."
                thoughts = self._variant("None of the snippets help; we should rephrase.", i)
            id_list = ", ".join(str(c) for c in chosen)
            out.append(
                f"ACTION_SELECTED: LinkSelection = LinkSelection(grounded_summarization={py_str(summ)}, "
                f"thoughts={py_str(thoughts, quote=chr(34))}, selected_link_ids=[{id_list}])  # [END]"
            )
        return out

    def _answer(self, block: str, n: int) -> list[str]:
        question = self._question(block)
        seen = sorted({int(x) for x in _LINK_ID_RE.findall(self._past_block(block))})
        cited = seen[: min(3, len(seen))]
        fact = self.fact_token(question)
        if cited:
            cites = ", ".join(str(c) for c in cited)
            answer = f"According to [link_id={cites}], the answer is {fact}."
        else:
            answer = f"No sources were selected, but the best available answer is {fact}."
        out = []
        for i in range(n):
            thoughts = self._variant("Compose the final answer from the selected snippets.", i)
            out.append(
                f"ACTION_SELECTED: Answer = Answer(thoughts={py_str(thoughts, quote=chr(34))}, "
                f"answer={py_str(answer, quote=chr(34))})  # [END]"
            )
        return out

    def _check(self, block: str, n: int) -> list[str]:
        question = self._question(block)
        answers = _ANSWER_RE.findall(block)
        answer = _str_literal(answers[-1]) if answers else ""
        mode = stable_hash_int(self.seed, "check", question, answer) % 4
        out = []
        for i in range(n):
            if mode >= 2:
                out.append(
                    "# The answer addresses the question and matches the selected snippets.\n"
                    "ACTION_SELECTED: Command = Check_Answer(passed=True)  # [END]"
                )
            elif mode == 1:
                revised = answer + " (checked and revised)"
                out.append(
                    "ACTION_SELECTED: Command = Check_Answer(passed=False)\n"
                    "# The answer needs a small correction against the snippets.\n"
                    f"ACTION_SELECTED: Command = Revise_Answer(revised_answer={py_str(revised)})  # [END]"
                )
            else:
                revised = answer + " (revised)"
                out.append(
                    "# The phrasing can be tightened while keeping the citations.\n"
                    f"ACTION_SELECTED: Command = Revise_Answer(revised_answer={py_str(revised)})  # [END]"
                )
        return out

    def _judge(self, block: str) -> str:
        answers = _ANSWER_RE.findall(block)
        refs = _REF_RE.findall(block)
        answer = _str_literal(answers[-1]) if answers else ""
        ref = _str_literal(refs[-1]) if refs else ""
        verdict = _tokens(ref) <= _tokens(answer) and bool(ref.strip())
        return f"{verdict}  # [END]"

    def _rank(self, prompt: str) -> str:
        sections = _RM_SECTION_RE.findall(prompt)
        count = len(sections)
        if count == 0:
            return "Explanation: nothing to rank.\nAnswer: #1\nRanking: #1"
        rng = random.Random(stable_hash_int(self.seed, "rank", prompt))
        order = list(range(1, count + 1))
        rng.shuffle(order)
        best = order[0]
        ranking = " > ".join(f"#{k}" for k in order)
        return (
            f"Explanation: output #{best} is the most grounded and complete.\n"
            f"Answer: #{best}\n"
            f"Ranking: {ranking}"
        )


def _tokens(text: str) -> set[str]:
    return set(re.findall(r"[a-z0-9][a-z0-9\-]*", text.lower()))


class SimulatedSearch:
    """Deterministic fake search; result count varies with the query hash."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def search(self, query: str, top_k: int, allocator: LinkIdAllocator) -> SearchQueryRecord:
        check_search_args(query, top_k)
        h = stable_hash_int(self.seed, "results", query)
        count = 1 + h % top_k
        ids = allocator.take(count)
        head = " ".join(query.split()[:8])
        results = tuple(
            ResultItem(
                link_id=i,
                link_text=f"Source {j + 1} on {head}",
                snippet=(
                    f"Reference text {stable_hash_int(self.seed, 'snippet', query, j) % 9973} "
                    f"covering {head}."
                ),
            )
            for j, i in enumerate(ids)
        )
        return SearchQueryRecord(
            query=query, results=results, provider="simulated", retrieved_at=EPOCH_TIMESTAMP
        )
