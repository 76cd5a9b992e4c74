"""Few-shot prompt templates: loading from disk and rendering agent state.

Templates are plain UTF-8 files with ``{{slot}}`` placeholders, wired
together by a ``manifest.json`` that maps each step to a header, a list of
exemplar files and a live-block template, with its declared shot count.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping

from ..errors import ConfigError, RenderError
from ..types import Question, SearchQueryRecord, StepKind, Trajectory
from .canonical import past_actions_block, py_str, search_result_block

SEPARATOR = "#########################"

_SLOT_RE = re.compile(r"\{\{(\w+)\}\}")

#: Template key per agent step kind.
STEP_KEYS: dict[StepKind, str] = {
    StepKind.DECISION: "decision",
    StepKind.SUMMARIZE: "summarize",
    StepKind.ANSWER_GEN: "answer",
    StepKind.RELEVANCE_CHECK: "relevance",
    StepKind.GROUNDING_CHECK: "grounding",
}

AUTOEVAL_KEY = "autoeval"


def _fill(template: str, slots: Mapping[str, str], context: str) -> str:
    def sub(m: re.Match[str]) -> str:
        name = m.group(1)
        if name not in slots:
            raise RenderError(f"missing slot {name!r} while rendering {context}", slot=name)
        return slots[name]

    return _SLOT_RE.sub(sub, template)


@dataclass(frozen=True)
class StepTemplate:
    key: str
    header: str
    exemplars: tuple[str, ...]
    live: str
    shots: int
    tail: str  # "blank": prompt stops before the model's output; "cue": live block ends at the cue

    @property
    def field_order(self) -> list[str]:
        return _SLOT_RE.findall(self.live)

    def render(self, slots: Mapping[str, str]) -> str:
        parts: list[str] = [self.header.rstrip("\n"), "\n\n"]
        for idx, exemplar in enumerate(self.exemplars, start=1):
            parts.append(f"{SEPARATOR}\n# Example {idx}:\n{SEPARATOR}\n\n")
            parts.append(exemplar.strip("\n"))
            parts.append("\n\n")
        parts.append(f"{SEPARATOR}\n# Example {len(self.exemplars) + 1}:\n{SEPARATOR}\n\n")
        live = _fill(self.live.rstrip("\n"), slots, f"{self.key} live block")
        parts.append(live)
        if self.tail == "blank":
            parts.append("\n\n")
        return "".join(parts)


@dataclass(frozen=True)
class RankTemplate:
    header: str
    section: str
    footer: str
    capacity: int = 4

    def render(self, inputs: str, action_texts: list[str]) -> str:
        if len(action_texts) > self.capacity:
            raise ValueError(
                f"{len(action_texts)} samples exceed the {self.capacity}-slot ranking template"
            )
        parts = [_fill(self.header.rstrip("\n"), {"inputs": inputs}, "rank header")]
        for k, text in enumerate(action_texts, start=1):
            parts.append(_fill(self.section.rstrip("\n"), {"k": str(k), "action": text}, "rank section"))
        parts.append(self.footer.rstrip("\n"))
        return "\n\n".join(parts)


class TemplateLibrary:
    def __init__(self, steps: dict[str, StepTemplate], rank: RankTemplate):
        self.steps = steps
        self.rank = rank

    def step(self, key: str) -> StepTemplate:
        try:
            return self.steps[key]
        except KeyError:
            raise ConfigError(f"template library has no step template {key!r}") from None

    @classmethod
    def load(cls, root: Path | str | None = None) -> TemplateLibrary:
        root = Path(root) if root is not None else _packaged_root()
        manifest_path = root / "manifest.json"
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"no template manifest at {manifest_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"template manifest {manifest_path} is not valid JSON: {exc}") from None

        def read(rel: str) -> str:
            return (root / rel).read_text(encoding="utf-8")

        steps: dict[str, StepTemplate] = {}
        for key, entry in manifest["steps"].items():
            exemplars = tuple(read(p) for p in entry["exemplars"])
            shots = entry["shots"]
            if shots != len(exemplars):
                raise ConfigError(
                    f"step {key!r} declares {shots} shots but lists {len(exemplars)} exemplar files"
                )
            steps[key] = StepTemplate(
                key=key,
                header=read(entry["header"]),
                exemplars=exemplars,
                live=read(entry["live"]),
                shots=shots,
                tail=entry.get("tail", "blank"),
            )
        rank_entry = manifest["rank"]
        rank = RankTemplate(
            header=read(rank_entry["header"]),
            section=read(rank_entry["section"]),
            footer=read(rank_entry["footer"]),
            capacity=rank_entry.get("capacity", 4),
        )
        return cls(steps=steps, rank=rank)


def _packaged_root() -> Path:
    return Path(__file__).resolve().parent.parent / "templates"


@lru_cache(maxsize=1)
def default_library() -> TemplateLibrary:
    return TemplateLibrary.load()


def render_prompt(
    library: TemplateLibrary,
    step_kind: StepKind,
    trajectory: Trajectory,
    *,
    search_record: SearchQueryRecord | None = None,
    answer: str | None = None,
) -> str:
    """Render the live prompt for one reasoning step of ``trajectory``."""
    key = STEP_KEYS.get(step_kind)
    if key is None:
        raise RenderError(f"{step_kind} is not a renderable reasoning step")
    slots: dict[str, str] = {
        "question": py_str(trajectory.question.text),
        "past_actions": past_actions_block(trajectory.past_actions),
    }
    if step_kind == StepKind.DECISION:
        slots["remaining_searches"] = str(trajectory.remaining_searches)
    if step_kind == StepKind.SUMMARIZE:
        if search_record is None:
            raise RenderError("summarize step needs the current search results", slot="current_search_results")
        slots["current_search_results"] = search_result_block(search_record)
    if step_kind in (StepKind.RELEVANCE_CHECK, StepKind.GROUNDING_CHECK):
        if answer is None:
            raise RenderError(f"{key} step needs the answer under check", slot="answer")
        slots["answer"] = py_str(answer)
    return library.step(key).render(slots)


def render_autoeval_prompt(
    library: TemplateLibrary, question: Question | str, answer: str, ref_answer: str
) -> str:
    """Render the judge prompt; it ends at the ``Check_Answer(...) =`` cue."""
    text = question.text if isinstance(question, Question) else question
    slots = {
        "question": py_str(text),
        "answer": py_str(answer),
        "ref_answer": py_str(ref_answer),
    }
    return library.step(AUTOEVAL_KEY).render(slots)
