"""Turning trajectory logs into fine-tuning mixtures.

Each completed trajectory contributes one (input, target) example per
reasoning step. Optional passes: off-policy re-selection of the target via
the ranking model, named example-level filters, a per-question repeat cap
(the 1x/2x/4x ablation axis) and exact-duplicate collapsing. A manifest
with counts and a content hash is written next to the mixture so any later
reader can verify it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from ..codec.canonical import fine_tune_target
from ..codec.grammar import parse_completion
from ..errors import (
    EmptyMixtureError,
    EvalOnlyDatasetError,
    IntegrityError,
    ParseError,
)
from ..logio import canonical_dumps, sha256_file
from ..selection import rerank_step
from ..types import (
    EVAL_ONLY_SOURCES,
    StepKind,
    Trajectory,
)

#: Examples-per-trajectory observed in the reference production run that this
#: pipeline mirrors (17970 examples over 2000 trajectories); reported in the
#: manifest purely for comparison.
REFERENCE_EXAMPLES_PER_TRAJECTORY = 17970 / 2000


@dataclass(frozen=True)
class FineTuneExample:
    input_text: str
    target_text: str
    step_kind: str
    trajectory_id: str
    question_id: str
    generation: int
    selection_method: str
    multiplicity: int = 1

    def to_dict(self) -> dict:
        d = {
            "input_text": self.input_text,
            "target_text": self.target_text,
            "step_kind": self.step_kind,
            "trajectory_id": self.trajectory_id,
            "question_id": self.question_id,
            "generation": self.generation,
            "selection_method": self.selection_method,
        }
        if self.multiplicity != 1:
            d["multiplicity"] = self.multiplicity
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FineTuneExample":
        return cls(
            input_text=d["input_text"],
            target_text=d["target_text"],
            step_kind=d["step_kind"],
            trajectory_id=d["trajectory_id"],
            question_id=d["question_id"],
            generation=d.get("generation", 0),
            selection_method=d.get("selection_method", "min_perplexity"),
            multiplicity=d.get("multiplicity", 1),
        )


@dataclass
class MixtureManifest:
    total_trajectories: int
    total_examples: int
    per_step_counts: dict[str, int]
    repeats_per_question: int
    filter_stats: dict[str, int]
    content_hash: str
    examples_per_trajectory: float = 0.0
    reference_examples_per_trajectory: float = REFERENCE_EXAMPLES_PER_TRAJECTORY
    skipped_failed_trajectories: int = 0
    skipped_unreadable_records: int = 0
    schema_version: int = 1

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "total_trajectories": self.total_trajectories,
            "total_examples": self.total_examples,
            "per_step_counts": dict(sorted(self.per_step_counts.items())),
            "repeats_per_question": self.repeats_per_question,
            "filter_stats": dict(sorted(self.filter_stats.items())),
            "content_hash": self.content_hash,
            "examples_per_trajectory": self.examples_per_trajectory,
            "reference_examples_per_trajectory": self.reference_examples_per_trajectory,
            "skipped_failed_trajectories": self.skipped_failed_trajectories,
            "skipped_unreadable_records": self.skipped_unreadable_records,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureManifest":
        return cls(
            total_trajectories=d["total_trajectories"],
            total_examples=d["total_examples"],
            per_step_counts=dict(d["per_step_counts"]),
            repeats_per_question=d["repeats_per_question"],
            filter_stats=dict(d.get("filter_stats", {})),
            content_hash=d["content_hash"],
            examples_per_trajectory=d.get("examples_per_trajectory", 0.0),
            reference_examples_per_trajectory=d.get(
                "reference_examples_per_trajectory", REFERENCE_EXAMPLES_PER_TRAJECTORY
            ),
            skipped_failed_trajectories=d.get("skipped_failed_trajectories", 0),
            skipped_unreadable_records=d.get("skipped_unreadable_records", 0),
        )


def manifest_path(mixture_path: Path | str) -> Path:
    mixture_path = Path(mixture_path)
    return mixture_path.with_name(mixture_path.name + ".manifest.json")


# --- Filters --------------------------------------------------------------

FilterFn = Callable[[FineTuneExample], bool]  # True = drop the example

_RESULT_ITEM_ID_RE = re.compile(r"ResultItem\(link_id=(\d+)")


def _target_parse(example: FineTuneExample):
    return parse_completion(StepKind(example.step_kind), example.target_text)


def filter_empty_thoughts(example: FineTuneExample) -> bool:
    try:
        parsed = _target_parse(example)
    except ParseError:
        return True
    return any(f.startswith("empty_") for f in parsed.flags)


def filter_parse_failure(example: FineTuneExample) -> bool:
    try:
        _target_parse(example)
    except ParseError:
        return True
    return False


def filter_citation_closure(example: FineTuneExample) -> bool:
    from ..agent import cited_link_ids

    try:
        parsed = _target_parse(example)
    except ParseError:
        return True
    action = parsed.action
    texts = []
    for attr in ("grounded_summarization", "answer_text", "revised_answer"):
        value = getattr(action, attr, None)
        if value:
            texts.append(value)
    cited: set[int] = set()
    for t in texts:
        cited |= cited_link_ids(t)
    available = {int(x) for x in _RESULT_ITEM_ID_RE.findall(example.input_text)}
    available |= {int(x) for x in _RESULT_ITEM_ID_RE.findall(example.target_text)}
    return not cited <= available


FILTERS: dict[str, FilterFn] = {
    "empty-thoughts": filter_empty_thoughts,
    "parse-failure": filter_parse_failure,
    "citation-closure": filter_citation_closure,
}


def resolve_filters(names: Iterable[str | FilterFn]) -> list[tuple[str, FilterFn]]:
    out: list[tuple[str, FilterFn]] = []
    for item in names:
        if callable(item):
            out.append((getattr(item, "__name__", "custom"), item))
        elif item in FILTERS:
            out.append((item, FILTERS[item]))
        else:
            raise ValueError(f"unknown filter {item!r}; known: {sorted(FILTERS)}")
    return out


# --- improve / stats ------------------------------------------------------

@dataclass
class _LogIndex:
    offsets: list[int] = field(default_factory=list)
    keys: list[tuple[str, int]] = field(default_factory=list)  # (question_id, repeat)
    failed: int = 0
    unreadable: int = 0


def _index_log(log_path: Path, repeats_cap: int | None) -> tuple[_LogIndex, list[int]]:
    """First pass: byte offsets of completed records, capped per question."""
    index = _LogIndex()
    sources: set[str] = set()
    with open(log_path, "rb") as f:
        offset = f.tell()
        for raw in iter(f.readline, b""):
            line_offset = offset
            offset = f.tell()
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
                status = record["status"]
                qid = record["question"]["id"]
                repeat = record.get("repeat_index", 0)
                sources.add(record["question"].get("source", "custom"))
            except (json.JSONDecodeError, KeyError, TypeError):
                index.unreadable += 1
                continue
            if status != "completed":
                index.failed += 1
                continue
            index.offsets.append(line_offset)
            index.keys.append((qid, repeat))
    eval_only = sources & {s.value for s in EVAL_ONLY_SOURCES}
    if eval_only:
        raise EvalOnlyDatasetError(
            f"log contains trajectories from eval-only dataset(s) {sorted(eval_only)}; "
            "these must never feed a fine-tuning mixture"
        )
    per_question: dict[str, int] = {}
    kept: list[int] = []
    order = sorted(range(len(index.offsets)), key=lambda i: index.keys[i])
    for i in order:
        qid, _ = index.keys[i]
        n = per_question.get(qid, 0)
        if repeats_cap is not None and n >= repeats_cap:
            continue
        per_question[qid] = n + 1
        kept.append(i)
    return index, kept


def improve(
    log_path: Path | str,
    out_path: Path | str,
    *,
    rerank: bool = False,
    rm=None,
    templates=None,
    filters: Iterable[str | FilterFn] = (),
    repeats_cap: int | None = None,
    dedup: bool = False,
    generation: int | None = None,
) -> MixtureManifest:
    log_path = Path(log_path)
    out_path = Path(out_path)
    if rerank and rm is None:
        raise ValueError("rerank=True requires a ranking backend")
    if repeats_cap is not None and repeats_cap < 1:
        raise ValueError("repeats_cap must be >= 1")
    active_filters = resolve_filters(filters)

    index, kept = _index_log(log_path, repeats_cap)
    filter_stats = {name: 0 for name, _ in active_filters}
    per_step: dict[str, int] = {}
    per_question_repeats: dict[str, int] = {}
    examples: list[FineTuneExample] = []

    with open(log_path, "rb") as f:
        for i in kept:
            f.seek(index.offsets[i])
            record = json.loads(f.readline())
            traj = Trajectory.from_dict(record)
            qid, repeat = index.keys[i]
            per_question_repeats[qid] = per_question_repeats.get(qid, 0) + 1
            gen = generation if generation is not None else traj.generation
            for step in traj.steps:
                if rerank and len(step.parseable_indices()) >= 2:
                    step = rerank_step(step, rm, templates)
                example = FineTuneExample(
                    input_text=step.prompt,
                    target_text=fine_tune_target(step.action),
                    step_kind=step.kind.value,
                    trajectory_id=traj.trajectory_id,
                    question_id=qid,
                    generation=gen,
                    selection_method=step.selection_method.value,
                )
                dropped = False
                for name, fn in active_filters:
                    if fn(example):
                        filter_stats[name] += 1
                        dropped = True
                        break
                if dropped:
                    continue
                examples.append(example)

    if dedup:
        merged: dict[tuple[str, str], FineTuneExample] = {}
        order: list[tuple[str, str]] = []
        for ex in examples:
            key = (ex.input_text, ex.target_text)
            if key in merged:
                prev = merged[key]
                merged[key] = FineTuneExample(**{**prev.__dict__, "multiplicity": prev.multiplicity + 1})
            else:
                merged[key] = ex
                order.append(key)
        examples = [merged[k] for k in order]

    if not examples:
        raise EmptyMixtureError(
            f"no examples survived (kept {len(kept)} trajectories, filters removed "
            f"{sum(filter_stats.values())})"
        )

    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(canonical_dumps(ex.to_dict()) + "\n")
            per_step[ex.step_kind] = per_step.get(ex.step_kind, 0) + 1

    total_trajectories = len(kept)
    manifest = MixtureManifest(
        total_trajectories=total_trajectories,
        total_examples=len(examples),
        per_step_counts=per_step,
        repeats_per_question=max(per_question_repeats.values(), default=0),
        filter_stats=filter_stats,
        content_hash=sha256_file(out_path),
        examples_per_trajectory=(len(examples) / total_trajectories) if total_trajectories else 0.0,
        skipped_failed_trajectories=index.failed,
        skipped_unreadable_records=index.unreadable,
    )
    manifest_path(out_path).write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def mixture_stats(mixture_path: Path | str) -> MixtureManifest:
    """Recount a mixture file and verify it against its stored manifest."""
    mixture_path = Path(mixture_path)
    if not mixture_path.exists():
        raise EmptyMixtureError(f"mixture file {mixture_path} does not exist")
    stored_path = manifest_path(mixture_path)
    if not stored_path.exists():
        raise IntegrityError(f"no manifest next to {mixture_path}")
    stored = MixtureManifest.from_dict(json.loads(stored_path.read_text(encoding="utf-8")))

    per_step: dict[str, int] = {}
    trajectories: set[str] = set()
    repeats: dict[str, set[str]] = {}
    total = 0
    with open(mixture_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            ex = FineTuneExample.from_dict(json.loads(line))
            total += 1
            per_step[ex.step_kind] = per_step.get(ex.step_kind, 0) + 1
            trajectories.add(ex.trajectory_id)
            repeats.setdefault(ex.question_id, set()).add(ex.trajectory_id)
    if total == 0:
        raise EmptyMixtureError(f"mixture file {mixture_path} is empty")

    recount = MixtureManifest(
        total_trajectories=len(trajectories),
        total_examples=total,
        per_step_counts=per_step,
        repeats_per_question=max((len(v) for v in repeats.values()), default=0),
        filter_stats=stored.filter_stats,
        content_hash=sha256_file(mixture_path),
        examples_per_trajectory=(total / len(trajectories)) if trajectories else 0.0,
        skipped_failed_trajectories=stored.skipped_failed_trajectories,
        skipped_unreadable_records=stored.skipped_unreadable_records,
    )
    mismatches = []
    if recount.total_examples != stored.total_examples:
        mismatches.append(f"total_examples {recount.total_examples} != {stored.total_examples}")
    if recount.total_trajectories != stored.total_trajectories:
        mismatches.append(
            f"total_trajectories {recount.total_trajectories} != {stored.total_trajectories}"
        )
    if recount.per_step_counts != stored.per_step_counts:
        mismatches.append("per-step counts differ")
    if recount.repeats_per_question != stored.repeats_per_question:
        mismatches.append("repeats_per_question differs")
    if recount.content_hash != stored.content_hash:
        mismatches.append("content hash differs")
    if mismatches:
        raise IntegrityError(f"{mixture_path} disagrees with its manifest: " + "; ".join(mismatches))
    return recount
