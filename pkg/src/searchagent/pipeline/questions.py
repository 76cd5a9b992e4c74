"""Question files and seed-keyed sampling of the grow question set."""

from __future__ import annotations

import random
from pathlib import Path

from ..errors import DatasetLoadError, InsufficientQuestions
from ..logio import read_jsonl
from ..types import Question


def load_questions(path: Path | str) -> list[Question]:
    """Load a JSONL question file ({id, text, source, ref_answer?} per line)."""
    path = Path(path)
    if not path.exists():
        raise DatasetLoadError(f"question file {path} does not exist")
    questions: list[Question] = []
    seen: set[str] = set()
    for lineno, record in enumerate(read_jsonl(path), start=1):
        try:
            q = Question.from_dict(record)
        except (KeyError, ValueError) as exc:
            raise DatasetLoadError(f"{path}:{lineno}: bad question record: {exc}") from exc
        if not q.id:
            raise DatasetLoadError(f"{path}:{lineno}: empty question id")
        if q.id in seen:
            raise DatasetLoadError(f"{path}:{lineno}: duplicate question id {q.id!r}")
        if not q.text.strip():
            raise DatasetLoadError(f"{path}:{lineno}: question {q.id!r} has empty text")
        seen.add(q.id)
        questions.append(q)
    return questions


def sample_question_set(
    dataset_paths: list[Path | str], per_dataset: int, seed: int
) -> list[Question]:
    """Uniform sample without replacement of ``per_dataset`` questions from
    each file; the same seed always selects the same questions."""
    if per_dataset < 0:
        raise ValueError("per_dataset must be >= 0")
    selected: list[Question] = []
    for path in dataset_paths:
        path = Path(path)
        pool = load_questions(path)
        if len(pool) < per_dataset:
            raise InsufficientQuestions(
                f"{path} has {len(pool)} questions, {per_dataset} requested"
            )
        rng = random.Random(f"{seed}:{path.stem}")
        selected.extend(rng.sample(pool, per_dataset))
    return selected
