"""Batch trajectory collection over a question set (the data-growing stage)."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from ..agent import run_trajectory
from ..codec.templates import TemplateLibrary
from ..logio import canonical_dumps, read_jsonl, stable_hash_int
from ..types import AgentConfig, Question, Status, Trajectory

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GrowResult:
    log_path: Path
    total: int
    completed: int
    failed: int
    skipped: int  # already present from a previous interrupted run


def trajectory_seed(run_seed: int, question_id: str, repeat_index: int) -> int:
    return stable_hash_int(run_seed, question_id, repeat_index)


def grow(
    questions: list[Question],
    repeats: int,
    config: AgentConfig,
    llm,
    search,
    *,
    out_path: Path | str,
    run_seed: int = 0,
    parallelism: int = 1,
    generation: int = 0,
    templates: TemplateLibrary | None = None,
) -> GrowResult:
    """Run ``len(questions) * repeats`` trajectories and append them to a
    JSONL log. Per-trajectory failures are recorded, never raised; the log is
    written in job order so an interrupted run resumes (and byte-matches an
    uninterrupted one) by skipping trajectory ids already present."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    config.validate()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    done_ids: set[str] = set()
    if out_path.exists():
        for record in read_jsonl(out_path):
            done_ids.add(record["trajectory_id"])

    jobs = [
        (q, r)
        for q in questions
        for r in range(repeats)
        if f"{q.id}#{r}" not in done_ids
    ]
    skipped = len(questions) * repeats - len(jobs)

    def run_one(q: Question, r: int) -> Trajectory:
        seed = trajectory_seed(run_seed, q.id, r)
        try:
            return run_trajectory(
                q, config, llm, search,
                templates=templates, rng_seed=seed, repeat_index=r, generation=generation,
            )
        except Exception as exc:  # per-trajectory failures never abort the batch
            logger.warning("trajectory %s#%s failed: %s", q.id, r, exc)
            traj = Trajectory(
                question=q, rng_seed=seed, trajectory_id=f"{q.id}#{r}",
                repeat_index=r, generation=generation,
                remaining_searches=config.max_searches,
            )
            traj.status = Status.FAILED
            traj.failure_reason = f"internal_error: {exc}"
            return traj

    completed = failed = 0
    with open(out_path, "a", encoding="utf-8") as log:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(run_one, q, r) for q, r in jobs]
            for future in futures:
                traj = future.result()
                log.write(canonical_dumps(traj.to_dict(config)) + "\n")
                log.flush()
                if traj.status == Status.COMPLETED:
                    completed += 1
                else:
                    failed += 1

    return GrowResult(
        log_path=out_path,
        total=len(questions) * repeats,
        completed=completed,
        failed=failed,
        skipped=skipped,
    )
