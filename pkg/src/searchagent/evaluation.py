"""Auto-eval harness: per-question LLM judging, multi-run mean/std
aggregation, draft-vs-final comparison and correlation against human scores."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from statistics import stdev
from typing import Sequence

from .agent import run_trajectory
from .backends.base import DEFAULT_STOP
from .codec.grammar import parse_autoeval_verdict
from .codec.templates import TemplateLibrary, default_library, render_autoeval_prompt
from .errors import DatasetLoadError, UndefinedCorrelationError, VerdictParseError
from .logio import canonical_dumps, read_jsonl, stable_hash_int
from .pipeline.questions import load_questions
from .types import AgentConfig, Question, Status, Trajectory


class Stage(str, Enum):
    DRAFT = "draft"
    FINAL = "final"


@dataclass
class EvalVerdict:
    question_id: str
    run_index: int
    stage: Stage
    correct: bool
    judge_raw: str = ""
    trajectory_ref: str = ""
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "run_index": self.run_index,
            "stage": self.stage.value,
            "correct": self.correct,
            "judge_raw": self.judge_raw,
            "trajectory_ref": self.trajectory_ref,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalVerdict":
        return cls(
            question_id=d["question_id"],
            run_index=d["run_index"],
            stage=Stage(d["stage"]),
            correct=d["correct"],
            judge_raw=d.get("judge_raw", ""),
            trajectory_ref=d.get("trajectory_ref", ""),
            flags=list(d.get("flags", [])),
        )


@dataclass
class EvalSummary:
    runs: int
    per_run_accuracy: list[float]
    mean: float
    std: float
    stage: Stage
    dataset_size: int

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "per_run_accuracy": list(self.per_run_accuracy),
            "mean": self.mean,
            "std": self.std,
            "stage": self.stage.value,
            "dataset_size": self.dataset_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalSummary":
        return cls(
            runs=d["runs"],
            per_run_accuracy=list(d["per_run_accuracy"]),
            mean=d["mean"],
            std=d["std"],
            stage=Stage(d["stage"]),
            dataset_size=d["dataset_size"],
        )


def judge(
    question: Question,
    answer: str,
    judge_llm,
    templates: TemplateLibrary | None = None,
    *,
    run_index: int = 0,
    stage: Stage = Stage.FINAL,
    trajectory_ref: str = "",
) -> EvalVerdict:
    """One greedy judge call deciding whether ``answer`` implies the
    reference answer; a second attempt on an unparseable verdict, then
    ``correct=False`` with an audit flag."""
    if not question.ref_answer:
        raise ValueError(f"question {question.id!r} has no ref_answer; cannot judge")
    templates = templates or default_library()
    prompt = render_autoeval_prompt(templates, question, answer, question.ref_answer)
    raw = ""
    for attempt in range(2):
        raw = judge_llm.sample(prompt, 1, 0.0, list(DEFAULT_STOP))[0].text
        try:
            verdict = parse_autoeval_verdict(raw)
        except VerdictParseError:
            continue
        return EvalVerdict(
            question_id=question.id,
            run_index=run_index,
            stage=stage,
            correct=verdict,
            judge_raw=raw,
            trajectory_ref=trajectory_ref,
        )
    return EvalVerdict(
        question_id=question.id,
        run_index=run_index,
        stage=stage,
        correct=False,
        judge_raw=raw,
        trajectory_ref=trajectory_ref,
        flags=["verdict_unparseable"],
    )


def stage_answer(trajectory: Trajectory, stage: Stage) -> str | None:
    return trajectory.draft_answer if stage == Stage.DRAFT else trajectory.final_answer


def judge_trajectories(
    questions_by_id: dict[str, Question],
    trajectories: Sequence[Trajectory],
    stage: Stage,
    judge_llm,
    templates: TemplateLibrary | None = None,
    *,
    run_index: int = 0,
) -> list[EvalVerdict]:
    """Judge one stage of already-collected trajectories; failed trajectories
    count as incorrect and are flagged rather than judged."""
    verdicts: list[EvalVerdict] = []
    for traj in trajectories:
        q = questions_by_id[traj.question.id]
        answer = stage_answer(traj, stage)
        if traj.status != Status.COMPLETED or answer is None:
            verdicts.append(EvalVerdict(
                question_id=q.id,
                run_index=run_index,
                stage=stage,
                correct=False,
                trajectory_ref=traj.trajectory_id,
                flags=["trajectory_failed"],
            ))
            continue
        verdicts.append(judge(
            q, answer, judge_llm, templates,
            run_index=run_index, stage=stage, trajectory_ref=traj.trajectory_id,
        ))
    return verdicts


def summarize_verdicts(
    verdicts: Sequence[EvalVerdict], runs: int, stage: Stage, dataset_size: int
) -> EvalSummary:
    """Per-run accuracy = correct/|dataset|; mean and sample std across runs."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if dataset_size < 1:
        raise ValueError("dataset_size must be >= 1")
    per_run = []
    for r in range(runs):
        hits = sum(1 for v in verdicts if v.run_index == r and v.stage == stage and v.correct)
        per_run.append(hits / dataset_size)
    return EvalSummary(
        runs=runs,
        per_run_accuracy=per_run,
        mean=sum(per_run) / runs,
        std=stdev(per_run) if runs >= 2 else 0.0,
        stage=stage,
        dataset_size=dataset_size,
    )


def evaluate_dataset(
    questions: list[Question],
    runs: int,
    stage: Stage,
    config: AgentConfig,
    llm,
    search,
    judge_llm,
    *,
    templates: TemplateLibrary | None = None,
    out_dir: Path | str | None = None,
    run_seed: int = 0,
    parallelism: int = 1,
) -> EvalSummary:
    """``runs`` independent trajectory sweeps with fresh per-run seeds, each
    judged at ``stage``; trajectories and verdicts are persisted when
    ``out_dir`` is given so summaries can be recomputed without re-running."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if not questions:
        raise ValueError("dataset is empty")
    for q in questions:
        if not q.ref_answer:
            raise ValueError(f"question {q.id!r} has no ref_answer")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    questions_by_id = {q.id: q for q in questions}
    all_verdicts: list[EvalVerdict] = []

    for r in range(runs):
        def run_one(q: Question) -> Trajectory:
            seed = stable_hash_int(run_seed, "eval", q.id, r)
            return run_trajectory(
                q, config, llm, search,
                templates=templates, rng_seed=seed, repeat_index=r,
                trajectory_id=f"{q.id}#run{r}",
            )

        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            trajectories = list(pool.map(run_one, questions))
        if out_dir is not None:
            with open(out_dir / f"run_{r:02d}.jsonl", "w", encoding="utf-8") as f:
                for traj in trajectories:
                    f.write(canonical_dumps(traj.to_dict(config)) + "\n")
        all_verdicts.extend(judge_trajectories(
            questions_by_id, trajectories, stage, judge_llm, templates, run_index=r,
        ))

    summary = summarize_verdicts(all_verdicts, runs, stage, len(questions))
    if out_dir is not None:
        with open(out_dir / "verdicts.jsonl", "w", encoding="utf-8") as f:
            for v in all_verdicts:
                f.write(canonical_dumps(v.to_dict()) + "\n")
        (out_dir / "summary.json").write_text(
            canonical_dumps(summary.to_dict()) + "\n", encoding="utf-8"
        )
    return summary


def judge_stage_from_logs(
    out_dir: Path | str,
    questions: list[Question],
    stage: Stage,
    judge_llm,
    templates: TemplateLibrary | None = None,
) -> EvalSummary:
    """Re-judge a persisted sweep at another stage without re-running the
    agent (the draft-vs-final comparison)."""
    out_dir = Path(out_dir)
    run_files = sorted(out_dir.glob("run_*.jsonl"))
    if not run_files:
        raise DatasetLoadError(f"no run_*.jsonl files under {out_dir}")
    questions_by_id = {q.id: q for q in questions}
    verdicts: list[EvalVerdict] = []
    for r, path in enumerate(run_files):
        trajectories = [Trajectory.from_dict(rec) for rec in read_jsonl(path)]
        verdicts.extend(judge_trajectories(
            questions_by_id, trajectories, stage, judge_llm, templates, run_index=r,
        ))
    return summarize_verdicts(verdicts, len(run_files), stage, len(questions))


def recompute_summary(out_dir: Path | str) -> EvalSummary:
    """Recount the persisted verdicts; must equal the stored summary."""
    out_dir = Path(out_dir)
    stored = EvalSummary.from_dict(
        json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
    )
    verdicts = [EvalVerdict.from_dict(d) for d in read_jsonl(out_dir / "verdicts.jsonl")]
    return summarize_verdicts(verdicts, stored.runs, stored.stage, stored.dataset_size)


@dataclass(frozen=True)
class CorrelationResult:
    pearson: float
    pearson_p: float
    spearman: float
    spearman_p: float
    n: int
    approximate: bool = True  # p-values use the t-distribution transform

    def to_dict(self) -> dict:
        return {
            "pearson": self.pearson,
            "pearson_p": self.pearson_p,
            "spearman": self.spearman,
            "spearman_p": self.spearman_p,
            "n": self.n,
            "approximate": self.approximate,
        }


def _pearson(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    dx = [a - mx for a in x]
    dy = [b - my for b in y]
    vx = sum(d * d for d in dx)
    vy = sum(d * d for d in dy)
    if vx == 0.0 or vy == 0.0:
        raise UndefinedCorrelationError("zero variance makes the correlation undefined")
    return sum(a * b for a, b in zip(dx, dy)) / math.sqrt(vx * vy)


def _t_p_value(r: float, n: int) -> float:
    from scipy import stats

    if 1.0 - r * r <= 0.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(abs(t), n - 2))


def correlate(auto_scores: Sequence[float], human_scores: Sequence[float]) -> CorrelationResult:
    """Pearson on values and Spearman on average fractional ranks, with
    two-sided p-values from the t-distribution transform (approximate)."""
    if len(auto_scores) != len(human_scores):
        raise ValueError("score vectors must have equal length")
    n = len(auto_scores)
    if n < 3:
        raise ValueError("need at least 3 paired observations")
    from scipy.stats import rankdata

    pearson = _pearson(auto_scores, human_scores)
    ranks_a = list(rankdata(auto_scores))
    ranks_h = list(rankdata(human_scores))
    spearman = _pearson(ranks_a, ranks_h)
    return CorrelationResult(
        pearson=pearson,
        pearson_p=_t_p_value(pearson, n),
        spearman=spearman,
        spearman_p=_t_p_value(spearman, n),
        n=n,
    )


def load_eval_dataset(path: Path | str, expected_count: int | None = None) -> list[Question]:
    """Load an eval question file and enforce the machine-checkable rules:
    unique ids, non-empty text, a reference answer per question, and an
    optional exact count."""
    questions = load_questions(path)
    missing = [q.id for q in questions if not (q.ref_answer or "").strip()]
    if missing:
        raise DatasetLoadError(
            f"{path}: {len(missing)} question(s) lack a ref_answer (e.g. {missing[:3]})"
        )
    if expected_count is not None and len(questions) != expected_count:
        raise DatasetLoadError(
            f"{path}: expected {expected_count} questions, found {len(questions)}"
        )
    return questions
