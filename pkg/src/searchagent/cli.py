"""Command-line entry point: agent, pipeline and eval subcommands plus the
generation loop, all runnable fully offline against simulated or replayed
backends."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from .agent import run_trajectory
from .backends import (
    HttpLLM,
    HttpSearch,
    RecordingSession,
    ReplayLLM,
    ReplaySearch,
    SimulatedAgentLLM,
    SimulatedSearch,
    TokenBucket,
)
from .codec.templates import TemplateLibrary, default_library
from .config import RunConfig, archive_config, load_run_config
from .errors import BackendError, ConfigError, SearchAgentError
from .evaluation import (
    Stage,
    correlate,
    evaluate_dataset,
    load_eval_dataset,
    recompute_summary,
)
from .pipeline import grow, improve, load_questions, mixture_stats
from .types import AnswerAction, Question, SearchAction, SelectLinkAction, Status

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3


@dataclass
class Backends:
    llm: object
    search: object
    judge: object
    rm: object


def build_backends(cfg: RunConfig, llm_endpoint: str | None = None) -> Backends:
    b = cfg.backend
    if b.mode == "simulated":
        llm = SimulatedAgentLLM(seed=b.simulated_seed)
        search = SimulatedSearch(seed=b.simulated_seed)
    elif b.mode == "fixtures":
        llm = ReplayLLM(b.fixtures_dir)
        search = ReplaySearch(b.fixtures_dir)
    elif b.mode == "http":
        llm = HttpLLM(
            endpoint=llm_endpoint or b.llm_endpoint,
            model=b.llm_model,
            api_key_env=b.llm_api_key_env,
            rate_limit=TokenBucket(b.llm_rate_per_sec) if b.llm_rate_per_sec > 0 else None,
        )
        search = HttpSearch(
            endpoint=b.search_endpoint,
            api_key_env=b.search_api_key_env,
            rate_limit=TokenBucket(b.search_rate_per_sec) if b.search_rate_per_sec > 0 else None,
        )
    else:  # pragma: no cover - validated earlier
        raise ConfigError(f"unknown backend mode {b.mode!r}")
    if b.record_dir:
        session = RecordingSession(llm, search, b.record_dir)
        llm, search = session.llm, session.search
    return Backends(llm=llm, search=search, judge=llm, rm=llm)


def load_templates(cfg: RunConfig) -> TemplateLibrary:
    if cfg.templates_dir:
        return TemplateLibrary.load(cfg.templates_dir)
    return default_library()


def _common_config(config_file, overrides: dict) -> RunConfig:
    clean: dict = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("temperature", "samples_per_step", "max_searches", "top_k_snippets"):
            clean.setdefault("agent", {})[key] = value
        elif key in ("mode", "fixtures_dir", "record_dir", "simulated_seed", "llm_endpoint", "search_endpoint"):
            clean.setdefault("backend", {})[key] = value
        else:
            clean[key] = value
    return load_run_config(config_file, overrides=clean)


def config_options(f):
    f = click.option("--config", "config_file", type=click.Path(), default=None,
                     help="TOML config file.")(f)
    f = click.option("--seed", "run_seed", type=int, default=None, help="Run seed.")(f)
    f = click.option("--parallel", "parallelism", type=int, default=None,
                     help="Worker count for batch stages.")(f)
    f = click.option("--backend-mode", "mode", type=click.Choice(["simulated", "fixtures", "http"]),
                     default=None, help="Backend implementation.")(f)
    f = click.option("--fixtures", "fixtures_dir", type=click.Path(), default=None,
                     help="Fixture archive for replay mode.")(f)
    f = click.option("--record", "record_dir", type=click.Path(), default=None,
                     help="Record every backend call into this archive.")(f)
    f = click.option("--templates", "templates_dir", type=click.Path(), default=None,
                     help="Alternative template directory.")(f)
    f = click.option("--temperature", type=float, default=None)(f)
    f = click.option("--samples", "samples_per_step", type=int, default=None)(f)
    f = click.option("--max-searches", "max_searches", type=int, default=None)(f)
    return f


@click.group()
@click.version_option(package_name="searchagent")
def main() -> None:
    """Search agent, self-improvement pipeline and auto-eval harness."""


# --- agent ----------------------------------------------------------------

@main.group()
def agent() -> None:
    """Single-trajectory commands."""


@agent.command("run")
@click.option("--question", "question_text", default=None, help="Ad-hoc question text.")
@click.option("--question-id", default=None, help="Pick a question by id from --questions.")
@click.option("--questions", "questions_file", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Write the trajectory record and effective config here.")
@click.option("--stage", type=click.Choice(["final", "draft"]), default="final",
              help="'draft' additionally prints the pre-self-check answer.")
@config_options
def agent_run(question_text, question_id, questions_file, out_dir, stage, config_file, **overrides):
    """Run one question through the agent and print the step trace."""
    try:
        cfg = _common_config(config_file, overrides)
        templates = load_templates(cfg)
        backends = build_backends(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    if question_text:
        question = Question(id="adhoc", text=question_text)
    elif question_id and questions_file:
        pool = {q.id: q for q in load_questions(questions_file)}
        if question_id not in pool:
            click.echo(f"question id {question_id!r} not in {questions_file}", err=True)
            sys.exit(EXIT_CONFIG)
        question = pool[question_id]
    else:
        click.echo("provide --question TEXT or --question-id with --questions FILE", err=True)
        sys.exit(EXIT_CONFIG)

    try:
        traj = run_trajectory(
            question, cfg.agent, backends.llm, backends.search,
            templates=templates, rng_seed=cfg.run_seed,
        )
    except BackendError as exc:
        click.echo(f"backend error: {exc}", err=True)
        sys.exit(EXIT_BACKEND)

    _print_trace(traj, show_draft=stage == "draft")

    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        from .logio import canonical_dumps

        (out / "trajectory.jsonl").write_text(
            canonical_dumps(traj.to_dict(cfg.agent)) + "\n", encoding="utf-8"
        )
        archive_config(cfg, out)
    sys.exit(EXIT_OK if traj.status == Status.COMPLETED else EXIT_FAILURE)


def _print_trace(traj, show_draft: bool) -> None:
    click.echo(f"question: {traj.question.text}")
    for i, step in enumerate(traj.steps, start=1):
        action = step.action
        if isinstance(action, SearchAction):
            click.echo(f"[{i}] {step.kind.value}: Search(query={action.query!r})")
            click.echo(f"    thoughts: {action.thoughts}")
        elif isinstance(action, SelectLinkAction):
            if step.search is not None:
                ids = [r.link_id for r in step.search.results]
                click.echo(f"[{i}] {step.kind.value}: results link_id={ids}")
                for r in step.search.results:
                    click.echo(f"    [link_id={r.link_id}] {r.link_text}")
            click.echo(f"    selected: {list(action.selected_link_ids)}")
            click.echo(f"    summary: {action.grounded_summarization}")
        elif isinstance(action, AnswerAction):
            click.echo(f"[{i}] {step.kind.value}: draft answer composed")
        else:
            click.echo(f"[{i}] {step.kind.value}: {action.kind}")
    if show_draft and traj.draft_answer is not None:
        click.echo(f"draft: {traj.draft_answer}")
    if traj.final_answer is not None:
        click.echo(f"final: {traj.final_answer}")
    click.echo(f"status: {traj.status.value}"
               + (f" ({traj.failure_reason})" if traj.failure_reason else ""))


# --- pipeline ---------------------------------------------------------------

@main.group()
def pipeline() -> None:
    """Batch trajectory collection and mixture building."""


@pipeline.command("grow")
@click.option("--questions", "questions_file", type=click.Path(), required=True)
@click.option("--repeats", type=int, default=1, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--generation", type=int, default=None)
@config_options
def pipeline_grow(questions_file, repeats, out_path, generation, config_file, **overrides):
    """Collect trajectories for every question (repeats times each)."""
    try:
        cfg = _common_config(config_file, overrides)
        if generation is not None:
            cfg.generation = generation
        templates = load_templates(cfg)
        backends = build_backends(cfg)
        questions = load_questions(questions_file)
        result = grow(
            questions, repeats, cfg.agent, backends.llm, backends.search,
            out_path=out_path, run_seed=cfg.run_seed, parallelism=cfg.parallelism,
            generation=cfg.generation, templates=templates,
        )
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except SearchAgentError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    archive_config(cfg, Path(out_path).parent)
    click.echo(
        f"grow: {result.total} trajectories ({result.completed} completed, "
        f"{result.failed} failed, {result.skipped} already present) -> {result.log_path}"
    )


@pipeline.command("improve")
@click.option("--log", "log_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--rerank", is_flag=True, default=False,
              help="Re-select fine-tuning targets with the ranking model.")
@click.option("--filter", "filter_names", multiple=True,
              help="Named example filter (repeatable).")
@click.option("--repeats-cap", type=int, default=None)
@click.option("--dedup", is_flag=True, default=False)
@config_options
def pipeline_improve(log_path, out_path, rerank, filter_names, repeats_cap, dedup,
                     config_file, **overrides):
    """Convert a trajectory log into a fine-tuning mixture."""
    try:
        cfg = _common_config(config_file, overrides)
        templates = load_templates(cfg)
        rm = build_backends(cfg).rm if rerank else None
        manifest = improve(
            log_path, out_path,
            rerank=rerank, rm=rm, templates=templates,
            filters=list(filter_names), repeats_cap=repeats_cap, dedup=dedup,
        )
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except SearchAgentError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    _echo_manifest(manifest)


def _echo_manifest(manifest) -> None:
    click.echo(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    click.echo(
        f"examples per trajectory: {manifest.examples_per_trajectory:.3f} "
        f"(reference run: {manifest.reference_examples_per_trajectory:.3f})"
    )


@pipeline.command("stats")
@click.option("--mix", "mixture_path", type=click.Path(), required=True)
def pipeline_stats(mixture_path):
    """Recount a mixture and verify it against its manifest."""
    try:
        manifest = mixture_stats(mixture_path)
    except SearchAgentError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    _echo_manifest(manifest)


# --- eval -------------------------------------------------------------------

@main.group(name="eval")
def eval_group() -> None:
    """Auto-eval over a reference-answer dataset."""


@eval_group.command("run")
@click.option("--dataset", "dataset_file", type=click.Path(), required=True)
@click.option("--runs", type=int, default=10, show_default=True)
@click.option("--stage", type=click.Choice(["final", "draft"]), default="final", show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--expected-count", type=int, default=None,
              help="Assert the dataset has exactly this many questions.")
@config_options
def eval_run(dataset_file, runs, stage, out_dir, expected_count, config_file, **overrides):
    """Sweep the dataset ``runs`` times and judge the chosen answer stage."""
    try:
        cfg = _common_config(config_file, overrides)
        templates = load_templates(cfg)
        backends = build_backends(cfg)
        questions = load_eval_dataset(dataset_file, expected_count)
        summary = evaluate_dataset(
            questions, runs, Stage(stage), cfg.agent,
            backends.llm, backends.search, backends.judge,
            templates=templates, out_dir=out_dir, run_seed=cfg.run_seed,
            parallelism=cfg.parallelism,
        )
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except SearchAgentError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    archive_config(cfg, out_dir)
    click.echo(
        f"eval[{summary.stage.value}] over {summary.dataset_size} questions x {summary.runs} runs: "
        f"mean accuracy {100 * summary.mean:.1f}% (std {100 * summary.std:.1f})"
    )


@eval_group.command("report")
@click.option("--dir", "out_dir", type=click.Path(), required=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def eval_report(out_dir, csv_path):
    """Recompute the summary from persisted verdicts and print a table."""
    try:
        summary = recompute_summary(out_dir)
    except (OSError, SearchAgentError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    click.echo(f"stage: {summary.stage.value}")
    click.echo(f"questions: {summary.dataset_size}  runs: {summary.runs}")
    click.echo("run,accuracy")
    for i, acc in enumerate(summary.per_run_accuracy):
        click.echo(f"{i},{acc:.6f}")
    click.echo(f"mean,{summary.mean:.6f}")
    click.echo(f"std,{summary.std:.6f}")
    if csv_path:
        lines = ["run,accuracy"]
        lines += [f"{i},{acc:.6f}" for i, acc in enumerate(summary.per_run_accuracy)]
        lines += [f"mean,{summary.mean:.6f}", f"std,{summary.std:.6f}"]
        Path(csv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        click.echo(f"wrote {csv_path}")


@eval_group.command("correlate")
@click.option("--auto", "auto_file", type=click.Path(), required=True,
              help="Text file with one auto-eval score per line.")
@click.option("--human", "human_file", type=click.Path(), required=True,
              help="Text file with one human score per line.")
def eval_correlate(auto_file, human_file):
    """Pearson/Spearman alignment between auto-eval and human scores."""
    try:
        auto = _read_scores(auto_file)
        human = _read_scores(human_file)
        result = correlate(auto, human)
    except (OSError, ValueError, SearchAgentError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    click.echo(json.dumps(result.to_dict(), indent=2, sort_keys=True))


def _read_scores(path: str) -> list[float]:
    values = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            values.append(float(line))
    return values


# --- loop -------------------------------------------------------------------

@main.command("loop")
@click.option("--questions", "questions_file", type=click.Path(), required=True)
@click.option("--eval-dataset", "eval_dataset", type=click.Path(), required=True)
@click.option("--iterations", type=int, required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--repeats", type=int, default=1, show_default=True)
@click.option("--eval-runs", type=int, default=2, show_default=True)
@click.option("--rerank/--no-rerank", default=True, show_default=True)
@config_options
def loop(questions_file, eval_dataset, iterations, out_dir, repeats, eval_runs, rerank,
         config_file, **overrides):
    """grow -> improve -> eval per generation, pausing when the next
    generation's fine-tuned model endpoint is not configured yet."""
    if iterations < 0:
        click.echo("iterations must be >= 0", err=True)
        sys.exit(EXIT_CONFIG)
    if iterations == 0:
        click.echo("loop: nothing to do (iterations=0)")
        sys.exit(EXIT_OK)
    try:
        cfg = _common_config(config_file, overrides)
        templates = load_templates(cfg)
        questions = load_questions(questions_file)
        eval_questions = load_eval_dataset(eval_dataset)
    except (ConfigError, SearchAgentError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    archive_config(cfg, out)

    for iteration in range(iterations):
        generation = cfg.generation + iteration
        endpoint = _endpoint_for_generation(cfg, iteration)
        if cfg.backend.mode == "http" and not endpoint:
            state = {"paused_before_generation": generation,
                     "reason": "no model endpoint configured for this generation"}
            (out / "loop_state.json").write_text(json.dumps(state, indent=2) + "\n", encoding="utf-8")
            click.echo(
                f"loop: pausing before generation {generation}; fine-tune externally and add "
                f"its endpoint to [loop].endpoints, then re-run to resume."
            )
            sys.exit(EXIT_OK)
        if cfg.backend.mode == "simulated":
            # a later generation acts as a different (better-trained) model
            cfg.backend.simulated_seed = cfg.backend.simulated_seed + (1 if iteration else 0)
        backends = build_backends(cfg, llm_endpoint=endpoint)

        gen_dir = out / f"gen_{generation:03d}"
        gen_dir.mkdir(parents=True, exist_ok=True)
        handoff_path = gen_dir / "handoff.json"
        if handoff_path.exists():
            click.echo(f"loop: generation {generation} already complete, skipping")
            continue

        log_path = gen_dir / "trajectories.jsonl"
        mix_path = gen_dir / "mixture.jsonl"
        eval_dir = gen_dir / "eval"
        try:
            result = grow(
                questions, repeats, cfg.agent, backends.llm, backends.search,
                out_path=log_path, run_seed=cfg.run_seed, parallelism=cfg.parallelism,
                generation=generation, templates=templates,
            )
            click.echo(f"loop[gen {generation}] grow: {result.completed} completed / {result.total}")
            if not mix_path.exists():
                manifest = improve(
                    log_path, mix_path,
                    rerank=rerank, rm=backends.rm if rerank else None,
                    templates=templates, generation=generation,
                )
                click.echo(f"loop[gen {generation}] improve: {manifest.total_examples} examples")
            if not (eval_dir / "summary.json").exists():
                summary = evaluate_dataset(
                    eval_questions, eval_runs, Stage.FINAL, cfg.agent,
                    backends.llm, backends.search, backends.judge,
                    templates=templates, out_dir=eval_dir, run_seed=cfg.run_seed,
                    parallelism=cfg.parallelism,
                )
                click.echo(
                    f"loop[gen {generation}] eval: mean {100 * summary.mean:.1f}% over {eval_runs} runs"
                )
        except SearchAgentError as exc:
            click.echo(f"loop error in generation {generation}: {exc}", err=True)
            sys.exit(EXIT_FAILURE)

        handoff = {
            "generation": generation,
            "trajectory_log": str(log_path),
            "mixture": str(mix_path),
            "mixture_manifest": str(mix_path) + ".manifest.json",
            "eval_summary": str(eval_dir / "summary.json"),
            "next_step": "fine-tune externally on the mixture, then supply the new model endpoint",
        }
        handoff_path.write_text(json.dumps(handoff, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        state = {"completed_generation": generation}
        (out / "loop_state.json").write_text(json.dumps(state, indent=2) + "\n", encoding="utf-8")
    click.echo("loop: done")


def _endpoint_for_generation(cfg: RunConfig, iteration: int) -> str | None:
    if cfg.loop_endpoints:
        if iteration < len(cfg.loop_endpoints):
            return cfg.loop_endpoints[iteration]
        return None
    return cfg.backend.llm_endpoint if iteration == 0 else None


if __name__ == "__main__":
    main()
