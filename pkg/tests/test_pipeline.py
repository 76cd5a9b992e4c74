from __future__ import annotations

import json

import pytest

from searchagent.backends import SimulatedAgentLLM, SimulatedSearch
from searchagent.errors import (
    DatasetLoadError,
    EmptyMixtureError,
    EvalOnlyDatasetError,
    InsufficientQuestions,
    IntegrityError,
)
from searchagent.codec.grammar import parse_completion
from searchagent.logio import read_jsonl
from searchagent.pipeline import (
    FineTuneExample,
    grow,
    improve,
    load_questions,
    manifest_path,
    mixture_stats,
    sample_question_set,
)
from searchagent.pipeline.improve import FILTERS
from searchagent.types import AgentConfig, Question, Source, StepKind

from conftest import make_compact_library, make_questions, write_questions

LIB = make_compact_library()
CFG = AgentConfig()


def backends(seed=0):
    return SimulatedAgentLLM(seed=seed), SimulatedSearch(seed=seed)


# --- questions --------------------------------------------------------------

def test_load_questions_validates(tmp_path):
    path = tmp_path / "q.jsonl"
    write_questions(path, make_questions(3))
    assert [q.id for q in load_questions(path)] == ["q0000", "q0001", "q0002"]

    dup = tmp_path / "dup.jsonl"
    qs = make_questions(2)
    write_questions(dup, [qs[0], qs[0]])
    with pytest.raises(DatasetLoadError):
        load_questions(dup)

    empty_text = tmp_path / "empty.jsonl"
    empty_text.write_text(json.dumps({"id": "a", "text": "  ", "source": "custom"}) + "\n")
    with pytest.raises(DatasetLoadError):
        load_questions(empty_text)


def test_sample_question_set_agrees_with_itself(tmp_path):
    paths = []
    for d in range(4):
        path = tmp_path / f"ds{d}.jsonl"
        write_questions(path, make_questions(40, prefix=f"d{d}_"))
        paths.append(path)
    first = sample_question_set(paths, 10, seed=5)
    second = sample_question_set(paths, 10, seed=5)
    assert [q.id for q in first] == [q.id for q in second]
    assert len(first) == 40
    different = sample_question_set(paths, 10, seed=6)
    assert [q.id for q in first] != [q.id for q in different]


def test_sample_question_set_edge_cases(tmp_path):
    path = tmp_path / "ds.jsonl"
    write_questions(path, make_questions(5))
    assert sample_question_set([path], 0, seed=1) == []
    with pytest.raises(InsufficientQuestions):
        sample_question_set([path], 6, seed=1)


# --- grow ---------------------------------------------------------------

def test_grow_counts_and_resume(tmp_path):
    questions = make_questions(10)
    llm, search = backends(seed=2)
    full_path = tmp_path / "full.jsonl"
    result = grow(questions, 1, CFG, llm, search, out_path=full_path,
                  run_seed=3, templates=LIB)
    assert result.total == 10
    assert result.completed == 10
    full_lines = full_path.read_text().splitlines()
    assert len(full_lines) == 10

    # interrupt after 5: resume must complete the rest without duplicates
    part_path = tmp_path / "part.jsonl"
    part_path.write_text("\n".join(full_lines[:5]) + "\n")
    resumed = grow(questions, 1, CFG, llm, search, out_path=part_path,
                   run_seed=3, templates=LIB)
    assert resumed.skipped == 5
    assert part_path.read_text() == full_path.read_text()


def test_grow_is_deterministic_across_parallelism(tmp_path):
    questions = make_questions(8)
    serial = tmp_path / "serial.jsonl"
    parallel = tmp_path / "parallel.jsonl"
    grow(questions, 2, CFG, *backends(seed=1), out_path=serial, run_seed=7,
         parallelism=1, templates=LIB)
    grow(questions, 2, CFG, *backends(seed=1), out_path=parallel, run_seed=7,
         parallelism=4, templates=LIB)
    assert serial.read_text() == parallel.read_text()


def test_grow_records_failures_without_aborting(tmp_path):
    questions = make_questions(4)

    class FlakyLLM(SimulatedAgentLLM):
        def sample(self, prompt, n, temperature, stop):
            if "q0002" in prompt:
                raise RuntimeError("synthetic breakage")
            return super().sample(prompt, n, temperature, stop)

    out = tmp_path / "log.jsonl"
    result = grow(questions, 1, CFG, FlakyLLM(seed=0), SimulatedSearch(seed=0),
                  out_path=out, templates=LIB)
    assert result.completed == 3
    assert result.failed == 1
    records = list(read_jsonl(out))
    assert len(records) == 4
    failing = [r for r in records if r["question"]["id"] == "q0002"]
    assert failing[0]["status"] == "failed"


def test_grow_rejects_zero_repeats(tmp_path):
    with pytest.raises(ValueError):
        grow(make_questions(1), 0, CFG, *backends(), out_path=tmp_path / "x.jsonl", templates=LIB)


# --- improve ------------------------------------------------------------

@pytest.fixture(scope="module")
def small_log(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("grow")
    questions = make_questions(6, prefix="mix")
    path = tmp / "log.jsonl"
    grow(questions, 2, CFG, *backends(seed=11), out_path=path, run_seed=1, templates=LIB)
    return path, questions


def expected_examples(record: dict) -> int:
    return len(record["steps"])


def test_improve_recount_matches_log(small_log, tmp_path):
    log_path, _ = small_log
    mix = tmp_path / "mix.jsonl"
    manifest = improve(log_path, mix)
    records = list(read_jsonl(log_path))
    completed = [r for r in records if r["status"] == "completed"]
    assert manifest.total_trajectories == len(completed)
    assert manifest.total_examples == sum(expected_examples(r) for r in completed)
    assert manifest.total_examples == sum(manifest.per_step_counts.values())
    assert manifest.repeats_per_question == 2
    recount = mixture_stats(mix)
    assert recount.total_examples == manifest.total_examples
    assert recount.content_hash == manifest.content_hash


def test_examples_parse_and_carry_metadata(small_log, tmp_path):
    log_path, _ = small_log
    mix = tmp_path / "mix.jsonl"
    improve(log_path, mix)
    for record in read_jsonl(mix):
        ex = FineTuneExample.from_dict(record)
        pc = parse_completion(StepKind(ex.step_kind), ex.target_text)
        assert pc.terminated
        assert ex.question_id and ex.trajectory_id.startswith(ex.question_id)
        assert ex.input_text.endswith("\n\n")  # the input stops where the output section begins


def test_improve_is_deterministic(small_log, tmp_path):
    log_path, _ = small_log
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    improve(log_path, a)
    improve(log_path, b)
    assert a.read_text() == b.read_text()


def test_repeats_cap_monotone(small_log, tmp_path):
    log_path, _ = small_log
    sizes = {}
    for cap in (1, 2):
        mix = tmp_path / f"mix{cap}.jsonl"
        manifest = improve(log_path, mix, repeats_cap=cap)
        sizes[cap] = manifest.total_examples
        assert manifest.total_trajectories <= 6 * cap
        assert manifest.repeats_per_question <= cap
    assert sizes[1] <= sizes[2]


def test_rerank_changes_selection_method(small_log, tmp_path):
    log_path, _ = small_log
    mix = tmp_path / "mix.jsonl"
    rm = SimulatedAgentLLM(seed=99)
    improve(log_path, mix, rerank=True, rm=rm, templates=LIB)
    methods = {FineTuneExample.from_dict(r).selection_method for r in read_jsonl(mix)}
    assert "rm_ranked" in methods  # multi-sample steps were re-ranked


def test_filters_report_removals(small_log, tmp_path):
    log_path, _ = small_log
    mix = tmp_path / "mix.jsonl"

    def drop_decisions(example: FineTuneExample) -> bool:
        return example.step_kind == "decision"

    manifest = improve(log_path, mix, filters=["empty-thoughts", drop_decisions])
    assert manifest.filter_stats["drop_decisions"] > 0
    assert "decision" not in manifest.per_step_counts
    assert manifest.filter_stats["empty-thoughts"] == 0  # simulated thoughts are never empty


def test_unknown_filter_name(small_log, tmp_path):
    log_path, _ = small_log
    with pytest.raises(ValueError):
        improve(log_path, tmp_path / "m.jsonl", filters=["no-such-filter"])


def test_builtin_filters_on_crafted_examples():
    good = FineTuneExample(
        input_text="ResultItem(link_id=3, link_text='t', snippet='s')",
        target_text="Answer(thoughts=\"t\", answer=\"cited [link_id=3]\")  # [END]",
        step_kind="answer_gen", trajectory_id="q#0", question_id="q", generation=0,
        selection_method="min_perplexity",
    )
    assert not FILTERS["citation-closure"](good)
    assert not FILTERS["empty-thoughts"](good)
    assert not FILTERS["parse-failure"](good)

    uncited = FineTuneExample(**{**good.__dict__,
                                 "target_text": "Answer(thoughts=\"t\", answer=\"ghost [link_id=9]\")  # [END]"})
    assert FILTERS["citation-closure"](uncited)
    empty = FineTuneExample(**{**good.__dict__,
                               "target_text": "Answer(thoughts=\"\", answer=\"cited [link_id=3]\")  # [END]"})
    assert FILTERS["empty-thoughts"](empty)
    broken = FineTuneExample(**{**good.__dict__, "target_text": "not an action"})
    assert FILTERS["parse-failure"](broken)


def test_dedup_collapses_with_multiplicity(tmp_path):
    ex = FineTuneExample(
        input_text="I", target_text="Terminate(thoughts=\"t\")  # [END]",
        step_kind="decision", trajectory_id="a#0", question_id="a", generation=0,
        selection_method="min_perplexity",
    )
    log = tmp_path / "log.jsonl"
    questions = make_questions(1, prefix="dd")
    grow(questions, 2, CFG, *backends(seed=5), out_path=log, templates=LIB)
    mix = tmp_path / "mix.jsonl"
    improve(log, mix, dedup=True)
    records = [FineTuneExample.from_dict(r) for r in read_jsonl(mix)]
    # both repeats used the same seed-derived behavior per question, prompts differ
    # by nothing, so each step collapses into one example of multiplicity 2
    assert all(r.multiplicity == 2 for r in records)


def test_eval_only_sources_are_refused(tmp_path):
    questions = make_questions(2, source=Source.BAMBOOGLE, with_ref=True, prefix="bb")
    log = tmp_path / "log.jsonl"
    grow(questions, 1, CFG, *backends(seed=0), out_path=log, templates=LIB)
    with pytest.raises(EvalOnlyDatasetError):
        improve(log, tmp_path / "mix.jsonl")


def test_empty_mixture_error(tmp_path):
    log = tmp_path / "log.jsonl"
    grow(make_questions(1, prefix="em"), 1, CFG, *backends(seed=0), out_path=log, templates=LIB)
    with pytest.raises(EmptyMixtureError):
        improve(log, tmp_path / "mix.jsonl", filters=[lambda ex: True])


def test_mixture_stats_detects_tampering(small_log, tmp_path):
    log_path, _ = small_log
    mix = tmp_path / "mix.jsonl"
    improve(log_path, mix)
    mixture_stats(mix)
    lines = mix.read_text().splitlines()
    tampered = json.loads(lines[0])
    tampered["step_kind"] = "answer_gen" if tampered["step_kind"] != "answer_gen" else "decision"
    lines[0] = json.dumps(tampered, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    mix.write_text("\n".join(lines) + "\n")
    with pytest.raises(IntegrityError):
        mixture_stats(mix)


def test_mixture_stats_missing_or_empty(tmp_path):
    with pytest.raises(EmptyMixtureError):
        mixture_stats(tmp_path / "nope.jsonl")
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    manifest_path(empty).write_text(json.dumps({
        "total_trajectories": 0, "total_examples": 0, "per_step_counts": {},
        "repeats_per_question": 0, "filter_stats": {}, "content_hash": "x",
    }))
    with pytest.raises(EmptyMixtureError):
        mixture_stats(empty)


def test_step_economics_property(tmp_path):
    """examples per trajectory = 2s+4 on voluntary stop, 2s+3 on budget
    exhaustion, straight from the state machine."""
    questions = make_questions(30, prefix="ec")
    llm, search = backends(seed=21)
    log = tmp_path / "log.jsonl"
    grow(questions, 1, CFG, llm, search, out_path=log, templates=LIB)
    for record in read_jsonl(log):
        assert record["status"] == "completed"
        target = llm.plan_target(record["question"]["text"])
        s = min(target, CFG.max_searches)
        expected = 2 * s + (4 if target < CFG.max_searches else 3)
        assert len(record["steps"]) == expected
