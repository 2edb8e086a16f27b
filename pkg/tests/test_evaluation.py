import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glave.errors import ReportError, VerdictParseError
from glave.evaluation import (
    EvalCounts,
    EvalRecord,
    JudgeVerdict,
    aggregate_report,
    classify_consistency,
    compute_metrics,
    hints_from_corpus,
    judge_question,
    neighbor_hints,
    parse_verdict,
    qa_per_video,
    run_judge,
    tally_run,
)
from glave.pipeline import PipelineOptions
from glave.qa import QuestionOptions, SceneHint

from conftest import ScriptedGateway
from oracles import consistency_by_cases, metrics_by_fractions

OPTS = PipelineOptions()


def question(level="scene", scene_index=1, hint="the blue room"):
    return QuestionOptions(
        question="What color is the room?",
        options=("Blue", "Red", "Green", "Grey"),
        correct_index=0,
        level=level,
        qtype="Scene setting",
        scene_index=scene_index,
        scene_hint=hint,
    )


def verdicts(*choices):
    return tuple(JudgeVerdict(choice=c, raw_text=c or "fail") for c in choices)


def record(qid, gold="A", choices=("A", "A", "A"), qtype="Scene setting",
           video_id="v1"):
    return EvalRecord(question_id=qid, video_id=video_id, level="scene",
                      qtype=qtype, gold=gold, verdicts=verdicts(*choices))


class TestParseVerdict:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ('{"answer": "C"}', "C"),
            ('```json\n{"answer": "e"}\n```', "E"),
            ("B. The red one", "B"),
            ("  d) because", "D"),
            ("A", "A"),
        ],
    )
    def test_accepted_forms(self, text, expected):
        assert parse_verdict(text) == expected

    @pytest.mark.parametrize(
        "text",
        ["F. none", "maybe A", "", "The answer is B", '{"answer": "correct"}'],
    )
    def test_rejected_forms(self, text):
        with pytest.raises(VerdictParseError):
            parse_verdict(text)

    def test_ambiguous_word_not_mistaken_for_letter(self):
        with pytest.raises(VerdictParseError):
            parse_verdict("Either of them")


class TestMetrics:
    def test_matches_exact_rational_oracle(self):
        import random

        rng = random.Random(0)
        for _ in range(300):
            n_c, n_w, n_e = (rng.randint(0, 400) for _ in range(3))
            got = compute_metrics(EvalCounts(n_c=n_c, n_w=n_w, n_e=n_e))
            acc, hall, nm = metrics_by_fractions(n_c, n_w, n_e)
            assert abs(got.acc - acc) <= 1e-12
            assert abs(got.hall - hall) <= 1e-12
            assert abs(got.nm - nm) <= 1e-12

    def test_zero_denominators(self):
        zero = compute_metrics(EvalCounts())
        assert (zero.acc, zero.hall, zero.nm) == (0.0, 0.0, 0.0)
        only_e = compute_metrics(EvalCounts(n_e=5))
        assert (only_e.acc, only_e.hall, only_e.nm) == (0.0, 0.0, 1.0)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            EvalCounts(n_c=-1)

    @given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
    @settings(max_examples=200, deadline=None)
    def test_identities(self, n_c, n_w, n_e):
        m = compute_metrics(EvalCounts(n_c=n_c, n_w=n_w, n_e=n_e))
        assert 0.0 <= m.acc <= 1.0 and 0.0 <= m.hall <= 1.0 and 0.0 <= m.nm <= 1.0
        if n_c + n_w + n_e:
            committed_rate = (n_c + n_w) / (n_c + n_w + n_e)
            assert m.acc + m.nm + m.hall * committed_rate == pytest.approx(1.0)

    def test_benchmark_scale_bookkeeping(self):
        assert qa_per_video(6491, 55) == pytest.approx(118.02, abs=0.01)
        assert qa_per_video(0, 0) == 0.0


class TestTally:
    def test_maps_choices_to_counts(self):
        records = [
            record("q1", gold="A", choices=("A", None, "E")),
            record("q2", gold="B", choices=("C", "B", "B")),
            record("q3", gold="D", choices=("E", "E", None)),
        ]
        counts, failures = tally_run(records, 0)
        assert (counts.n_c, counts.n_w, counts.n_e, failures) == (1, 1, 1, 0)
        counts, failures = tally_run(records, 1)
        assert (counts.n_c, counts.n_w, counts.n_e, failures) == (1, 0, 1, 1)
        counts, failures = tally_run(records, 2)
        assert (counts.n_c, counts.n_w, counts.n_e, failures) == (1, 0, 1, 1)


class TestConsistency:
    def test_exhaustive_against_case_oracle(self):
        letters = ["A", "B", "C", "D", "E"]
        for gold in "ABCD":
            for triple in itertools.product(letters, repeat=3):
                got = classify_consistency(verdicts(*triple), gold)
                assert got == consistency_by_cases(triple, gold), (triple, gold)

    def test_judge_failure_unclassifiable(self):
        assert classify_consistency(verdicts("A", None, "A"), "A") == "unclassifiable"

    def test_requires_three_runs(self):
        with pytest.raises(ValueError):
            classify_consistency(verdicts("A", "A"), "A")

    def test_gold_must_be_a_real_option(self):
        with pytest.raises(ValueError):
            classify_consistency(verdicts("A", "A", "A"), "E")


class TestAggregateReport:
    records = [
        record("q1", gold="A", choices=("A", "A", "A")),
        record("q2", gold="B", choices=("E", "B", "E"), qtype="Object count"),
        record("q3", gold="C", choices=("D", None, "C"), video_id="v2"),
    ]

    def test_shape_and_totals(self):
        report = aggregate_report(self.records)
        assert report["runs"] == 3
        assert report["n_questions"] == 3
        assert report["n_videos"] == 2
        assert report["qa_per_video"] == pytest.approx(1.5)
        assert len(report["per_run"]) == 3
        assert report["per_run"][1]["judge_failures"] == 1
        pooled = report["pooled"]["counts"]
        total = pooled["n_c"] + pooled["n_w"] + pooled["n_e"]
        assert total == 8  # 9 verdicts minus one judge-failure

    def test_consistency_histogram(self):
        report = aggregate_report(self.records)
        assert report["consistency"]["consistent_correct"] == 1
        assert report["consistency"]["inconsistent_due_to_E"] == 1
        assert report["consistency"]["unclassifiable"] == 1

    def test_mean_vs_pooled_are_both_reported(self):
        report = aggregate_report(self.records)
        assert set(report["mean_metrics"]) == {"acc", "hall", "nm"}
        assert set(report["pooled"]["metrics"]) == {"acc", "hall", "nm"}

    def test_per_qtype_breakdown(self):
        report = aggregate_report(self.records)
        assert set(report["per_qtype"]) == {"Scene setting", "Object count"}
        assert report["per_qtype"]["Object count"]["n_questions"] == 1

    def test_uneven_runs_rejected(self):
        bad = [EvalRecord(question_id="q", video_id="v", level="scene",
                          qtype="t", gold="A", verdicts=verdicts("A", "A"))]
        with pytest.raises(ReportError):
            aggregate_report(bad)

    def test_empty_rejected(self):
        with pytest.raises(ReportError):
            aggregate_report([])

    def test_two_run_report_skips_consistency(self):
        records = [EvalRecord(question_id="q", video_id="v", level="scene",
                              qtype="t", gold="A", verdicts=verdicts("A", "B"))]
        report = aggregate_report(records, runs=2)
        assert all(v == 0 for v in report["consistency"].values())


class TestNeighborHints:
    hints = [SceneHint(1, "first"), SceneHint(2, "second"), SceneHint(3, "third")]

    def test_adjacent_scenes(self):
        assert [h.text for h in neighbor_hints(self.hints, 2)] == ["first", "third"]

    def test_edges(self):
        assert [h.text for h in neighbor_hints(self.hints, 1)] == ["second"]
        assert [h.text for h in neighbor_hints(self.hints, 3)] == ["second"]


class TestJudgeQuestion:
    def test_scene_prompt_carries_hints(self):
        gw = ScriptedGateway(lambda p: '{"answer": "A"}')
        hints = [SceneHint(1, "the blue room"), SceneHint(2, "the red room")]
        verdict = judge_question(gw, OPTS, "caption", question(), "q1", hints)
        assert verdict.choice == "A"
        prompt = gw.sent[0]
        assert "the blue room" in prompt
        assert "the red room" in prompt
        assert "E. Not mentioned" in prompt

    def test_global_prompt_has_no_hint_block(self):
        gw = ScriptedGateway(lambda p: '{"answer": "B"}')
        item = question(level="global", scene_index=None, hint="")
        judge_question(gw, OPTS, "caption", item, "q1", [])
        assert "scene identified" not in gw.sent[0]

    def test_repair_rescues_one_bad_reply(self):
        replies = iter(["the answer is B", "B."])
        gw = ScriptedGateway(lambda p: next(replies))
        verdict = judge_question(gw, OPTS, "caption", question(), "q1", [])
        assert verdict.choice == "B"
        assert "ONLY one letter" in gw.sent[1]

    def test_double_failure_is_none_not_defaulted(self):
        gw = ScriptedGateway(lambda p: "no letter here")
        verdict = judge_question(gw, OPTS, "caption", question(), "q1", [])
        assert verdict.choice is None
        assert len(gw.sent) == 2

    def test_empty_caption_rejected(self):
        gw = ScriptedGateway(lambda p: "unused")
        with pytest.raises(ValueError):
            judge_question(gw, OPTS, " ", question(), "q1", [])


class TestRunJudge:
    def test_three_runs_per_question(self):
        gw = ScriptedGateway(lambda p: '{"answer": "E"}')
        corpus = [("q1", "v", question()), ("q2", "v", question(level="global",
                                                                scene_index=None))]
        records = run_judge(gw, OPTS, "caption", corpus, [], runs=3)
        assert [r.question_id for r in records] == ["q1", "q2"]
        assert all(len(r.verdicts) == 3 for r in records)
        assert all(r.gold == "A" for r in records)

    def test_hints_from_corpus_recovers_scene_hints(self):
        corpus = [
            ("q1", "v", question(scene_index=2, hint="second room")),
            ("q2", "v", question(scene_index=1, hint="first room")),
            ("q3", "v", question(level="global", scene_index=None, hint="")),
        ]
        hints = hints_from_corpus(corpus)
        assert [(h.scene_index, h.text) for h in hints] == [
            (1, "first room"), (2, "second room")]
