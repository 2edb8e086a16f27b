import json

from glave.evaluation import EvalRecord, JudgeVerdict, aggregate_report
from glave.report import render_markdown, render_qtype_plot, write_report


def sample_report():
    records = [
        EvalRecord(question_id="q1", video_id="v1", level="scene",
                   qtype="Scene setting", gold="A",
                   verdicts=tuple(JudgeVerdict(c, c) for c in "AAE")),
        EvalRecord(question_id="q2", video_id="v1", level="global",
                   qtype="Video theme", gold="B",
                   verdicts=tuple(JudgeVerdict(c, c) for c in "BCB")),
    ]
    return aggregate_report(records)


class TestMarkdown:
    def test_sections_present(self):
        text = render_markdown(sample_report())
        assert "# Evaluation report" in text
        assert "## Per-run metrics" in text
        assert "## Consistency over three runs" in text
        assert "## Per question type" in text

    def test_per_run_rows_and_pooled(self):
        text = render_markdown(sample_report())
        assert "| run 1 |" in text and "| run 3 |" in text
        assert "| pooled |" in text
        assert "both readings are reported" in text

    def test_percentages_formatted(self):
        report = sample_report()
        text = render_markdown(report)
        acc = report["per_run"][0]["metrics"]["acc"]
        assert f"{acc * 100:.2f}" in text


class TestPlot:
    def test_writes_png(self, tmp_path):
        out = render_qtype_plot(sample_report(), tmp_path / "acc.png")
        assert out.exists()
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


class TestWriteReport:
    def test_writes_json_markdown_and_figure(self, tmp_path):
        written = write_report(tmp_path, sample_report(), plot=True)
        names = {p.name for p in written}
        assert names == {"report.json", "report.md", "accuracy_by_qtype.png"}
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["n_questions"] == 2

    def test_plot_optional(self, tmp_path):
        written = write_report(tmp_path, sample_report(), plot=False)
        assert {p.name for p in written} == {"report.json", "report.md"}
