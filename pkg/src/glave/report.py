"""Render an aggregated evaluation report as a markdown table set plus a
per-qtype accuracy figure."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _pct(value: float) -> str:
    return f"{value * 100:.2f}"


def _metrics_row(label: str, counts: dict, metrics: dict, extra: str = "") -> str:
    return (
        f"| {label} | {counts['n_c']} | {counts['n_w']} | {counts['n_e']} "
        f"| {_pct(metrics['acc'])} | {_pct(metrics['hall'])} | {_pct(metrics['nm'])} |"
        + (f" {extra}" if extra else "")
    )


def render_markdown(report: dict) -> str:
    lines = [
        "# Evaluation report",
        "",
        f"- questions: {report['n_questions']}",
        f"- videos: {report['n_videos']}",
        f"- QA per video: {report['qa_per_video']:.2f}",
        f"- runs per question: {report['runs']}",
        "",
        "## Per-run metrics",
        "",
        "| run | n_c | n_w | n_e | Acc | Hall | N.M. |",
        "|---|---|---|---|---|---|---|",
    ]
    for idx, run in enumerate(report["per_run"], start=1):
        lines.append(_metrics_row(f"run {idx}", run["counts"], run["metrics"]))
    pooled = report["pooled"]
    lines.append(_metrics_row("pooled", pooled["counts"], pooled["metrics"]))
    mean = report["mean_metrics"]
    lines += [
        "",
        f"Mean of per-run metrics: Acc {_pct(mean['acc'])}, "
        f"Hall {_pct(mean['hall'])}, N.M. {_pct(mean['nm'])}",
        "(pooled row aggregates counts across runs; both readings are reported)",
        "",
        "## Consistency over three runs",
        "",
        "| class | questions |",
        "|---|---|",
    ]
    for name, count in report["consistency"].items():
        lines.append(f"| {name} | {count} |")
    lines += [
        "",
        "## Per question type",
        "",
        "| qtype | questions | n_c | n_w | n_e | Acc | Hall | N.M. |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for qtype, entry in report["per_qtype"].items():
        counts, metrics = entry["counts"], entry["metrics"]
        lines.append(
            f"| {qtype} | {entry['n_questions']} | {counts['n_c']} | {counts['n_w']} "
            f"| {counts['n_e']} | {_pct(metrics['acc'])} | {_pct(metrics['hall'])} "
            f"| {_pct(metrics['nm'])} |"
        )
    return "\n".join(lines) + "\n"


def render_qtype_plot(report: dict, out_path: Path) -> Path:
    """Bar chart of per-qtype accuracy, written as a PNG next to the report."""
    qtypes = list(report["per_qtype"])
    accs = [report["per_qtype"][q]["metrics"]["acc"] * 100 for q in qtypes]
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(qtypes)), 4))
    ax.bar(range(len(qtypes)), accs, color="#4477aa")
    ax.set_xticks(range(len(qtypes)))
    ax.set_xticklabels(qtypes, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("Accuracy (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Accuracy by question type")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def write_report(eval_dir: Path, report: dict, plot: bool = True) -> list[Path]:
    """report.json + report.md (+ accuracy figure); returns written paths."""
    eval_dir = Path(eval_dir)
    eval_dir.mkdir(parents=True, exist_ok=True)
    written = []
    json_path = eval_dir / "report.json"
    json_path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    written.append(json_path)
    md_path = eval_dir / "report.md"
    md_path.write_text(render_markdown(report))
    written.append(md_path)
    if plot:
        written.append(render_qtype_plot(report, eval_dir / "accuracy_by_qtype.png"))
    return written
