"""Caption-as-proxy evaluation: a judge model answers each multiple-choice
question from the caption alone, with scene hints and an "E. Not mentioned"
escape; Acc/Hall/N.M. metrics, three-run consistency classes, and report
aggregation sit on top of the per-question verdicts.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .errors import ReportError, StructuredOutputError, TransportError, VerdictParseError
from .gateway import ChatRequest, Gateway, TextPart, _first_json_value
from .pipeline import PipelineOptions
from .qa import QuestionOptions, SceneHint
from .templates import render_template

logger = logging.getLogger(__name__)

LETTERS = ("A", "B", "C", "D", "E")
OPTION_LETTERS = ("A", "B", "C", "D")

CONSISTENCY_CLASSES = (
    "consistent_correct",
    "consistent_wrong",
    "consistent_not_mentioned",
    "inconsistent_due_to_E",
    "fully_inconsistent",
)

_LEADING_LETTER = re.compile(r"^\s*([A-Ea-e])(?:[.):,;\s]|$)")


@dataclass(frozen=True)
class JudgeVerdict:
    choice: Optional[str]  # None marks a judge-failure
    raw_text: str


@dataclass(frozen=True)
class EvalCounts:
    n_c: int = 0
    n_w: int = 0
    n_e: int = 0

    def __post_init__(self):
        if min(self.n_c, self.n_w, self.n_e) < 0:
            raise ValueError("counts must be non-negative")

    def to_json(self) -> dict:
        return {"n_c": self.n_c, "n_w": self.n_w, "n_e": self.n_e}


@dataclass(frozen=True)
class Metrics:
    acc: float
    hall: float
    nm: float

    def to_json(self) -> dict:
        return {"acc": self.acc, "hall": self.hall, "nm": self.nm}


@dataclass(frozen=True)
class EvalRecord:
    question_id: str
    video_id: str
    level: str
    qtype: str
    gold: str  # correct letter A..D
    verdicts: tuple[JudgeVerdict, ...]
    scene_index: Optional[int] = None


def parse_verdict(text: str) -> str:
    """A structured {"answer": "X"} reply or a bare leading letter; anything
    else is a parse error (never silently defaulted)."""
    try:
        value = _first_json_value(text)
    except StructuredOutputError:
        value = None
    if isinstance(value, dict):
        answer = value.get("answer")
        if isinstance(answer, str) and answer.strip().upper() in LETTERS:
            return answer.strip().upper()
        raise VerdictParseError(f"structured reply lacks a valid answer: {text!r}")
    match = _LEADING_LETTER.match(text)
    if match:
        return match.group(1).upper()
    raise VerdictParseError(f"no unambiguous option letter in {text!r}")


def _render_options(item: QuestionOptions) -> str:
    return "\n".join(
        f"{letter}. {text}" for letter, text in zip(OPTION_LETTERS, item.options)
    )


def neighbor_hints(hints: Sequence[SceneHint], scene_index: int) -> list[SceneHint]:
    by_index = {h.scene_index: h for h in hints}
    out = []
    for adjacent in (scene_index - 1, scene_index + 1):
        if adjacent in by_index:
            out.append(by_index[adjacent])
    return out


def judge_question(gateway: Gateway, opts: PipelineOptions, caption: str,
                   item: QuestionOptions, question_id: str,
                   hints: Sequence[SceneHint] = ()) -> JudgeVerdict:
    """One judged answer; an unparseable reply after the repair re-prompt
    becomes a judge-failure (choice None), never a defaulted letter."""
    if not caption.strip():
        raise ValueError("caption must be non-empty")
    fields = {
        "caption": caption,
        "question": item.question,
        "options": _render_options(item),
    }
    enable = frozenset()
    if item.level == "scene":
        adjacent = neighbor_hints(hints, item.scene_index or 0)
        fields["scene_hint"] = item.scene_hint
        fields["neighbor_hints"] = (
            "; ".join(h.text for h in adjacent) if adjacent else "(none)"
        )
        enable = frozenset({"hints"})
    prompt = render_template("judge", fields, enable=enable)
    request = ChatRequest(model_name=opts.model_name, messages=(TextPart(prompt),),
                          max_tokens=64, tag=f"judge/{question_id}")
    try:
        response = gateway.complete(request)
    except TransportError as err:
        logger.warning("judge transport failure on %s: %s", question_id, err)
        return JudgeVerdict(choice=None, raw_text=str(err))
    try:
        return JudgeVerdict(choice=parse_verdict(response.text),
                            raw_text=response.text)
    except VerdictParseError:
        pass
    repair = ChatRequest(
        model_name=opts.model_name,
        messages=(TextPart(prompt), TextPart(
            f"Previous reply:\n{response.text}\n\nThat could not be parsed. "
            "Reply with ONLY one letter among A, B, C, D, E."
        )),
        max_tokens=64,
        tag=f"judge/{question_id}/repair",
    )
    try:
        response = gateway.complete(repair)
        return JudgeVerdict(choice=parse_verdict(response.text),
                            raw_text=response.text)
    except (VerdictParseError, TransportError) as err:
        logger.warning("judge failure on %s: %s", question_id, err)
        return JudgeVerdict(choice=None, raw_text=response.text)


def compute_metrics(counts: EvalCounts) -> Metrics:
    total = counts.n_c + counts.n_w + counts.n_e
    committed = counts.n_c + counts.n_w
    return Metrics(
        acc=counts.n_c / total if total else 0.0,
        hall=counts.n_w / committed if committed else 0.0,
        nm=counts.n_e / total if total else 0.0,
    )


def qa_per_video(n_questions: int, n_videos: int) -> float:
    return n_questions / n_videos if n_videos else 0.0


def tally_run(records: Sequence[EvalRecord], run: int) -> tuple[EvalCounts, int]:
    """Counts for one run index; judge-failures are excluded from the counts
    and returned separately."""
    n_c = n_w = n_e = failures = 0
    for record in records:
        verdict = record.verdicts[run]
        if verdict.choice is None:
            failures += 1
        elif verdict.choice == "E":
            n_e += 1
        elif verdict.choice == record.gold:
            n_c += 1
        else:
            n_w += 1
    return EvalCounts(n_c=n_c, n_w=n_w, n_e=n_e), failures


def classify_consistency(verdicts: Sequence[JudgeVerdict], gold: str) -> str:
    """Three-run agreement class; any judge-failure makes the item
    unclassifiable."""
    if len(verdicts) != 3:
        raise ValueError("consistency is defined over exactly three runs")
    if gold not in OPTION_LETTERS:
        raise ValueError(f"gold letter {gold!r} must be one of A..D")
    choices = [v.choice for v in verdicts]
    if any(c is None for c in choices):
        return "unclassifiable"
    distinct = set(choices)
    if len(distinct) == 1:
        common = choices[0]
        if common == "E":
            return "consistent_not_mentioned"
        return "consistent_correct" if common == gold else "consistent_wrong"
    if "E" in distinct and len(distinct - {"E"}) == 1:
        return "inconsistent_due_to_E"
    return "fully_inconsistent"


def aggregate_report(records: Sequence[EvalRecord], runs: int = 3) -> dict:
    """Per-run metrics, their mean, pooled-count metrics (both emitted since
    either averaging reading is defensible), consistency histogram, and a
    per-qtype breakdown."""
    if not records:
        raise ReportError("no evaluation records")
    for record in records:
        if len(record.verdicts) != runs:
            raise ReportError(
                f"{record.question_id} has {len(record.verdicts)} runs, expected {runs}"
            )

    per_run = []
    pooled_c = pooled_w = pooled_e = 0
    for run in range(runs):
        counts, failures = tally_run(records, run)
        pooled_c += counts.n_c
        pooled_w += counts.n_w
        pooled_e += counts.n_e
        per_run.append({
            "counts": counts.to_json(),
            "metrics": compute_metrics(counts).to_json(),
            "judge_failures": failures,
        })
    mean_metrics = {
        key: sum(r["metrics"][key] for r in per_run) / runs
        for key in ("acc", "hall", "nm")
    }
    pooled_counts = EvalCounts(n_c=pooled_c, n_w=pooled_w, n_e=pooled_e)

    consistency: Counter = Counter()
    if runs == 3:
        for record in records:
            consistency[classify_consistency(record.verdicts, record.gold)] += 1

    per_qtype = {}
    for qtype in sorted({r.qtype for r in records}):
        subset = [r for r in records if r.qtype == qtype]
        n_c = n_w = n_e = 0
        for run in range(runs):
            counts, _ = tally_run(subset, run)
            n_c, n_w, n_e = n_c + counts.n_c, n_w + counts.n_w, n_e + counts.n_e
        counts = EvalCounts(n_c=n_c, n_w=n_w, n_e=n_e)
        per_qtype[qtype] = {
            "n_questions": len(subset),
            "counts": counts.to_json(),
            "metrics": compute_metrics(counts).to_json(),
        }

    n_videos = len({r.video_id for r in records})
    return {
        "runs": runs,
        "n_questions": len(records),
        "n_videos": n_videos,
        "qa_per_video": qa_per_video(len(records), n_videos),
        "per_run": per_run,
        "mean_metrics": mean_metrics,
        "pooled": {
            "counts": pooled_counts.to_json(),
            "metrics": compute_metrics(pooled_counts).to_json(),
        },
        "consistency": {
            key: consistency.get(key, 0)
            for key in CONSISTENCY_CLASSES + ("unclassifiable",)
        },
        "per_qtype": per_qtype,
    }


# --- harness driver ----------------------------------------------------------

def run_judge(gateway: Gateway, opts: PipelineOptions, caption: str,
              corpus: Sequence[tuple[str, str, QuestionOptions]],
              hints: Sequence[SceneHint], runs: int = 3) -> list[EvalRecord]:
    """Judge every question `runs` times; parallel across questions within
    a run, runs sequential."""
    verdicts_by_question: dict[str, list[JudgeVerdict]] = {
        qid: [] for qid, _, _ in corpus
    }
    for _ in range(runs):
        def job(entry):
            question_id, _, item = entry
            return question_id, judge_question(gateway, opts, caption, item,
                                               question_id, hints)
        with ThreadPoolExecutor(max_workers=opts.fan_out) as pool:
            for question_id, verdict in pool.map(job, corpus):
                verdicts_by_question[question_id].append(verdict)

    return [
        EvalRecord(
            question_id=question_id,
            video_id=video_id,
            level=item.level,
            qtype=item.qtype,
            gold=OPTION_LETTERS[item.correct_index],
            scene_index=item.scene_index,
            verdicts=tuple(verdicts_by_question[question_id]),
        )
        for question_id, video_id, item in corpus
    ]


def save_run_verdicts(path: Path, records: Sequence[EvalRecord], run: int) -> None:
    lines = [
        json.dumps(
            {
                "question_id": r.question_id,
                "choice": r.verdicts[run].choice,
                "raw_text": r.verdicts[run].raw_text,
            },
            sort_keys=True,
        )
        for r in records
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def hints_from_corpus(corpus: Sequence[tuple[str, str, QuestionOptions]]) -> list[SceneHint]:
    """Recover the per-scene hint list carried on scene-level items."""
    seen: dict[int, str] = {}
    for _, _, item in corpus:
        if item.level == "scene" and item.scene_index is not None:
            seen.setdefault(item.scene_index, item.scene_hint)
    return [SceneHint(scene_index=k, text=v) for k, v in sorted(seen.items())]
