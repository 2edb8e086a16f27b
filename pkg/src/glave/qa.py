"""Benchmark QA generation: scene-level and global question-answer pairs,
atomicity/neutrality refinement, four-option construction with seeded
shuffling, scene hints, and source-video filtering.

Caps are enforced structurally: no matter what the model returns, a scene
never yields more than one pair per type and a video never yields more than
five global pairs per type (twenty total).
"""

from __future__ import annotations

import json
import logging
import random
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .errors import StageError, StructuredOutputError, TransportError
from .gateway import ChatRequest, Gateway, TextPart, image_part, request_structured
from .pipeline import PipelineOptions, SceneCaption
from .templates import render_template

logger = logging.getLogger(__name__)

# Scene-level registry: twelve description-oriented types plus Visual-cue.
SCENE_QTYPES: tuple[str, ...] = (
    "Object appearance",
    "Object count",
    "Object location",
    "Object action",
    "Action sequence",
    "Human activity",
    "Scene setting",
    "Text and symbols",
    "Camera movement",
    "Spatial relation",
    "Temporal order",
    "Attribute change",
    "Visual-cue",
)

GLOBAL_QTYPES: tuple[str, ...] = (
    "Global appearance",
    "Global action sequence",
    "Plot understanding",
    "Video theme",
)

GLOBAL_PER_TYPE_CAP = 5
GLOBAL_TOTAL_CAP = 20


@dataclass(frozen=True)
class QAPair:
    pair_id: int
    question: str
    answer: str
    qtype: str
    level: str  # "scene" | "global"
    scene_index: Optional[int] = None
    lineage: Optional[int] = None
    review_status: str = "unreviewed"


@dataclass(frozen=True)
class QuestionOptions:
    question: str
    options: tuple[str, str, str, str]
    correct_index: int
    level: str
    qtype: str
    scene_index: Optional[int] = None
    scene_hint: str = ""
    lineage: Optional[int] = None

    def __post_init__(self):
        if len(self.options) != 4:
            raise ValueError("exactly four options required")
        if not 0 <= self.correct_index <= 3:
            raise ValueError("correct_index out of range")


@dataclass(frozen=True)
class SceneHint:
    scene_index: int
    text: str


@dataclass(frozen=True)
class FilterCandidate:
    video_id: str
    duration_s: float
    shot_count: int
    sample_frames: tuple = ()


def _validate_pair_items(doc: dict) -> None:
    for item in doc["pairs"]:
        if not isinstance(item, dict):
            raise StructuredOutputError(f"pair entry {item!r} is not an object")
        for key in ("question", "answer"):
            if not isinstance(item.get(key), str) or not item[key].strip():
                raise StructuredOutputError(f"pair entry lacks {key}")


def _collect_pairs(doc: dict, registry: Sequence[str], level: str,
                   scene_index: Optional[int], per_type_cap: int,
                   total_cap: Optional[int], id_start: int) -> list[QAPair]:
    per_type: dict[str, int] = {}
    pairs: list[QAPair] = []
    next_id = id_start
    for item in doc["pairs"]:
        qtype = item.get("qtype")
        if qtype not in registry:
            logger.warning("dropping pair with unknown qtype %r", qtype)
            continue
        if per_type.get(qtype, 0) >= per_type_cap:
            logger.warning("dropping pair over the per-type cap for %r", qtype)
            continue
        if total_cap is not None and len(pairs) >= total_cap:
            logger.warning("dropping pair over the total cap")
            continue
        per_type[qtype] = per_type.get(qtype, 0) + 1
        pairs.append(
            QAPair(
                pair_id=next_id,
                question=item["question"].strip(),
                answer=item["answer"].strip(),
                qtype=qtype,
                level=level,
                scene_index=scene_index,
            )
        )
        next_id += 1
    return pairs


def gen_scene_qas(gateway: Gateway, opts: PipelineOptions, scene: SceneCaption,
                  registry: Sequence[str] = SCENE_QTYPES,
                  id_start: int = 1) -> list[QAPair]:
    """At most one pair per registered type for one scene; parse failure
    after repair yields an empty list."""
    prompt = render_template(
        "qa_scene",
        {
            "scene_caption": scene.text,
            "qtypes": "\n".join(f"- {t}" for t in registry),
        },
    )
    request = ChatRequest(model_name=opts.model_name, messages=(TextPart(prompt),),
                          max_tokens=opts.max_tokens,
                          tag=f"qa_scene/{scene.scene_index:04d}")
    try:
        doc, _ = request_structured(gateway, request, {"pairs": "list"},
                                    _validate_pair_items)
    except (StructuredOutputError, TransportError) as err:
        logger.warning("scene %d QA generation failed: %s", scene.scene_index, err)
        return []
    return _collect_pairs(doc, registry, "scene", scene.scene_index,
                          per_type_cap=1, total_cap=None, id_start=id_start)


def gen_global_qas(gateway: Gateway, opts: PipelineOptions, video_caption: str,
                   registry: Sequence[str] = GLOBAL_QTYPES,
                   id_start: int = 1) -> list[QAPair]:
    """At most five pairs per global type, twenty total per video."""
    prompt = render_template(
        "qa_global",
        {
            "video_caption": video_caption,
            "qtypes": "\n".join(f"- {t}" for t in registry),
        },
    )
    request = ChatRequest(model_name=opts.model_name, messages=(TextPart(prompt),),
                          max_tokens=opts.max_tokens, tag="qa_global")
    try:
        doc, _ = request_structured(gateway, request, {"pairs": "list"},
                                    _validate_pair_items)
    except (StructuredOutputError, TransportError) as err:
        logger.warning("global QA generation failed: %s", err)
        return []
    return _collect_pairs(doc, registry, "global", None,
                          per_type_cap=GLOBAL_PER_TYPE_CAP,
                          total_cap=GLOBAL_TOTAL_CAP, id_start=id_start)


def refine_qas(gateway: Gateway, opts: PipelineOptions,
               pairs: Sequence[QAPair], tag: str = "qa_refine") -> list[QAPair]:
    """Split non-atomic questions and neutralize leaky wording; on any
    failure the input comes back unmodified."""
    if not pairs:
        return []
    by_id = {p.pair_id: p for p in pairs}
    rendered = json.dumps(
        [
            {"id": p.pair_id, "qtype": p.qtype, "question": p.question,
             "answer": p.answer}
            for p in pairs
        ],
        indent=1,
    )
    prompt = render_template("qa_refine", {"pairs": rendered})
    request = ChatRequest(model_name=opts.model_name, messages=(TextPart(prompt),),
                          max_tokens=opts.max_tokens, tag=tag)

    def check(doc: dict) -> None:
        for item in doc["pairs"]:
            if not isinstance(item, dict) or not isinstance(item.get("source_id"), int):
                raise StructuredOutputError("refined pair lacks an integer source_id")
            for key in ("question", "answer"):
                if not isinstance(item.get(key), str) or not item[key].strip():
                    raise StructuredOutputError(f"refined pair lacks {key}")

    try:
        doc, _ = request_structured(gateway, request, {"pairs": "list"}, check)
    except (StructuredOutputError, TransportError) as err:
        logger.warning("refinement failed, keeping pairs unmodified: %s", err)
        return list(pairs)

    refined = []
    for item in doc["pairs"]:
        source = by_id.get(item["source_id"])
        if source is None:
            logger.warning("dropping refined pair with unknown source_id %r",
                           item["source_id"])
            continue
        refined.append(
            replace(source, question=item["question"].strip(),
                    answer=item["answer"].strip(), lineage=source.pair_id)
        )
    return refined


def shuffle_options(answer: str, distractors: Sequence[str],
                    rng_seed: int) -> tuple[tuple[str, str, str, str], int]:
    items = [(answer, True)] + [(d, False) for d in distractors[:3]]
    random.Random(rng_seed).shuffle(items)
    texts = tuple(text for text, _ in items)
    correct_index = next(i for i, (_, is_answer) in enumerate(items) if is_answer)
    return texts, correct_index


def gen_options(gateway: Gateway, opts: PipelineOptions, pair: QAPair,
                context_caption: str, rng_seed: int,
                scene_hint: str = "") -> Optional[QuestionOptions]:
    """Three model-proposed distractors plus the answer, seeded shuffle;
    fewer than three usable distractors after the repair drops the pair."""
    prompt = render_template(
        "qa_options",
        {"question": pair.question, "answer": pair.answer,
         "context": context_caption},
    )
    request = ChatRequest(model_name=opts.model_name, messages=(TextPart(prompt),),
                          max_tokens=opts.max_tokens,
                          tag=f"qa_options/{pair.pair_id:04d}")

    def usable(doc: dict) -> list[str]:
        seen = set()
        out = []
        for d in doc["distractors"]:
            if not isinstance(d, str):
                continue
            text = d.strip()
            if not text or text == pair.answer or text in seen:
                continue
            seen.add(text)
            out.append(text)
        return out

    def check(doc: dict) -> None:
        if len(usable(doc)) < 3:
            raise StructuredOutputError("fewer than three usable distractors")

    try:
        doc, _ = request_structured(gateway, request, {"distractors": "list"}, check)
    except (StructuredOutputError, TransportError) as err:
        logger.warning("dropping pair %d: %s", pair.pair_id, err)
        return None

    options, correct_index = shuffle_options(pair.answer, usable(doc), rng_seed)
    return QuestionOptions(
        question=pair.question,
        options=options,
        correct_index=correct_index,
        level=pair.level,
        qtype=pair.qtype,
        scene_index=pair.scene_index,
        scene_hint=scene_hint,
        lineage=pair.lineage if pair.lineage is not None else pair.pair_id,
    )


def gen_scene_hints(gateway: Gateway, opts: PipelineOptions,
                    scene_captions: Sequence[SceneCaption]) -> list[SceneHint]:
    """One hint per scene, pairwise distinct; duplicates surviving the
    repair get a "(part k)" suffix."""
    if not scene_captions:
        raise StageError("scene hints need at least one scene")
    n = len(scene_captions)
    prompt = render_template(
        "qa_hints",
        {
            "n": n,
            "scene_captions": "\n".join(
                f"Scene {c.scene_index}: {c.text}" for c in scene_captions
            ),
        },
    )
    request = ChatRequest(model_name=opts.model_name, messages=(TextPart(prompt),),
                          max_tokens=opts.max_tokens, tag="qa_hints")

    def check(doc: dict) -> None:
        hints = doc["hints"]
        if len(hints) != n:
            raise StructuredOutputError(f"expected {n} hints, got {len(hints)}")
        for h in hints:
            if not isinstance(h, str) or not h.strip():
                raise StructuredOutputError("empty hint")

    try:
        doc, _ = request_structured(gateway, request, {"hints": "list"}, check)
    except (StructuredOutputError, TransportError) as err:
        raise StageError(f"scene hints: {err}") from err

    seen: dict[str, int] = {}
    hints = []
    for caption, text in zip(scene_captions, doc["hints"]):
        text = text.strip()
        if text in seen:
            seen[text] += 1
            disambiguated = f"{text} (part {seen[text]})"
            logger.warning("duplicate hint %r rewritten as %r", text, disambiguated)
            text = disambiguated
        else:
            seen[text] = 1
        hints.append(SceneHint(scene_index=caption.scene_index, text=text))
    return hints


def filter_videos(candidates: Sequence[FilterCandidate],
                  quality_gate: bool = False,
                  gateway: Optional[Gateway] = None,
                  opts: Optional[PipelineOptions] = None) -> list[FilterCandidate]:
    """Keep candidates with duration in [30, 180] s and 2..10 shots; the
    optional gate additionally asks the model for stable camera and a clear
    theme over sampled frames."""
    kept = [
        c for c in candidates
        if 30 <= c.duration_s <= 180 and 2 <= c.shot_count <= 10
    ]
    if not quality_gate:
        return kept
    if gateway is None or opts is None:
        raise ValueError("the quality gate needs a gateway and options")

    gated = []
    for c in kept:
        prompt = render_template(
            "video_filter", {"duration": c.duration_s, "shot_count": c.shot_count}
        )
        parts = [TextPart(prompt)]
        parts.extend(image_part(f, opts.image_max_side) for f in c.sample_frames)
        request = ChatRequest(model_name=opts.model_name, messages=tuple(parts),
                              max_tokens=256, tag=f"video_filter/{c.video_id}")
        try:
            doc, _ = request_structured(gateway, request, {"keep": "bool"})
        except (StructuredOutputError, TransportError) as err:
            logger.warning("quality gate inconclusive for %s, rejecting: %s",
                           c.video_id, err)
            continue
        if doc["keep"]:
            gated.append(c)
    return gated


# --- corpus assembly ---------------------------------------------------------

def pair_seed(base_seed: int, video_id: str, ordinal: int) -> int:
    return base_seed ^ zlib.crc32(f"{video_id}/{ordinal}".encode("utf-8"))


def build_corpus(gateway: Gateway, opts: PipelineOptions, video_id: str,
                 scene_captions: Sequence[SceneCaption], video_caption: str,
                 base_seed: int = 0,
                 scene_registry: Sequence[str] = SCENE_QTYPES,
                 global_registry: Sequence[str] = GLOBAL_QTYPES) -> list[QuestionOptions]:
    """Full QA corpus for one captioned video, ready for `qa.jsonl`."""
    hints = {h.scene_index: h.text for h in gen_scene_hints(gateway, opts, scene_captions)}
    captions = {c.scene_index: c.text for c in scene_captions}

    def scene_job(scene: SceneCaption) -> list[QAPair]:
        raw = gen_scene_qas(gateway, opts, scene, scene_registry,
                            id_start=scene.scene_index * 1000)
        return refine_qas(gateway, opts, raw,
                          tag=f"qa_refine/scene{scene.scene_index:04d}")

    with ThreadPoolExecutor(max_workers=opts.fan_out) as pool:
        per_scene = list(pool.map(scene_job, scene_captions))

    raw_global = gen_global_qas(gateway, opts, video_caption, global_registry,
                                id_start=0)
    global_pairs = refine_qas(gateway, opts, raw_global, tag="qa_refine/global")

    corpus: list[QuestionOptions] = []
    ordinal = 0
    for scene, pairs in zip(scene_captions, per_scene):
        for pair in pairs:
            ordinal += 1
            item = gen_options(gateway, opts, pair, captions[scene.scene_index],
                               pair_seed(base_seed, video_id, ordinal),
                               scene_hint=hints[scene.scene_index])
            if item is not None:
                corpus.append(item)
    for pair in global_pairs:
        ordinal += 1
        item = gen_options(gateway, opts, pair, video_caption,
                           pair_seed(base_seed, video_id, ordinal))
        if item is not None:
            corpus.append(item)
    return corpus


def save_corpus(path: Path, video_id: str, corpus: Sequence[QuestionOptions]) -> None:
    lines = []
    for item in corpus:
        doc = {
            "video_id": video_id,
            "level": item.level,
            "qtype": item.qtype,
            "scene_index": item.scene_index,
            "scene_hint": item.scene_hint,
            "question": item.question,
            "options": list(item.options),
            "correct_index": item.correct_index,
            "lineage": item.lineage,
        }
        lines.append(json.dumps(doc, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_corpus(path: Path) -> list[tuple[str, str, QuestionOptions]]:
    """Yields (question_id, video_id, item) per line; ids are derived from
    the line position so the file itself stays the source of truth."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        doc = json.loads(line)
        item = QuestionOptions(
            question=doc["question"],
            options=tuple(doc["options"]),
            correct_index=doc["correct_index"],
            level=doc["level"],
            qtype=doc["qtype"],
            scene_index=doc["scene_index"],
            scene_hint=doc.get("scene_hint", ""),
            lineage=doc.get("lineage"),
        )
        out.append((f"{doc['video_id']}#{lineno:04d}", doc["video_id"], item))
    return out
