"""Caption pipeline: overview, per-keyframe dual-stream locals, adaptive
scene split, sequential scene summaries, and the final concatenation.

The run is a dependency DAG over gateway calls. The overview blocks
everything; per-keyframe work then fans out in parallel (bounded by the
gateway's in-flight limit); the scene chain is strictly sequential because
each scene caption feeds the next. Every intermediate lands in the video
workspace so stages can be re-run independently.

Four switches disable individual features for ablation runs: visual
prompting (marked images + supplementary text), the overview caption, the
dual-stream structure, and the adaptive scene split. Each switch changes
only its documented inputs; the template block mechanism guarantees the
corresponding prompt phrases vanish with the feature.
"""

from __future__ import annotations

import json
import logging
import re
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import StageError, StructuredOutputError, TransportError, WorkspaceError
from .gateway import ChatRequest, Gateway, TextPart, image_part, request_structured
from .keyframes import ShotList, frame_path, load_keyframes, load_shots
from .marking import marked_image_path
from .templates import render_template
from .tracking import build_supplementary_text, load_tracks

logger = logging.getLogger(__name__)

_ID_TOKEN = re.compile(r"#(\d+)")


@dataclass(frozen=True)
class PipelineOptions:
    model_name: str = "gpt-4o"
    visual_prompt: bool = True
    overview_caption: bool = True
    dual_stream: bool = True
    adaptive_scene_split: bool = True
    fan_out: int = 4
    max_tokens: int = 2048
    image_max_side: int = 1024


@dataclass(frozen=True)
class OverviewSentence:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class OverviewCaption:
    sentences: tuple[OverviewSentence, ...]

    def rendered(self) -> str:
        return "\n".join(
            f"- {s.text} [keyframes {s.start}-{s.end}]" for s in self.sentences
        )

    def to_json(self) -> dict:
        return {
            "sentences": [
                {"text": s.text, "range": [s.start, s.end]} for s in self.sentences
            ]
        }

    @classmethod
    def from_json(cls, doc: dict) -> "OverviewCaption":
        return cls(
            sentences=tuple(
                OverviewSentence(text=s["text"], start=s["range"][0], end=s["range"][1])
                for s in doc["sentences"]
            )
        )


@dataclass(frozen=True)
class LocalCaption:
    keyframe_index: int
    diff_text: Optional[str]
    detail_text: Optional[str]
    merged_text: str
    object_ids_mentioned: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "keyframe_index": self.keyframe_index,
            "diff_text": self.diff_text,
            "detail_text": self.detail_text,
            "merged_text": self.merged_text,
            "object_ids_mentioned": list(self.object_ids_mentioned),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LocalCaption":
        return cls(
            keyframe_index=doc["keyframe_index"],
            diff_text=doc["diff_text"],
            detail_text=doc["detail_text"],
            merged_text=doc["merged_text"],
            object_ids_mentioned=tuple(doc["object_ids_mentioned"]),
        )


@dataclass(frozen=True)
class SceneSegmentation:
    scenes: tuple[tuple[int, int], ...]

    def scene_of(self, keyframe: int) -> int:
        for idx, (st, ed) in enumerate(self.scenes, start=1):
            if st <= keyframe <= ed:
                return idx
        raise ValueError(f"keyframe {keyframe} outside segmentation")


@dataclass(frozen=True)
class SceneCaption:
    scene_index: int
    text: str


@dataclass(frozen=True)
class VideoCaption:
    text: str
    scene_offsets: tuple[tuple[int, int], ...]  # (scene_index, char_start)


@dataclass
class RunResult:
    overview: OverviewCaption
    locals: dict[int, LocalCaption]
    segmentation: SceneSegmentation
    scene_captions: list[SceneCaption]
    video: VideoCaption
    manifest: dict = field(default_factory=dict)


def mentioned_ids(text: str) -> tuple[int, ...]:
    return tuple(sorted({int(m) for m in _ID_TOKEN.findall(text)}))


def _enable(opts: PipelineOptions, *extra: str) -> frozenset[str]:
    blocks = set(extra)
    if opts.visual_prompt:
        blocks.add("marks")
    if opts.overview_caption:
        blocks.add("overview")
    return frozenset(blocks)


def _render_locals(local_captions: Sequence[LocalCaption]) -> str:
    return "\n".join(
        f"Keyframe {c.keyframe_index}: {c.merged_text}" for c in local_captions
    )


def _text_request(opts: PipelineOptions, prompt: str, tag: str,
                  images: Sequence = ()) -> ChatRequest:
    parts = [TextPart(prompt)]
    parts.extend(image_part(img, opts.image_max_side) for img in images)
    return ChatRequest(
        model_name=opts.model_name,
        messages=tuple(parts),
        max_tokens=opts.max_tokens,
        tag=tag,
    )


def _plain_completion(gateway: Gateway, request: ChatRequest, stage: str) -> str:
    try:
        text = gateway.complete(request).text.strip()
    except TransportError as err:
        raise StageError(f"{stage}: {err}") from err
    if not text:
        raise StageError(f"{stage}: empty model reply")
    return text


# --- stages ------------------------------------------------------------------

def generate_overview(gateway: Gateway, opts: PipelineOptions,
                      keyframe_images: Sequence) -> OverviewCaption:
    n = len(keyframe_images)
    if n < 1:
        raise StageError("overview: no keyframes")
    prompt = render_template("overview", {"n": n})
    request = _text_request(opts, prompt, "overview", images=keyframe_images)

    def check(doc: dict) -> None:
        if not doc["sentences"]:
            raise StructuredOutputError("overview reply has no sentences")
        for item in doc["sentences"]:
            if not isinstance(item, dict) or not isinstance(item.get("text"), str):
                raise StructuredOutputError("overview sentence lacks text")
            rng = item.get("range")
            if (not isinstance(rng, list) or len(rng) != 2
                    or not all(isinstance(v, int) for v in rng)):
                raise StructuredOutputError("overview sentence lacks a [start, end] range")

    try:
        doc, _ = request_structured(gateway, request, {"sentences": "list"}, check)
    except StructuredOutputError as err:
        raise StageError(f"overview: {err}") from err

    sentences = []
    for item in doc["sentences"]:
        start, end = item["range"]
        clamped = (min(max(start, 1), n), min(max(end, 1), n))
        clamped = (min(clamped), max(clamped))
        if clamped != (start, end):
            logger.warning("overview range [%d, %d] clamped to %s", start, end, clamped)
        sentences.append(OverviewSentence(text=item["text"].strip(),
                                          start=clamped[0], end=clamped[1]))
    return OverviewCaption(sentences=tuple(sentences))


def generate_diff(gateway: Gateway, opts: PipelineOptions, i: int,
                  prev_image, cur_image, supp_prev: str, supp_cur: str,
                  overview_text: str) -> str:
    if i < 2:
        raise ValueError("differential captions start at keyframe 2")
    prompt = render_template(
        "diff",
        {
            "i_prev": i - 1,
            "i_cur": i,
            "supp_prev": supp_prev or "(none)",
            "supp_cur": supp_cur or "(none)",
            "overview": overview_text,
        },
        enable=_enable(opts),
    )
    request = _text_request(opts, prompt, f"diff/{i:06d}",
                            images=[prev_image, cur_image])
    return _plain_completion(gateway, request, f"diff keyframe {i}")


def generate_detail(gateway: Gateway, opts: PipelineOptions, i: int,
                    original_image, marked_image, supp_cur: str,
                    overview_text: str) -> str:
    prompt = render_template(
        "detail",
        {"i_cur": i, "supp_cur": supp_cur or "(none)", "overview": overview_text},
        enable=_enable(opts),
    )
    images = [original_image, marked_image] if opts.visual_prompt else [original_image]
    request = _text_request(opts, prompt, f"detail/{i:06d}", images=images)
    return _plain_completion(gateway, request, f"detail keyframe {i}")


def merge_local(gateway: Gateway, opts: PipelineOptions, i: int,
                diff_text: Optional[str], detail_text: Optional[str],
                overview_text: str) -> Optional[LocalCaption]:
    if diff_text is None and detail_text is None:
        return None
    if diff_text is not None and detail_text is not None:
        variant = "both"
    elif detail_text is not None:
        variant = "detail_only"
    else:
        variant = "diff_only"
    prompt = render_template(
        "merge",
        {
            "diff_text": diff_text or "",
            "detail_text": detail_text or "",
            "overview": overview_text,
        },
        enable=_enable(opts, variant),
    )
    request = _text_request(opts, prompt, f"merge/{i:06d}")
    merged = _plain_completion(gateway, request, f"merge keyframe {i}")
    return LocalCaption(
        keyframe_index=i,
        diff_text=diff_text,
        detail_text=detail_text,
        merged_text=merged,
        object_ids_mentioned=mentioned_ids(merged),
    )


def shot_segments_for_keyframes(shots: ShotList,
                                keyframe_frame_indices: Sequence[int]) -> list[tuple[int, int]]:
    """Group 1-based keyframe ordinals by the shot containing their frame.

    A shot with no keyframe contributes no boundary, which folds it into
    its predecessor's segment.
    """
    if not keyframe_frame_indices:
        return []
    segments = []
    start = 1
    prev_shot = bisect_right(shots.cuts, keyframe_frame_indices[0]) - 1
    for ordinal, frame in enumerate(keyframe_frame_indices[1:], start=2):
        shot = bisect_right(shots.cuts, frame) - 1
        if shot != prev_shot:
            segments.append((start, ordinal - 1))
            start = ordinal
            prev_shot = shot
    segments.append((start, len(keyframe_frame_indices)))
    return segments


def _segmentation_problem(scenes, n: int, allowed_starts: set[int]) -> Optional[str]:
    if not isinstance(scenes, list) or not scenes:
        return "empty scene list"
    pairs = []
    for item in scenes:
        if (not isinstance(item, (list, tuple)) or len(item) != 2
                or not all(isinstance(v, int) for v in item)):
            return f"scene entry {item!r} is not an [start, end] integer pair"
        pairs.append((item[0], item[1]))
    if pairs[0][0] != 1:
        return "first scene must start at keyframe 1"
    if pairs[-1][1] != n:
        return f"last scene must end at keyframe {n}"
    for (st, ed) in pairs:
        if st > ed:
            return f"scene [{st}, {ed}] is reversed"
    for (_, prev_ed), (st, _) in zip(pairs, pairs[1:]):
        if st != prev_ed + 1:
            return f"scenes not contiguous at keyframe {st}"
    for (st, _) in pairs[1:]:
        if st not in allowed_starts:
            return f"scene boundary {st} falls inside a shot segment"
    return None


def adaptive_scene_split(gateway: Gateway, opts: PipelineOptions,
                         local_captions: Sequence[LocalCaption],
                         segments: Sequence[tuple[int, int]],
                         n: int) -> tuple[SceneSegmentation, str]:
    """Returns the segmentation plus an outcome note for the run manifest."""
    if not opts.adaptive_scene_split:
        return SceneSegmentation(scenes=((1, n),)), "disabled"
    if len(segments) <= 1:
        return SceneSegmentation(scenes=((1, n),)), "single_segment"

    allowed_starts = {st for st, _ in segments}
    prompt = render_template(
        "scene_split",
        {
            "n": n,
            "shot_segments": json.dumps([list(s) for s in segments]),
            "locals": _render_locals(local_captions),
        },
    )
    request = _text_request(opts, prompt, "scene_split")

    def check(doc: dict) -> None:
        problem = _segmentation_problem(doc["scenes"], n, allowed_starts)
        if problem:
            raise StructuredOutputError(problem)

    try:
        doc, _ = request_structured(gateway, request, {"scenes": "list"}, check)
    except StructuredOutputError as err:
        logger.warning("scene split proposal rejected (%s); using shot segments", err)
        return SceneSegmentation(scenes=tuple(segments)), "fallback"
    scenes = tuple((item[0], item[1]) for item in doc["scenes"])
    return SceneSegmentation(scenes=scenes), "ok"


def summarize_scene(gateway: Gateway, opts: PipelineOptions, scene_index: int,
                    st: int, ed: int, local_captions: Sequence[LocalCaption],
                    previous: Optional[SceneCaption],
                    overview_text: str) -> SceneCaption:
    fields = {
        "st": st,
        "ed": ed,
        "locals": _render_locals(local_captions),
        "overview": overview_text,
    }
    if previous is None:
        name = "scene_caption_first"
    else:
        name = "scene_caption_rest"
        fields["scene_index"] = scene_index
        fields["prev_scene"] = previous.text
    prompt = render_template(name, fields, enable=_enable(opts))
    request = _text_request(opts, prompt, f"scene/{scene_index:04d}")
    text = _plain_completion(gateway, request, f"scene {scene_index}")
    return SceneCaption(scene_index=scene_index, text=text)


def assemble_video_caption(scene_captions: Sequence[SceneCaption]) -> VideoCaption:
    if not scene_captions:
        raise StageError("assembly: no scene captions")
    for expected, caption in enumerate(scene_captions, start=1):
        if caption is None or caption.scene_index != expected:
            raise StageError(f"assembly: missing caption for scene {expected}")
    offsets = []
    cursor = 0
    chunks = []
    for caption in scene_captions:
        offsets.append((caption.scene_index, cursor))
        chunks.append(caption.text)
        cursor += len(caption.text) + 2  # blank-line separator
    return VideoCaption(text="\n\n".join(chunks), scene_offsets=tuple(offsets))


# --- orchestration -----------------------------------------------------------

def _load_workspace(workspace: Path, opts: PipelineOptions):
    ws = Path(workspace)
    indices, _dim = load_keyframes(ws / "keyframes.json")
    if not indices:
        raise WorkspaceError("keyframes.json lists no keyframes")
    shots = load_shots(ws / "shots.json")
    tracks_file = ws / "tracks.json"
    tracks = load_tracks(tracks_file) if tracks_file.exists() else {}

    originals = []
    marked = []
    for ordinal, frame_index in enumerate(indices, start=1):
        orig = frame_path(ws / "frames", frame_index)
        if not orig.exists():
            raise WorkspaceError(f"missing keyframe image {orig}")
        originals.append(orig)
        mark = marked_image_path(ws / "marked", ordinal)
        if opts.visual_prompt and not mark.exists():
            raise StageError(f"missing marked keyframe {mark}")
        marked.append(mark)
    return indices, shots, tracks, originals, marked


def run_pipeline(workspace: Path, gateway: Gateway, opts: PipelineOptions,
                 config_echo: Optional[dict] = None) -> RunResult:
    ws = Path(workspace)
    indices, shots, tracks, originals, marked = _load_workspace(ws, opts)
    n = len(indices)
    supp = {
        k: build_supplementary_text(tracks.get(k, [])) if opts.visual_prompt else ""
        for k in range(1, n + 1)
    }
    stages: dict[str, str] = {}

    if opts.overview_caption:
        overview = generate_overview(gateway, opts, originals)
        stages["overview"] = "ok"
    else:
        overview = OverviewCaption(sentences=())
        stages["overview"] = "disabled"
    overview_text = overview.rendered()

    def local_worker(k: int) -> tuple[int, Optional[LocalCaption], str]:
        diff_text = None
        detail_text = None
        notes = []
        if k >= 2:
            prev_img = marked[k - 2] if opts.visual_prompt else originals[k - 2]
            cur_img = marked[k - 1] if opts.visual_prompt else originals[k - 1]
            try:
                diff_text = generate_diff(gateway, opts, k, prev_img, cur_img,
                                          supp[k - 1], supp[k], overview_text)
            except StageError as err:
                logger.warning("%s", err)
                notes.append("diff_failed")
        if opts.dual_stream or k == 1:
            try:
                detail_text = generate_detail(gateway, opts, k, originals[k - 1],
                                              marked[k - 1], supp[k], overview_text)
            except StageError as err:
                logger.warning("%s", err)
                notes.append("detail_failed")

        if not opts.dual_stream:
            merged = diff_text if k >= 2 else detail_text
            if merged is None:
                return k, None, "skipped:no_streams"
            local = LocalCaption(
                keyframe_index=k,
                diff_text=diff_text,
                detail_text=detail_text,
                merged_text=merged,
                object_ids_mentioned=mentioned_ids(merged),
            )
            return k, local, "ok:single_stream"

        try:
            local = merge_local(gateway, opts, k, diff_text, detail_text, overview_text)
        except StageError as err:
            logger.warning("%s", err)
            return k, None, "failed:merge"
        if local is None:
            return k, None, "skipped:no_streams"
        status = "ok" if not notes else "degraded:" + ",".join(notes)
        return k, local, status

    with ThreadPoolExecutor(max_workers=opts.fan_out) as pool:
        results = list(pool.map(local_worker, range(1, n + 1)))

    local_captions: dict[int, LocalCaption] = {}
    for k, local, status in results:
        stages[f"local:{k:06d}"] = status
        if local is not None:
            local_captions[k] = local
    ordered_locals = [local_captions[k] for k in sorted(local_captions)]

    segments = shot_segments_for_keyframes(shots, indices)
    segmentation, split_outcome = adaptive_scene_split(
        gateway, opts, ordered_locals, segments, n
    )
    stages["scene_split"] = split_outcome

    scene_captions: list[SceneCaption] = []
    previous = None
    for scene_index, (st, ed) in enumerate(segmentation.scenes, start=1):
        in_scene = [c for c in ordered_locals if st <= c.keyframe_index <= ed]
        caption = summarize_scene(gateway, opts, scene_index, st, ed,
                                  in_scene, previous, overview_text)
        stages[f"scene:{scene_index:04d}"] = "ok"
        scene_captions.append(caption)
        previous = caption

    video = assemble_video_caption(scene_captions)
    stages["assembly"] = "ok"

    manifest = {
        "options": asdict(opts),
        "n_keyframes": n,
        "shot_segments": [list(s) for s in segments],
        "scenes": [list(s) for s in segmentation.scenes],
        "stages": stages,
    }
    if config_echo is not None:
        manifest["config"] = config_echo

    _write_artifacts(ws, overview, ordered_locals, segmentation, scene_captions,
                     video, manifest)
    return RunResult(
        overview=overview,
        locals=local_captions,
        segmentation=segmentation,
        scene_captions=scene_captions,
        video=video,
        manifest=manifest,
    )


def _write_artifacts(ws: Path, overview: OverviewCaption,
                     ordered_locals: Sequence[LocalCaption],
                     segmentation: SceneSegmentation,
                     scene_captions: Sequence[SceneCaption],
                     video: VideoCaption, manifest: dict) -> None:
    captions_dir = ws / "captions"
    local_dir = captions_dir / "local"
    local_dir.mkdir(parents=True, exist_ok=True)

    (captions_dir / "overview.json").write_text(
        json.dumps(overview.to_json(), indent=1, sort_keys=True) + "\n"
    )
    for local in ordered_locals:
        path = local_dir / f"{local.keyframe_index:06d}.json"
        path.write_text(json.dumps(local.to_json(), indent=1, sort_keys=True) + "\n")

    offsets = dict(video.scene_offsets)
    scenes_doc = {
        "scenes": [
            {
                "scene_index": caption.scene_index,
                "start_kf": segmentation.scenes[caption.scene_index - 1][0],
                "end_kf": segmentation.scenes[caption.scene_index - 1][1],
                "text": caption.text,
                "char_start": offsets[caption.scene_index],
            }
            for caption in scene_captions
        ]
    }
    (captions_dir / "scenes.json").write_text(
        json.dumps(scenes_doc, indent=1, sort_keys=True) + "\n"
    )
    (captions_dir / "video.txt").write_text(video.text + "\n")
    (ws / "run_manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    )
