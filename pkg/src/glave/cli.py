"""Command-line entry point: one binary, subcommand per pipeline stage.

Exit codes: 0 success, 1 stage failure, 2 usage or configuration error.
Diagnostics go to stderr; artifacts go to the workspace.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import httpx
import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, FixtureMissingError, GlaveError, WorkspaceError
from .evaluation import aggregate_report, hints_from_corpus, run_judge, save_run_verdicts
from .gateway import Gateway, verify_fixtures
from .keyframes import (
    default_max_gap,
    detect_shots,
    frame_path,
    load_embedding_fixture,
    load_frame_manifest,
    load_keyframes,
    save_keyframes,
    save_shots,
    select_keyframes,
)
from .marking import marked_image_path, render_marks, save_marks
from .pipeline import run_pipeline
from .qa import FilterCandidate, build_corpus, filter_videos, load_corpus, save_corpus
from .pipeline import SceneCaption
from .raster import png_bytes, save_image
from .report import render_markdown, render_qtype_plot, write_report
from .tracking import TrackTable, assign_ids, load_detections, load_tracks, save_tracks

logger = logging.getLogger("glave")

CONFIG_FLAGS = (
    ("--endpoint", str, "chat-completion endpoint URL"),
    ("--model-name", str, "model identifier sent with each request"),
    ("--fixtures-dir", str, "directory of record/replay fixtures"),
    ("--embed-endpoint", str, "embedding service URL for keyframe selection"),
    ("--shot-threshold", float, "content-change cut threshold"),
    ("--min-shot-len", int, "minimum frames between cuts"),
    ("--similarity-threshold", float, "keyframe cosine-similarity threshold"),
    ("--max-gap", int, "maximum frames between keyframes (0 = derive)"),
    ("--overlap-threshold", float, "IoU threshold for track inheritance"),
    ("--fan-out", int, "parallel stage workers / in-flight requests"),
    ("--seed", int, "base seed for option shuffling"),
    ("--max-tokens", int, "completion token limit"),
    ("--max-retries", int, "live-transport retry limit"),
    ("--image-max-side", int, "long-side pixel cap for transmitted images"),
)

ABLATION_FLAGS = (
    ("--no-visual-prompt", "visual_prompt"),
    ("--no-overview-caption", "overview_caption"),
    ("--no-dual-stream", "dual_stream"),
    ("--no-adaptive-scene-split", "adaptive_scene_split"),
)


def _add_common(parser: argparse.ArgumentParser, workspace: bool = True) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file")
    if workspace:
        parser.add_argument("--workspace", type=Path, required=True,
                            help="per-video artifact directory")
    for flag, ftype, help_text in CONFIG_FLAGS:
        parser.add_argument(flag, type=ftype, default=None, help=help_text)
    for flag, dest in ABLATION_FLAGS:
        parser.add_argument(flag, dest=dest, action="store_const", const=False,
                            default=None, help=f"disable {dest.replace('_', ' ')}")
    transport = parser.add_mutually_exclusive_group()
    transport.add_argument("--live", dest="transport", action="store_const",
                           const="live", default=None)
    transport.add_argument("--record", dest="transport", action="store_const",
                           const="record")
    transport.add_argument("--replay", dest="transport", action="store_const",
                           const="replay")


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    override_keys = [flag[0].lstrip("-").replace("-", "_") for flag in CONFIG_FLAGS]
    override_keys += [dest for _, dest in ABLATION_FLAGS] + ["transport"]
    overrides = {
        key: getattr(args, key)
        for key in override_keys
        if getattr(args, key, None) is not None
    }
    return load_config(path=args.config, overrides=overrides)


def _fetch_embeddings(endpoint: str, frames) -> list[np.ndarray]:
    import base64

    vectors = []
    with httpx.Client(timeout=60.0) as client:
        for frame in frames:
            blob = base64.b64encode(png_bytes(frame.image)).decode("ascii")
            reply = client.post(f"{endpoint.rstrip('/')}/embed",
                                json={"image_b64": blob})
            reply.raise_for_status()
            doc = reply.json()
            vectors.append(np.asarray(doc["embedding"], dtype=np.float64))
    return vectors


# --- subcommands --------------------------------------------------------------

def cmd_keyframes(args: argparse.Namespace, cfg: RunConfig) -> int:
    ws = args.workspace
    frames = load_frame_manifest(ws)
    shots = detect_shots(frames, cfg.shot_threshold, cfg.min_shot_len)
    save_shots(ws / "shots.json", shots)

    fixture = ws / "embeddings.json"
    if fixture.exists():
        vectors = load_embedding_fixture(fixture)
        if len(vectors) != len(frames):
            raise WorkspaceError(
                f"embeddings.json holds {len(vectors)} vectors for "
                f"{len(frames)} frames"
            )
    elif cfg.embed_endpoint:
        vectors = _fetch_embeddings(cfg.embed_endpoint, frames)
    else:
        raise WorkspaceError(
            "no embeddings.json in the workspace and no embed_endpoint configured"
        )

    max_gap = cfg.max_gap or default_max_gap(frames)
    positions = select_keyframes(vectors, cfg.similarity_threshold, max_gap)
    indices = [frames[p].index for p in positions]
    save_keyframes(ws / "keyframes.json", indices, embedding_dim=len(vectors[0]))
    logger.info("%d cuts, %d keyframes over %d frames",
                len(shots.cuts), len(indices), len(frames))
    return 0


def cmd_track(args: argparse.Namespace, cfg: RunConfig) -> int:
    ws = args.workspace
    indices, _ = load_keyframes(ws / "keyframes.json")
    table = TrackTable()
    per_keyframe = {}
    for ordinal in range(1, len(indices) + 1):
        det_path = ws / "detections" / f"{ordinal:06d}.json"
        if det_path.exists():
            detections = load_detections(det_path)
        else:
            logger.warning("no detections file for keyframe %d", ordinal)
            detections = []
        tracked, table = assign_ids(detections, table, cfg.overlap_threshold,
                                    keyframe_index=ordinal)
        per_keyframe[ordinal] = tracked
    save_tracks(ws / "tracks.json", per_keyframe)
    logger.info("tracked %d keyframes, %d ids issued",
                len(indices), table.next_id - 1)
    return 0


def cmd_mark(args: argparse.Namespace, cfg: RunConfig) -> int:
    ws = args.workspace
    indices, _ = load_keyframes(ws / "keyframes.json")
    tracks = load_tracks(ws / "tracks.json")
    marked_dir = ws / "marked"
    marked_dir.mkdir(parents=True, exist_ok=True)
    rendered = []
    for ordinal, frame_index in enumerate(indices, start=1):
        image = frame_path(ws / "frames", frame_index)
        marked = render_marks(ordinal, image, tracks.get(ordinal, []))
        save_image(marked_image_path(marked_dir, ordinal), marked.image)
        rendered.append(marked)
    save_marks(ws / "marks.json", rendered)
    logger.info("marked %d keyframes", len(rendered))
    return 0


def cmd_caption(args: argparse.Namespace, cfg: RunConfig) -> int:
    gateway = Gateway(cfg.gateway_config())
    try:
        result = run_pipeline(args.workspace, gateway, cfg.pipeline_options(),
                              config_echo=cfg.to_json())
    finally:
        gateway.close()
    logger.info("captioned %d keyframes into %d scenes",
                len(result.locals), len(result.scene_captions))
    return 0


def _load_scene_captions(ws: Path) -> tuple[list[SceneCaption], str]:
    scenes_path = ws / "captions" / "scenes.json"
    video_path = ws / "captions" / "video.txt"
    if not scenes_path.exists() or not video_path.exists():
        raise WorkspaceError("caption artifacts missing; run the caption stage first")
    doc = json.loads(scenes_path.read_text())
    scenes = [
        SceneCaption(scene_index=s["scene_index"], text=s["text"])
        for s in doc["scenes"]
    ]
    return scenes, video_path.read_text().rstrip("\n")


def cmd_qagen(args: argparse.Namespace, cfg: RunConfig) -> int:
    ws = args.workspace
    scenes, video_caption = _load_scene_captions(ws)
    gateway = Gateway(cfg.gateway_config())
    try:
        corpus = build_corpus(gateway, cfg.pipeline_options(), args.video_id,
                              scenes, video_caption, base_seed=cfg.seed)
    finally:
        gateway.close()
    save_corpus(ws / "qa.jsonl", args.video_id, corpus)
    logger.info("wrote %d questions", len(corpus))
    return 0


def cmd_filter(args: argparse.Namespace, cfg: RunConfig) -> int:
    docs = json.loads(Path(args.input).read_text())
    candidates = [
        FilterCandidate(
            video_id=d["video_id"],
            duration_s=float(d["duration_s"]),
            shot_count=int(d["shot_count"]),
            sample_frames=tuple(d.get("sample_frames", ())),
        )
        for d in docs
    ]
    gateway = None
    if args.quality_gate:
        gateway = Gateway(cfg.gateway_config())
    try:
        kept = filter_videos(candidates, quality_gate=args.quality_gate,
                             gateway=gateway, opts=cfg.pipeline_options())
    finally:
        if gateway is not None:
            gateway.close()
    out = json.dumps(
        [
            {"video_id": c.video_id, "duration_s": c.duration_s,
             "shot_count": c.shot_count}
            for c in kept
        ],
        indent=1,
    )
    if args.output:
        Path(args.output).write_text(out + "\n")
    else:
        print(out)
    logger.info("kept %d of %d candidates", len(kept), len(candidates))
    return 0


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    ws = args.workspace
    qa_path = args.qa or ws / "qa.jsonl"
    caption_path = args.caption or ws / "captions" / "video.txt"
    if not Path(qa_path).exists():
        raise WorkspaceError(f"QA corpus {qa_path} not found")
    if not Path(caption_path).exists():
        raise WorkspaceError(f"caption file {caption_path} not found")
    corpus = load_corpus(qa_path)
    caption = Path(caption_path).read_text().rstrip("\n")
    hints = hints_from_corpus(corpus)

    gateway = Gateway(cfg.gateway_config())
    try:
        records = run_judge(gateway, cfg.pipeline_options(), caption, corpus,
                            hints, runs=args.runs)
    finally:
        gateway.close()

    eval_dir = ws / "eval" / args.method
    eval_dir.mkdir(parents=True, exist_ok=True)
    for run in range(args.runs):
        save_run_verdicts(eval_dir / f"run{run + 1}.jsonl", records, run)
    report = aggregate_report(records, runs=args.runs)
    write_report(eval_dir, report, plot=False)
    logger.info("judged %d questions x %d runs", len(records), args.runs)
    return 0


def cmd_report(args: argparse.Namespace, cfg: RunConfig) -> int:
    eval_dir = Path(args.eval_dir)
    report_path = eval_dir / "report.json"
    if not report_path.exists():
        raise WorkspaceError(f"no report.json under {eval_dir}; run eval first")
    report = json.loads(report_path.read_text())
    markdown = render_markdown(report)
    (eval_dir / "report.md").write_text(markdown)
    plot_path = args.plot or (eval_dir / "accuracy_by_qtype.png")
    render_qtype_plot(report, plot_path)
    sys.stdout.write(markdown)
    logger.info("figure written to %s", plot_path)
    return 0


def cmd_fixtures_verify(args: argparse.Namespace, cfg: RunConfig) -> int:
    fixtures_dir = Path(args.fixtures_dir or cfg.fixtures_dir)
    if not fixtures_dir.is_dir():
        raise WorkspaceError(f"fixtures directory {fixtures_dir} not found")
    bad = verify_fixtures(fixtures_dir)
    if bad:
        for key in bad:
            print(f"MISMATCH {key}", file=sys.stderr)
        return 1
    logger.info("all fixtures verified")
    return 0


# --- wiring -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glave",
        description="Video detailed-captioning pipeline and benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keyframes", help="detect shots and select keyframes")
    _add_common(p)
    p.set_defaults(func=cmd_keyframes)

    p = sub.add_parser("track", help="assign stable ids to per-keyframe detections")
    _add_common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("mark", help="render id-labeled boundary overlays")
    _add_common(p)
    p.set_defaults(func=cmd_mark)

    p = sub.add_parser("caption", help="run the captioning pipeline")
    _add_common(p)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("qagen", help="generate the QA corpus from captions")
    _add_common(p)
    p.add_argument("--video-id", required=True)
    p.set_defaults(func=cmd_qagen)

    p = sub.add_parser("filter", help="filter candidate videos for the benchmark")
    _add_common(p, workspace=False)
    p.add_argument("--input", required=True, type=Path,
                   help="JSON list of {video_id, duration_s, shot_count}")
    p.add_argument("--output", type=Path, default=None)
    p.add_argument("--quality-gate", action="store_true")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="judge a caption against a QA corpus")
    _add_common(p)
    p.add_argument("--method", required=True, help="name for the eval/ subdirectory")
    p.add_argument("--qa", type=Path, default=None)
    p.add_argument("--caption", type=Path, default=None)
    p.add_argument("--runs", type=int, default=3)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render report tables and the accuracy figure")
    _add_common(p, workspace=False)
    p.add_argument("--eval-dir", required=True, type=Path)
    p.add_argument("--plot", type=Path, default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("fixtures", help="fixture store maintenance")
    fixtures_sub = p.add_subparsers(dest="fixtures_command", required=True)
    v = fixtures_sub.add_parser("verify", help="recompute and check fixture digests")
    _add_common(v, workspace=False)
    v.set_defaults(func=cmd_fixtures_verify)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        return args.func(args, cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except FixtureMissingError as err:
        print(f"replay failure: {err}", file=sys.stderr)
        return 1
    except GlaveError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
