#!/usr/bin/env python3
"""Regenerate the replay corpus under tests/data/corpus/.

Builds a synthetic 45-frame, 3-shot video workspace (5 keyframes, 4 tracked
objects), runs the preprocessing stages for real, then records gateway
fixtures for the caption pipeline (baseline plus every ablation variant),
QA generation, and a 3-run evaluation against a scripted stand-in model.
The script is deterministic: rerunning it reproduces the corpus byte for
byte.
"""

from __future__ import annotations

import argparse
import json
import re
import shutil
import sys
import tempfile
import zlib
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from glave.cli import cmd_keyframes, cmd_mark, cmd_track  # noqa: E402
from glave.config import RunConfig  # noqa: E402
from glave.errors import WorkspaceError  # noqa: E402
from glave.gateway import Gateway  # noqa: E402
from glave.keyframes import FrameRecord, write_frame_manifest  # noqa: E402
from glave.pipeline import PipelineOptions, run_pipeline  # noqa: E402
from glave.qa import build_corpus, save_corpus, load_corpus  # noqa: E402
from glave.evaluation import aggregate_report, run_judge, save_run_verdicts, hints_from_corpus  # noqa: E402
from glave.report import write_report  # noqa: E402
from glave.raster import save_image  # noqa: E402
from glave.tracking import BoundingBox, Detection, MaskRLE  # noqa: E402

CORPUS = REPO / "tests" / "data" / "corpus"
W, H = 96, 72
N_FRAMES = 45
SHOT_STARTS = (0, 15, 30)
SHOT_COLORS = ((40, 40, 200), (200, 40, 40), (40, 200, 40))
KEYFRAME_POSITIONS = (0, 7, 20, 32, 40)

# (first_kf, last_kf, label, color, score, base_box, drift_px_per_frame)
OBJECTS = (
    (1, 2, "cart", (250, 220, 30), 0.92, (10, 30, 22, 40), 0.1),
    (3, 3, "ball", (240, 240, 240), 0.88, (30, 20, 40, 30), 0.0),
    (3, 3, "cone", (250, 120, 20), 0.74, (60, 40, 68, 48), 0.0),
    (4, 5, "block", (25, 25, 25), 0.95, (48, 30, 62, 42), 0.125),
)


def object_box(base, drift, frame):
    dx = int(drift * frame)
    x1, y1, x2, y2 = base
    return BoundingBox(x1 + dx, y1, x2 + dx, y2)


def shot_of(frame: int) -> int:
    return sum(1 for s in SHOT_STARTS if frame >= s) - 1


def draw_frame(frame: int) -> np.ndarray:
    img = np.zeros((H, W, 3), np.uint8)
    img[:, :] = SHOT_COLORS[shot_of(frame)]
    kf_of_frame = {f: k for k, f in enumerate(KEYFRAME_POSITIONS, start=1)}
    for first, last, _label, color, _score, base, drift in OBJECTS:
        first_frame = KEYFRAME_POSITIONS[first - 1]
        last_frame = KEYFRAME_POSITIONS[last - 1]
        shot_lo = SHOT_STARTS[shot_of(first_frame)]
        shot_hi = (SHOT_STARTS + (N_FRAMES,))[shot_of(last_frame) + 1]
        if shot_lo <= frame < shot_hi:
            box = object_box(base, drift, frame)
            img[box.y1:box.y2, box.x1:box.x2] = color
    del kf_of_frame
    return img


def object_mask(box: BoundingBox, notch: bool) -> MaskRLE:
    mask = np.zeros((H, W), bool)
    mask[box.y1:box.y2, box.x1:box.x2] = True
    if notch:  # an L-shape, so one mask is not a plain rectangle
        mask[box.y1:box.y1 + 4, box.x2 - 4:box.x2] = False
    return MaskRLE.encode(mask)


def build_workspace(ws: Path) -> None:
    frames_dir = ws / "frames"
    frames_dir.mkdir(parents=True)
    records = []
    for f in range(N_FRAMES):
        save_image(frames_dir / f"{f:06d}.png", draw_frame(f))
        records.append(FrameRecord(index=f, timestamp=round(f * 0.1, 3),
                                   image=frames_dir / f"{f:06d}.png",
                                   width=W, height=H))
    write_frame_manifest(ws / "frames.json", records)

    # unit embeddings that drift exactly at the intended keyframe positions
    basis = np.eye(8)
    vectors = []
    level = 0
    for f in range(N_FRAMES):
        if f in KEYFRAME_POSITIONS[1:]:
            level += 1
        vectors.append(basis[level].tolist())
    (ws / "embeddings.json").write_text(
        json.dumps({"dim": 8, "vectors": vectors}) + "\n"
    )

    det_dir = ws / "detections"
    det_dir.mkdir()
    for ordinal, frame in enumerate(KEYFRAME_POSITIONS, start=1):
        dets = []
        for first, last, label, _color, score, base, drift in OBJECTS:
            if first <= ordinal <= last:
                box = object_box(base, drift, frame)
                dets.append(Detection(
                    box=box, label=label, score=score,
                    mask=object_mask(box, notch=(label == "block")),
                ))
        (det_dir / f"{ordinal:06d}.json").write_text(
            json.dumps([d.to_json() for d in dets], indent=1) + "\n"
        )


# --- scripted model ------------------------------------------------------------

OVERVIEW_REPLY = json.dumps({
    "sentences": [
        {"text": "A yellow toy cart sits in a blue room.", "range": [1, 2]},
        {"text": "A white ball and an orange cone rest in a red room.", "range": [3, 3]},
        {"text": "A dark block slides through a green room.", "range": [4, 5]},
    ]
})

SCENE_TEXTS = {
    (1, 2): ("In a blue room, a yellow toy cart #1 sits near the left wall "
             "and drifts slightly to the right."),
    (3, 5): ("The video then moves to a red room where a white ball #2 and an "
             "orange cone #3 rest in place, and finally to a green room where "
             "a dark block #4 slides steadily to the right."),
    (1, 5): ("A yellow toy cart drifts through a blue room, a white ball and "
             "an orange cone rest in a red room, and a dark block slides "
             "through a green room."),
}

SCENE1_QA = json.dumps({"pairs": [
    {"qtype": "Object appearance", "question": "What color is the cart?",
     "answer": "Yellow"},
    {"qtype": "Object count", "question": "How many carts are visible?",
     "answer": "One"},
    {"qtype": "Scene setting", "question": "What color is the room?",
     "answer": "Blue"},
    {"qtype": "Object appearance", "question": "What shape is the cart?",
     "answer": "Rectangular"},
    {"qtype": "Trick question", "question": "Is this type registered?",
     "answer": "No"},
]})

SCENE2_QA = json.dumps({"pairs": [
    {"qtype": "Object count", "question": "How many objects rest in the red room?",
     "answer": "Two"},
    {"qtype": "Object action",
     "question": "What do the ball and the block do in these scenes?",
     "answer": "The ball rests while the block slides"},
    {"qtype": "Scene setting", "question": "Which room appears last?",
     "answer": "The green room"},
]})

GLOBAL_QA = json.dumps({"pairs": [
    {"qtype": "Video theme", "question": "What is the overall theme of the video?",
     "answer": "Simple objects shown in colored rooms"},
    {"qtype": "Global action sequence", "question": "In what order do the rooms appear?",
     "answer": "Blue, red, then green"},
    {"qtype": "Plot understanding", "question": "Why does the setting change?",
     "answer": "To present a different object"},
    {"qtype": "Global appearance", "question": "How many rooms appear in total?",
     "answer": "Three"},
    {"qtype": "Mystery", "question": "Unregistered type?", "answer": "Yes"},
]})

HINTS_REPLY = json.dumps({"hints": [
    "A cart occupies a blue room.",
    "A ball, a cone, and a block take turns on screen.",
]})


def _ids_in(text: str) -> list[str]:
    return sorted(set(re.findall(r"#\d+", text)), key=lambda t: int(t[1:]))


def scripted_reply(prompt: str) -> str:
    ids = _ids_in(prompt)
    id_clause = " involving " + " and ".join(ids) if ids else ""

    if prompt.startswith("You are watching"):
        return OVERVIEW_REPLY
    if prompt.startswith("You see two adjacent"):
        a, b = re.search(r"keyframe (\d+) followed by\s*keyframe (\d+)", prompt).groups()
        return (f"Between keyframe {a} and keyframe {b} the scene advances "
                f"slightly{id_clause}.")
    if prompt.startswith("You are looking at keyframe"):
        k = re.search(r"keyframe (\d+)", prompt).group(1)
        return (f"Keyframe {k} shows a vividly colored room with simple "
                f"geometric props{id_clause}.")
    if prompt.startswith(("Two captions describe", "One caption describes")):
        kfs = re.findall(r"[Kk]eyframe (\d+)", prompt)
        k = kfs[0] if kfs else "?"
        return (f"At keyframe {k}, a colored room holds simple geometric "
                f"props{id_clause}, with only slight motion.")
    if prompt.startswith("A video was divided into consecutive shot segments"):
        return json.dumps({"scenes": [[1, 2], [3, 5]]})
    if prompt.startswith(("You are writing the first scene",
                          "You are writing the caption for scene")):
        st, ed = map(int, re.search(r"keyframes\s*(\d+) through (\d+)", prompt).groups())
        return SCENE_TEXTS.get((st, ed), f"Scene covering keyframes {st} to {ed}.")
    if prompt.startswith("Generate question-answer pairs about ONE scene"):
        return SCENE1_QA if "toy cart #1" in prompt else SCENE2_QA
    if prompt.startswith("Generate question-answer pairs about a whole video"):
        return GLOBAL_QA
    if prompt.startswith("Refine these question-answer pairs"):
        return refine_reply(prompt)
    if prompt.startswith("Write three distractor answers"):
        answer = re.search(r"Correct answer: (.*)", prompt).group(1).strip()
        return json.dumps({"distractors": [
            f"Not {answer.lower()}", f"{answer} at first only",
            f"The opposite of {answer.lower()}",
        ]})
    if "scenes with these captions" in prompt.splitlines()[0]:
        return HINTS_REPLY
    if prompt.startswith("Answer a multiple-choice question"):
        return judge_reply(prompt)
    raise AssertionError(f"scripted model got an unexpected prompt:\n{prompt[:200]}")


def refine_reply(prompt: str) -> str:
    block = prompt.split("Input pairs:", 1)[1].split("Reply with ONLY", 1)[0]
    pairs = json.loads(block)
    out = []
    for pair in pairs:
        if " and the block do" in pair["question"]:
            out.append({"source_id": pair["id"],
                        "question": "What does the ball do in the red room?",
                        "answer": "It rests in place"})
            out.append({"source_id": pair["id"],
                        "question": "What does the block do in the green room?",
                        "answer": "It slides to the right"})
        else:
            out.append({"source_id": pair["id"],
                        "question": pair["question"],
                        "answer": pair["answer"]})
    return json.dumps({"pairs": out})


def judge_reply(prompt: str) -> str:
    question = re.search(r"Question: (.*)", prompt).group(1).strip()
    digest = zlib.crc32(question.encode("utf-8"))
    letter = "ABCDEE"[digest % 6]
    if digest % 2:
        return json.dumps({"answer": letter})
    return f"{letter}. (derived from the caption)"


class ScriptedGateway(Gateway):
    def _send(self, request):
        return scripted_reply(request.prompt_text()), {}


# --- recording ------------------------------------------------------------------

ABLATIONS = {
    "baseline": {},
    "no_visual_prompt": {"visual_prompt": False},
    "no_overview": {"overview_caption": False},
    "no_dual_stream": {"dual_stream": False},
    "no_adaptive_split": {"adaptive_scene_split": False},
}


def record_fixtures(workspace: Path, fixtures: Path) -> None:
    cfg = RunConfig(transport="record", fixtures_dir=str(fixtures))
    for name, switches in ABLATIONS.items():
        with tempfile.TemporaryDirectory() as scratch:
            ws = Path(scratch) / "ws"
            shutil.copytree(workspace, ws)
            opts = PipelineOptions(**switches)
            gateway = ScriptedGateway(cfg.gateway_config())
            result = run_pipeline(ws, gateway, opts)
            print(f"  {name}: scenes {result.segmentation.scenes}")
            if name == "baseline":
                corpus = build_corpus(gateway, opts, "toyvideo",
                                      result.scene_captions, result.video.text,
                                      base_seed=0)
                save_corpus(ws / "qa.jsonl", "toyvideo", corpus)
                entries = load_corpus(ws / "qa.jsonl")
                hints = hints_from_corpus(entries)
                records = run_judge(gateway, opts, result.video.text, entries,
                                    hints, runs=3)
                eval_dir = ws / "eval" / "pipeline"
                eval_dir.mkdir(parents=True)
                for run in range(3):
                    save_run_verdicts(eval_dir / f"run{run + 1}.jsonl", records, run)
                write_report(eval_dir, aggregate_report(records), plot=False)
                print(f"  baseline: {len(corpus)} QA items, "
                      f"{len(records)} judged")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=CORPUS)
    args = parser.parse_args()

    out = args.out
    if out.exists():
        shutil.rmtree(out)
    workspace = out / "workspace"
    fixtures = out / "fixtures"
    fixtures.mkdir(parents=True)

    print("building synthetic workspace ...")
    build_workspace(workspace)

    cfg = RunConfig()
    ns = argparse.Namespace(workspace=workspace)
    cmd_keyframes(ns, cfg)
    cmd_track(ns, cfg)
    cmd_mark(ns, cfg)

    shots = json.loads((workspace / "shots.json").read_text())["cuts"]
    kf = json.loads((workspace / "keyframes.json").read_text())["indices"]
    if tuple(shots) != SHOT_STARTS:
        raise WorkspaceError(f"unexpected cuts {shots}")
    if tuple(kf) != KEYFRAME_POSITIONS:
        raise WorkspaceError(f"unexpected keyframes {kf}")

    print("recording fixtures ...")
    record_fixtures(workspace, fixtures)
    print(f"corpus ready: {len(list(fixtures.glob('*.json')))} fixtures")
    return 0


if __name__ == "__main__":
    sys.exit(main())
