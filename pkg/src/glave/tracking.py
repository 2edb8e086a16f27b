"""Cross-keyframe object identity by box-overlap association.

Detections arrive per keyframe (from the expert detector or from fixture
files) and are bound to stable numeric track ids: a detection inherits the
id of the best-overlapping live track when the overlap is significant,
otherwise it opens a fresh track. Ids are never reused. The module also
carries the run-length mask codec used on the wire and renders the textual
object listing that accompanies each keyframe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box ({self.x1},{self.y1},{self.x2},{self.y2})")

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class MaskRLE:
    """Run-length encoded binary mask, row-major, runs alternating
    background/foreground and starting with background (first run may be 0)."""

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if sum(self.runs) != self.width * self.height:
            raise ValueError("run lengths must sum to width*height")

    @classmethod
    def encode(cls, mask: np.ndarray) -> "MaskRLE":
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        flat = mask.reshape(-1)
        if flat.size == 0:
            return cls(width=mask.shape[1], height=mask.shape[0], runs=(0,))
        # run boundaries where the value flips
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        edges = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(edges).tolist()
        if flat[0]:  # first run must be background
            runs = [0] + runs
        return cls(width=mask.shape[1], height=mask.shape[0], runs=tuple(runs))

    def decode(self) -> np.ndarray:
        values = np.zeros(len(self.runs), dtype=bool)
        values[1::2] = True
        flat = np.repeat(values, self.runs)
        return flat.reshape(self.height, self.width)

    def to_json(self) -> dict:
        return {"w": self.width, "h": self.height, "runs": list(self.runs)}

    @classmethod
    def from_json(cls, doc: dict) -> "MaskRLE":
        return cls(width=int(doc["w"]), height=int(doc["h"]), runs=tuple(int(r) for r in doc["runs"]))


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    label: str
    score: float
    mask: Optional[MaskRLE] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0,1]")

    def to_json(self) -> dict:
        doc = {"box": self.box.as_list(), "label": self.label, "score": self.score}
        if self.mask is not None:
            doc["mask_rle"] = self.mask.to_json()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Detection":
        mask = MaskRLE.from_json(doc["mask_rle"]) if doc.get("mask_rle") else None
        return cls(
            box=BoundingBox(*(int(v) for v in doc["box"])),
            label=str(doc["label"]),
            score=float(doc["score"]),
            mask=mask,
        )


@dataclass(frozen=True)
class TrackedObject:
    track_id: int
    detection: Detection
    keyframe_index: int


@dataclass
class _LiveTrack:
    detection: Detection
    last_keyframe: int


@dataclass
class TrackTable:
    """Mutable association state for one video. Single owner; calls must
    follow keyframe order."""

    max_stale: int = 3
    next_id: int = 1
    live: dict[int, _LiveTrack] = field(default_factory=dict)
    last_keyframe: int = 0

    def _issue_id(self) -> int:
        tid = self.next_id
        self.next_id += 1
        return tid


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def assign_ids(
    detections: list[Detection],
    table: TrackTable,
    overlap_threshold: float = 0.5,
    keyframe_index: Optional[int] = None,
) -> tuple[list[TrackedObject], TrackTable]:
    """Bind one keyframe's detections to track ids.

    Greedy matching in descending IoU order between detections and live
    tracks; a pair with IoU >= overlap_threshold inherits the track id and
    each live track is consumed at most once. Unmatched detections get fresh
    ids in detection order. Ties break on lower track id, then lower
    detection index, so replay runs are reproducible.
    """
    if not 0.0 < overlap_threshold < 1.0:
        raise ValueError(f"overlap_threshold {overlap_threshold} outside (0,1)")
    kf = table.last_keyframe + 1 if keyframe_index is None else keyframe_index
    table.last_keyframe = kf

    pairs = []
    for det_idx, det in enumerate(detections):
        for tid, track in table.live.items():
            score = iou(det.box, track.detection.box)
            if score >= overlap_threshold:
                pairs.append((score, tid, det_idx))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))

    matched_ids: dict[int, int] = {}  # det_idx -> track_id
    used_tracks: set[int] = set()
    for score, tid, det_idx in pairs:
        if tid in used_tracks or det_idx in matched_ids:
            continue
        matched_ids[det_idx] = tid
        used_tracks.add(tid)

    tracked: list[TrackedObject] = []
    for det_idx, det in enumerate(detections):
        tid = matched_ids.get(det_idx)
        if tid is None:
            tid = table._issue_id()
        table.live[tid] = _LiveTrack(detection=det, last_keyframe=kf)
        tracked.append(TrackedObject(track_id=tid, detection=det, keyframe_index=kf))

    # Retire long-unmatched tracks; their ids stay reserved via next_id.
    stale = [tid for tid, tr in table.live.items() if kf - tr.last_keyframe > table.max_stale]
    for tid in stale:
        del table.live[tid]

    return tracked, table


def build_supplementary_text(objects: list[TrackedObject]) -> str:
    """One line per object, ascending id: `#<id> <label> @ [x1,y1,x2,y2] conf=<score>`."""
    lines = []
    for obj in sorted(objects, key=lambda o: o.track_id):
        b = obj.detection.box
        lines.append(
            f"#{obj.track_id} {obj.detection.label} @ [{b.x1},{b.y1},{b.x2},{b.y2}] "
            f"conf={obj.detection.score:.2f}"
        )
    return "\n".join(lines)


def load_detections(path: Path) -> list[Detection]:
    """Read one keyframe's detections from its `detections/{kf:06}.json` file."""
    docs = json.loads(Path(path).read_text())
    return [Detection.from_json(doc) for doc in docs]


def save_tracks(path: Path, per_keyframe: dict[int, list[TrackedObject]]) -> None:
    """Write `tracks.json` keyed by keyframe index."""
    doc = {
        str(kf): [
            {"track_id": o.track_id, **o.detection.to_json()}
            for o in objs
        ]
        for kf, objs in sorted(per_keyframe.items())
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_tracks(path: Path) -> dict[int, list[TrackedObject]]:
    doc = json.loads(Path(path).read_text())
    out: dict[int, list[TrackedObject]] = {}
    for kf_str, objs in doc.items():
        kf = int(kf_str)
        out[kf] = [
            TrackedObject(
                track_id=int(o["track_id"]),
                detection=Detection.from_json(o),
                keyframe_index=kf,
            )
            for o in objs
        ]
    return out
