"""Frame ingestion, shot-boundary detection, and keyframe selection.

The engine never links a media decoder: a video enters as a directory of
numbered PNG frames plus a `frames.json` manifest (an external decoder can
be used to produce that layout). Shot cuts come from a content detector
over per-frame HSL channel statistics; keyframes are picked by embedding
drift against the last selected frame, with a maximum-gap guard so long
static stretches stay covered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, DimensionError, EmptyInputError, WorkspaceError
from .raster import RasterRef, load_image

DEFAULT_SHOT_THRESHOLD = 27.0
DEFAULT_MIN_SHOT_LEN = 15
DEFAULT_SIMILARITY_THRESHOLD = 0.85
KEYFRAME_GAP_SECONDS = 2.0


@dataclass(frozen=True)
class FrameRecord:
    index: int
    timestamp: float
    image: RasterRef
    width: int = 0
    height: int = 0


@dataclass(frozen=True)
class ShotList:
    """Frame indices where a new shot begins; always starts with 0."""

    cuts: tuple[int, ...]

    def __post_init__(self):
        if not self.cuts or self.cuts[0] != 0:
            raise ValueError("cut list must start with frame 0")
        if list(self.cuts) != sorted(set(self.cuts)):
            raise ValueError("cuts must be sorted and unique")

    def to_json(self) -> dict:
        return {"cuts": list(self.cuts)}

    @classmethod
    def from_json(cls, doc: dict) -> "ShotList":
        return cls(cuts=tuple(int(c) for c in doc["cuts"]))


@dataclass(frozen=True)
class Keyframe:
    frame_index: int
    image: RasterRef
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.embedding is not None:
            norm = float(np.linalg.norm(self.embedding))
            if abs(norm - 1.0) > 1e-4:
                raise ValueError(f"embedding norm {norm} not unit")


def frame_channel_stats(image: RasterRef) -> tuple[float, float, float]:
    """Mean hue, saturation, and lightness of an RGB frame, each scaled to
    [0, 255] after HSL conversion."""
    rgb = load_image(image)
    if rgb.size == 0:
        raise DegenerateInputError("zero-area image")
    rgb = rgb.astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]

    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    lum = (maxc + minc) / 2.0
    delta = maxc - minc
    chromatic = delta > 0

    sat = np.zeros_like(lum)
    lo = chromatic & (lum <= 0.5)
    hi = chromatic & (lum > 0.5)
    sat[lo] = delta[lo] / (maxc[lo] + minc[lo])
    sat[hi] = delta[hi] / (2.0 - maxc[hi] - minc[hi])

    hue = np.zeros_like(lum)
    with np.errstate(invalid="ignore", divide="ignore"):
        rc = np.where(chromatic, (maxc - r) / np.where(delta == 0, 1, delta), 0.0)
        gc = np.where(chromatic, (maxc - g) / np.where(delta == 0, 1, delta), 0.0)
        bc = np.where(chromatic, (maxc - b) / np.where(delta == 0, 1, delta), 0.0)
    hue = np.where(maxc == r, bc - gc, hue)
    hue = np.where((maxc == g) & (g != r), 2.0 + rc - bc, hue)
    hue = np.where((maxc == b) & (b != r) & (b != g), 4.0 + gc - rc, hue)
    hue = np.where(chromatic, (hue / 6.0) % 1.0, 0.0)

    return (
        float(hue.mean() * 255.0),
        float(sat.mean() * 255.0),
        float(lum.mean() * 255.0),
    )


def detect_shots(
    frames: Sequence[FrameRecord],
    threshold: float = DEFAULT_SHOT_THRESHOLD,
    min_shot_len: int = DEFAULT_MIN_SHOT_LEN,
) -> ShotList:
    """Cut where the mean absolute per-channel stat delta between adjacent
    frames exceeds `threshold`, provided the previous cut lies at least
    `min_shot_len` frames back."""
    if not frames:
        raise EmptyInputError("no frames")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if min_shot_len < 1:
        raise ValueError("min_shot_len must be >= 1")

    stats = np.array([frame_channel_stats(f.image) for f in frames])
    cuts = [0]
    last_cut = 0
    for i in range(1, len(frames)):
        delta = float(np.mean(np.abs(stats[i] - stats[i - 1])))
        if delta > threshold and i - last_cut >= min_shot_len:
            cuts.append(i)
            last_cut = i
    return ShotList(cuts=tuple(cuts))


def select_keyframes(
    embeddings: Sequence[np.ndarray],
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    max_gap: int = 8,
) -> list[int]:
    """Pick frame positions whose embedding drifted away from the last pick.

    Position 0 is always selected; position i is selected when its cosine
    similarity to the last selected embedding drops below the threshold, or
    when the gap since the last pick reaches `max_gap`.
    """
    if len(embeddings) == 0:
        raise EmptyInputError("no embeddings")
    if max_gap < 1:
        raise ValueError("max_gap must be >= 1")
    dim = len(embeddings[0])
    for e in embeddings:
        if len(e) != dim:
            raise DimensionError(f"embedding dims disagree: {len(e)} vs {dim}")

    selected = [0]
    last = 0
    for i in range(1, len(embeddings)):
        cos = float(np.dot(embeddings[i], embeddings[last]))
        if cos < similarity_threshold or i - last == max_gap:
            selected.append(i)
            last = i
    return selected


def default_max_gap(frames: Sequence[FrameRecord]) -> int:
    """Gap guard sized to ~2 seconds of sampled frames; 8 when timestamps
    are degenerate."""
    if len(frames) >= 2:
        span = frames[-1].timestamp - frames[0].timestamp
        if span > 0:
            fps = (len(frames) - 1) / span
            return max(1, round(KEYFRAME_GAP_SECONDS * fps))
    return 8


# --- workspace layout -------------------------------------------------------

def frame_path(frames_dir: Path, index: int) -> Path:
    return Path(frames_dir) / f"{index:06d}.png"


def write_frame_manifest(path: Path, frames: Sequence[FrameRecord]) -> None:
    doc = [
        {"index": f.index, "timestamp": f.timestamp, "width": f.width, "height": f.height}
        for f in frames
    ]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_frame_manifest(workspace: Path) -> list[FrameRecord]:
    """Read `frames.json` and bind each record to its PNG under `frames/`."""
    manifest = Path(workspace) / "frames.json"
    if not manifest.exists():
        raise WorkspaceError(f"missing frame manifest {manifest}")
    docs = json.loads(manifest.read_text())
    frames = []
    prev_index, prev_ts = -1, -1.0
    for doc in docs:
        index, ts = int(doc["index"]), float(doc["timestamp"])
        if index <= prev_index:
            raise WorkspaceError("frame indices must be strictly increasing")
        if ts < prev_ts:
            raise WorkspaceError("timestamps must be non-decreasing")
        if int(doc["width"]) <= 0 or int(doc["height"]) <= 0:
            raise WorkspaceError("frame dimensions must be positive")
        prev_index, prev_ts = index, ts
        frames.append(
            FrameRecord(
                index=index,
                timestamp=ts,
                image=frame_path(Path(workspace) / "frames", index),
                width=int(doc["width"]),
                height=int(doc["height"]),
            )
        )
    return frames


def save_shots(path: Path, shots: ShotList) -> None:
    Path(path).write_text(json.dumps(shots.to_json()) + "\n")


def load_shots(path: Path) -> ShotList:
    return ShotList.from_json(json.loads(Path(path).read_text()))


def save_keyframes(path: Path, frame_indices: Sequence[int], embedding_dim: int) -> None:
    doc = {"indices": list(frame_indices), "embedding_dim": embedding_dim}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_keyframes(path: Path) -> tuple[list[int], int]:
    doc = json.loads(Path(path).read_text())
    return [int(i) for i in doc["indices"]], int(doc["embedding_dim"])


def load_embedding_fixture(path: Path) -> list[np.ndarray]:
    """Replay-mode embeddings: `embeddings.json` holds one unit vector per
    manifest frame, in manifest order."""
    doc = json.loads(Path(path).read_text())
    dim = int(doc["dim"])
    vectors = [np.asarray(v, dtype=np.float64) for v in doc["vectors"]]
    for v in vectors:
        if v.shape != (dim,):
            raise WorkspaceError("embedding fixture dimension mismatch")
    return vectors
