"""Set-of-Mark rendering: high-contrast object boundaries plus numeric ID
labels burned into keyframe rasters.

Everything is painted with numpy so output bytes depend only on the input
raster, the object list, and the palette. Digit glyphs come from a fixed
bitmap font defined below; host fonts are never touched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import GeometryError
from .raster import RasterRef, load_image
from .tracking import TrackedObject

# 12 high-contrast colors, cycled by track id.
MARK_PALETTE: tuple[tuple[int, int, int], ...] = (
    (230, 25, 75),    # red
    (60, 180, 75),    # green
    (255, 225, 25),   # yellow
    (0, 130, 200),    # blue
    (245, 130, 48),   # orange
    (145, 30, 180),   # purple
    (70, 240, 240),   # cyan
    (240, 50, 230),   # magenta
    (210, 245, 60),   # lime
    (250, 190, 212),  # pink
    (0, 128, 128),    # teal
    (255, 250, 200),  # cream
)

OUTLINE_COLOR = (20, 20, 20)
LABEL_TEXT_COLOR = (255, 255, 255)
STROKE_WIDTH = 3
GLYPH_SCALE = 2

# 5x7 bitmap digits; '1' marks an inked pixel.
_DIGITS = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}
_GLYPH_W = 5 * GLYPH_SCALE
_GLYPH_H = 7 * GLYPH_SCALE
_GLYPH_PAD = GLYPH_SCALE


@dataclass(frozen=True)
class MarkEntry:
    track_id: int
    anchor: tuple[int, int]
    color: tuple[int, int, int]
    label_box: tuple[int, int, int, int]
    nudged: bool = False

    def to_json(self) -> dict:
        return {
            "track_id": self.track_id,
            "anchor": list(self.anchor),
            "color": list(self.color),
            "label_box": list(self.label_box),
            "nudged": self.nudged,
        }


@dataclass(frozen=True)
class MarkedKeyframe:
    keyframe_index: int
    image: np.ndarray
    mark_manifest: tuple[MarkEntry, ...] = field(default_factory=tuple)


def mark_color(track_id: int) -> tuple[int, int, int]:
    if track_id < 1:
        raise ValueError("track ids start at 1")
    return MARK_PALETTE[(track_id - 1) % len(MARK_PALETTE)]


def _fill(canvas: np.ndarray, x1: int, y1: int, x2: int, y2: int) -> None:
    h, w = canvas.shape
    canvas[max(0, y1):min(h, y2), max(0, x1):min(w, x2)] = True


def _box_ring(shape: tuple[int, int], box) -> np.ndarray:
    """3 px ring centered on the box edge."""
    ring = np.zeros(shape, dtype=bool)
    _fill(ring, box.x1 - 1, box.y1 - 1, box.x2 + 1, box.y2 + 1)
    hole = np.zeros(shape, dtype=bool)
    _fill(hole, box.x1 + 2, box.y1 + 2, box.x2 - 2, box.y2 - 2)
    return ring & ~hole


def _mask_band(mask: np.ndarray) -> np.ndarray:
    """3 px band centered on the mask boundary."""
    interior = ndimage.binary_erosion(mask, border_value=0)
    boundary = mask & ~interior
    return ndimage.binary_dilation(boundary)


def _label_size(track_id: int) -> tuple[int, int]:
    n = len(str(track_id))
    w = 2 * _GLYPH_PAD + n * _GLYPH_W + (n - 1) * _GLYPH_PAD
    h = 2 * _GLYPH_PAD + _GLYPH_H
    return w, h


def _draw_label(out: np.ndarray, track_id: int, box: tuple[int, int, int, int],
                color: tuple[int, int, int]) -> None:
    x1, y1, x2, y2 = box
    out[y1:y2, x1:x2] = color
    cx = x1 + _GLYPH_PAD
    cy = y1 + _GLYPH_PAD
    for ch in str(track_id):
        rows = _DIGITS[ch]
        for ry, row in enumerate(rows):
            for rx, bit in enumerate(row):
                if bit == "1":
                    ys = cy + ry * GLYPH_SCALE
                    xs = cx + rx * GLYPH_SCALE
                    out[ys:ys + GLYPH_SCALE, xs:xs + GLYPH_SCALE] = LABEL_TEXT_COLOR
        cx += _GLYPH_W + _GLYPH_PAD


def _anchor_for(obj: TrackedObject, shape: tuple[int, int]) -> tuple[int, int]:
    box = obj.detection.box
    det_mask = obj.detection.mask
    if det_mask is not None:
        mask = det_mask.decode()
        ys, xs = np.nonzero(mask)
        if len(xs) > 0:
            cx = int(round(float(xs.mean())))
            cy = int(round(float(ys.mean())))
            # non-convex shapes can put the centroid off the mask; fall back
            inside = 0 <= cy < shape[0] and 0 <= cx < shape[1] and mask[cy, cx]
            if inside and box.x1 <= cx < box.x2 and box.y1 <= cy < box.y2:
                return cx, cy
    return (box.x1 + box.x2) // 2, (box.y1 + box.y2) // 2


def _boxes_overlap(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def render_marks(keyframe_index: int, image: RasterRef,
                 objects: Sequence[TrackedObject]) -> MarkedKeyframe:
    """Stroke each object and place its id, returning a new raster.

    Pixels outside the dilated strokes and label boxes are copied verbatim,
    so a diff against the input confines itself to the marks.
    """
    src = load_image(image)
    out = src.copy()
    h, w = out.shape[:2]

    ordered = sorted(objects, key=lambda o: o.track_id)
    for obj in ordered:
        box = obj.detection.box
        if box.x1 < 0 or box.y1 < 0 or box.x2 > w or box.y2 > h:
            raise GeometryError(
                f"track {obj.track_id} box {box.as_list()} exceeds {w}x{h} frame"
            )

    entries = []
    placed_labels: list[tuple[int, int, int, int]] = []
    for obj in ordered:
        color = mark_color(obj.track_id)
        det_mask = obj.detection.mask
        if det_mask is not None:
            band = _mask_band(det_mask.decode())
        else:
            band = _box_ring((h, w), obj.detection.box)
        halo = ndimage.binary_dilation(band) & ~band
        out[halo] = OUTLINE_COLOR
        out[band] = color

        ax, ay = _anchor_for(obj, (h, w))
        lw, lh = _label_size(obj.track_id)
        lx = min(max(0, ax - lw // 2), w - lw)
        ly = min(max(0, ay - lh // 2), h - lh)
        nudged = False
        while any(_boxes_overlap((lx, ly, lx + lw, ly + lh), p) for p in placed_labels):
            ly += _GLYPH_H
            nudged = True
            if ly + lh > h:
                ly = h - lh
                break
        label_box = (lx, ly, lx + lw, ly + lh)
        placed_labels.append(label_box)
        _draw_label(out, obj.track_id, label_box, color)
        entries.append(
            MarkEntry(track_id=obj.track_id, anchor=(ax, ay), color=color,
                      label_box=label_box, nudged=nudged)
        )

    return MarkedKeyframe(
        keyframe_index=keyframe_index, image=out, mark_manifest=tuple(entries)
    )


# --- workspace layout -------------------------------------------------------

def marked_image_path(marked_dir: Path, keyframe_ordinal: int) -> Path:
    return Path(marked_dir) / f"{keyframe_ordinal:06d}.png"


def save_marks(path: Path, marked: Sequence[MarkedKeyframe]) -> None:
    doc = {
        str(m.keyframe_index): [e.to_json() for e in m.mark_manifest]
        for m in marked
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
