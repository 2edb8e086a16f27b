"""PNG-backed raster IO. Images are (H, W, 3) uint8 RGB arrays everywhere;
writes go through one code path so repeated renders stay byte-identical."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

RasterRef = Union[np.ndarray, Path, str]


def load_image(ref: RasterRef) -> np.ndarray:
    if isinstance(ref, np.ndarray):
        return ref
    with Image.open(ref) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image), mode="RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def save_image(path: Path, image: np.ndarray) -> None:
    Path(path).write_bytes(png_bytes(image))


def bounded_resize(image: np.ndarray, max_side: int) -> np.ndarray:
    """Downscale so the long side is <= max_side; never upscales."""
    h, w = image.shape[:2]
    long_side = max(h, w)
    if long_side <= max_side:
        return image
    scale = max_side / long_side
    new_w, new_h = max(1, round(w * scale)), max(1, round(h * scale))
    im = Image.fromarray(image, mode="RGB").resize((new_w, new_h), Image.BILINEAR)
    return np.asarray(im, dtype=np.uint8)
